"""Sorted public key-value data: byte layout, synthetic corpora, SOSD ingestion.

Every pair is a fixed-width record of 8 key bytes followed by
``value_bytes`` value bytes, sorted ascending by key with no duplicates.
The all-ones key is reserved as a padding sentinel, so real keys must stay
below 2**64 - 1.
"""

from __future__ import annotations

import hashlib
import struct
import threading
from dataclasses import dataclass, field

import numpy as np

from .rng import Rng

KEY_SENTINEL = (1 << 64) - 1
KEY_BYTES = 8


class DuplicateExhaustionError(RuntimeError):
    """The requested distribution cannot yield enough unique keys."""


class MalformedDatasetError(ValueError):
    """An on-disk dataset file violates the SOSD layout."""


class KeyNotFoundError(KeyError):
    """An update referenced a key absent from the active version."""


def derive_value(key: int, value_bytes: int) -> bytes:
    """Deterministic value for a key: key bytes, then keyed hash bytes."""
    head = int(key).to_bytes(KEY_BYTES, "little")
    if value_bytes == KEY_BYTES:
        return head
    tail = hashlib.blake2b(head, digest_size=value_bytes - KEY_BYTES).digest()
    return head + tail


def derive_values(keys: np.ndarray, value_bytes: int) -> np.ndarray:
    """Vectorised :func:`derive_value` over a key array -> (n, value_bytes)."""
    n = len(keys)
    out = np.empty((n, value_bytes), dtype=np.uint8)
    out[:, :KEY_BYTES] = keys.astype("<u8").view(np.uint8).reshape(n, KEY_BYTES)
    if value_bytes > KEY_BYTES:
        head = out[:, :KEY_BYTES].tobytes()
        digest = value_bytes - KEY_BYTES
        for i in range(n):
            out[i, KEY_BYTES:] = np.frombuffer(
                hashlib.blake2b(head[i * 8 : i * 8 + 8], digest_size=digest).digest(),
                dtype=np.uint8,
            )
    return out


@dataclass
class KvStore:
    """Sorted array of fixed-width key-value pairs.

    Invariants: ``keys`` strictly increasing uint64 below the sentinel,
    ``values`` shaped (n, value_bytes), and n >= 1 for a servable store.
    """

    keys: np.ndarray
    values: np.ndarray
    version_id: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        self.keys = np.ascontiguousarray(self.keys, dtype=np.uint64)
        self.values = np.ascontiguousarray(self.values, dtype=np.uint8)
        if self.keys.ndim != 1 or self.values.ndim != 2:
            raise ValueError("keys must be 1-D and values 2-D")
        if len(self.keys) != len(self.values):
            raise ValueError("keys and values length mismatch")
        if len(self.keys) < 1:
            raise ValueError("a servable store needs at least one pair")
        if len(self.keys) > 1 and not (self.keys[:-1] < self.keys[1:]).all():
            raise ValueError("keys must be strictly increasing")
        if int(self.keys[-1]) >= KEY_SENTINEL:
            raise ValueError("the all-ones key is reserved as padding sentinel")

    @property
    def n(self) -> int:
        return len(self.keys)

    @property
    def value_bytes(self) -> int:
        return self.values.shape[1]

    @property
    def pair_bytes(self) -> int:
        return KEY_BYTES + self.value_bytes

    @property
    def kv_bits(self) -> int:
        return 8 * self.pair_bytes

    def rank(self, key: int) -> int:
        """Position where ``key`` resides or would be inserted."""
        return int(np.searchsorted(self.keys, np.uint64(key)))

    def lookup(self, key: int) -> bytes | None:
        """Value for ``key`` by binary search, or None when absent."""
        pos = self.rank(key)
        if pos < self.n and int(self.keys[pos]) == int(key):
            with self._lock:
                return self.values[pos].tobytes()
        return None

    def pair_at(self, pos: int) -> tuple[int, bytes]:
        with self._lock:
            return int(self.keys[pos]), self.values[pos].tobytes()

    def slice_pairs(self, lo: int, hi: int) -> bytes:
        """Raw bytes of pairs at positions [lo, hi], key-then-value each."""
        if not 0 <= lo <= hi < self.n:
            raise IndexError(f"slice [{lo}, {hi}] out of range for n={self.n}")
        count = hi - lo + 1
        out = np.empty((count, self.pair_bytes), dtype=np.uint8)
        with self._lock:
            out[:, :KEY_BYTES] = (
                self.keys[lo : hi + 1].astype("<u8").view(np.uint8).reshape(count, KEY_BYTES)
            )
            out[:, KEY_BYTES:] = self.values[lo : hi + 1]
        return out.tobytes()

    def set_value(self, key: int, new_value: bytes) -> int:
        """Overwrite the value of an existing key; returns its position."""
        if len(new_value) != self.value_bytes:
            raise ValueError(f"new value must be {self.value_bytes} bytes")
        pos = self.rank(key)
        if pos >= self.n or int(self.keys[pos]) != int(key):
            raise KeyNotFoundError(key)
        with self._lock:
            self.values[pos] = np.frombuffer(new_value, dtype=np.uint8)
        return pos

    def copy(self, version_id: int | None = None) -> "KvStore":
        return KvStore(
            self.keys.copy(),
            self.values.copy(),
            self.version_id if version_id is None else version_id,
        )


def _draw_keys(distribution: str, count: int, rng: Rng) -> np.ndarray:
    if distribution == "uniform":
        return rng.u64(count)
    if distribution == "normal":
        mu, sigma = 2.0**63, 2.0**59
        u1 = rng.uniform(count)
        u2 = rng.uniform(count)
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        vals = np.clip(mu + sigma * z, 0, KEY_SENTINEL - 1)
        return vals.astype(np.uint64)
    if distribution == "clustered":
        n_clusters = max(4, int(round(count**0.5 // 4)) or 4)
        centers = rng.u64(n_clusters).astype(np.float64)
        pick = rng.integers(n_clusters, count)
        spread = 2.0**64 / n_clusters / 64.0
        u1 = rng.uniform(count)
        u2 = rng.uniform(count)
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        vals = np.clip(centers[pick] + spread * z, 0, KEY_SENTINEL - 1)
        return vals.astype(np.uint64)
    raise ValueError(f"unknown distribution {distribution!r}")


def generate_dataset(
    n: int, distribution: str, value_bytes: int = 8, seed: int = 0
) -> KvStore:
    """Deterministic synthetic store of ``n`` unique sorted keys.

    Args:
        n: pair count, >= 1.
        distribution: one of ``uniform``, ``normal``, ``clustered``.
        value_bytes: value width; >= 8 and a multiple of 8.
        seed: generator seed; equal seeds give byte-identical stores.

    Raises:
        DuplicateExhaustionError: the distribution stopped producing new
            unique keys before reaching ``n``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if value_bytes < 8 or value_bytes % 8 != 0:
        raise ValueError("value_bytes must be >= 8 and a multiple of 8")
    rng = Rng(seed)
    keys = np.unique(_draw_keys(distribution, n, rng))
    keys = keys[keys < KEY_SENTINEL]
    attempts = 0
    while len(keys) < n:
        attempts += 1
        if attempts > 64:
            raise DuplicateExhaustionError(
                f"could not reach {n} unique keys from {distribution!r}"
            )
        extra = _draw_keys(distribution, n - len(keys) + 1024, rng)
        keys = np.unique(np.concatenate([keys, extra[extra < KEY_SENTINEL]]))
    keys = keys[:n]
    return KvStore(keys, derive_values(keys, value_bytes))


def load_sosd(path: str, value_bytes: int = 8) -> KvStore:
    """Load a SOSD key file: little-endian u64 count, then that many u64 keys.

    Duplicate keys are removed and values synthesised from the keys.

    Raises:
        MalformedDatasetError: short read or zero count.
    """
    with open(path, "rb") as fh:
        header = fh.read(8)
        if len(header) != 8:
            raise MalformedDatasetError("missing count header")
        (count,) = struct.unpack("<Q", header)
        if count == 0:
            raise MalformedDatasetError("empty store is unservable")
        body = fh.read(8 * count)
    if len(body) != 8 * count:
        raise MalformedDatasetError(
            f"short read: expected {count} keys, got {len(body) // 8}"
        )
    keys = np.unique(np.frombuffer(body, dtype="<u8"))
    keys = keys[keys < KEY_SENTINEL]
    if len(keys) == 0:
        raise MalformedDatasetError("no usable keys after dedup")
    return KvStore(keys, derive_values(keys, value_bytes))


def write_sosd(path: str, keys: np.ndarray):
    """Write keys in the SOSD layout (test and CLI fixture helper)."""
    arr = np.asarray(keys, dtype="<u8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(arr)))
        fh.write(arr.tobytes())
