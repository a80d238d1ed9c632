"""Seedable randomness for privacy noise and lattice sampling.

Production draws must be unpredictable, so the default generator is a
SHAKE-256 counter-mode DRBG (a cryptographic XOF keyed with fresh OS
entropy).  Tests seed it explicitly or monkeypatch the module-level
sampling hooks to get deterministic behaviour.
"""

from __future__ import annotations

import hashlib
import math
import os

import numpy as np

_BLOCK_BYTES = 1 << 20  # refill granularity


class Rng:
    """SHAKE-256 counter-mode deterministic random bit generator.

    Args:
        seed: bytes or int seeding the keystream; ``None`` pulls 32 bytes
            of OS entropy (the production default).
    """

    def __init__(self, seed: bytes | int | None = None):
        if seed is None:
            seed = os.urandom(32)
        elif isinstance(seed, int):
            seed = seed.to_bytes(16, "little", signed=False)
        self._seed = bytes(seed)
        self._counter = 0
        self._buf = b""
        self._pos = 0

    def _refill(self, nbytes: int):
        nbytes = max(nbytes, _BLOCK_BYTES)
        block = self._seed + self._counter.to_bytes(8, "little")
        self._buf = hashlib.shake_256(block).digest(nbytes)
        self._counter += 1
        self._pos = 0

    def take_bytes(self, n: int) -> bytes:
        """Return the next ``n`` keystream bytes."""
        if self._pos + n > len(self._buf):
            self._refill(n)
        out = self._buf[self._pos : self._pos + n]
        self._pos += n
        return out

    def spawn(self) -> "Rng":
        """Derive an independent child generator."""
        return Rng(self.take_bytes(32))

    def u64(self, count: int) -> np.ndarray:
        """Uniform uint64 array of length ``count``."""
        raw = self.take_bytes(8 * count)
        return np.frombuffer(raw, dtype="<u8").copy()

    def uniform(self, count: int) -> np.ndarray:
        """Uniform float64 in (0, 1], 53-bit resolution.

        The open-at-zero convention keeps log() finite for inversion
        sampling.
        """
        bits = self.u64(count) >> np.uint64(11)
        return (bits.astype(np.float64) + 1.0) * (2.0**-53)

    def integers(self, upper: int, count: int) -> np.ndarray:
        """Exact uniform integers in [0, upper) via rejection sampling."""
        if upper <= 0:
            raise ValueError("upper must be positive")
        limit = (1 << 64) - ((1 << 64) % upper)
        out = self.u64(count)
        if limit < (1 << 64):
            bad = out >= np.uint64(limit)
            while bad.any():
                out[bad] = self.u64(int(bad.sum()))
                bad = out >= np.uint64(limit)
        if upper <= 1 << 63:
            return out % np.uint64(upper)
        return np.array([int(v) % upper for v in out], dtype=np.uint64)

    def gauss_ints(self, sigma: float, count: int) -> np.ndarray:
        """Rounded centred Gaussian integers (int64)."""
        pairs = (count + 1) // 2
        u1 = self.uniform(pairs)
        u2 = self.uniform(pairs)
        radius = np.sqrt(-2.0 * np.log(u1)) * sigma
        theta = 2.0 * math.pi * u2
        samples = np.concatenate([radius * np.cos(theta), radius * np.sin(theta)])
        return np.rint(samples[:count]).astype(np.int64)

    def ternary(self, count: int) -> np.ndarray:
        """Uniform values in {-1, 0, 1} (int64)."""
        return self.integers(3, count).astype(np.int64) - 1

    def geometric0(self, rho: float, count: int) -> np.ndarray:
        """Geometric on {0, 1, 2, ...} with P[X = k] = (1 - rho) * rho**k.

        Inversion of the exact survival function P[X >= k] = rho**k.
        """
        if not 0.0 < rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        u = self.uniform(count)
        return np.floor(np.log(u) / math.log(rho)).astype(np.int64)
