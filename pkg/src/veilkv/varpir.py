"""Variable-range private retrieval over homomorphically encoded blocks.

The sorted store is packed into overlapping plaintext blocks: block j
holds the pairs at positions [j*step, j*step + M), so consecutive blocks
share ``overlap_m`` pairs and any predicted window of width
2*eps_data + 1 < overlap_m + 2 fits inside the single block
floor(lo / step).  Each pair is split big-endian into fixed-width limbs,
one ring coefficient per limb.  Limbs are lifted into the ciphertext
field centred around zero, which keeps the answer's accumulated noise
independent of the data mean; the decoder adds the offset back.

A query names the cyclic block range derived from the obfuscated range
plus one encrypted one-hot selector per ring-degree-sized chunk of that
range.  The server obliviously expands the selectors, multiplies every
block in the range by exactly one expanded scalar, and returns the single
accumulated ciphertext.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .dldp import ObfuscatedRange
from .hecore import GaloisKeySet, HeParams, SecretKey
from .hecore import cipher as hc
from .hecore import gold
from .pgm import PredictedRange
from .rng import Rng
from .store import KEY_SENTINEL, KvStore

_EXPAND_LOCK = threading.Lock()  # expansion workspaces are shared


class EncodingError(ValueError):
    """Encoding parameters cannot satisfy the single-block fit condition."""


class StaleVersionError(RuntimeError):
    """Query referenced a version the encoded store no longer serves."""

    def __init__(self, got: int, want: int):
        super().__init__(f"query version {got}, serving {want}")
        self.got = got
        self.want = want


@dataclass(frozen=True)
class EncodingParams:
    """Layout constants tying the store shape to the ring parameters."""

    n: int
    kv_bits: int
    limb_bits: int
    plain_modulus: int
    slots_per_pair: int
    pairs_per_plaintext: int  # M
    overlap_m: int
    step: int
    pt_count: int

    @classmethod
    def derive(
        cls, n: int, kv_bits: int, he: HeParams, eps_data: int
    ) -> "EncodingParams":
        """Compute the layout for a store of ``n`` pairs of ``kv_bits`` bits.

        Raises:
            EncodingError: the predicted window cannot fit one block.
        """
        limb_bits = he.limb_bits
        slots = -(-kv_bits // limb_bits)
        m = he.ring_degree // slots
        if m < 2:
            raise EncodingError("ring too small for even two pairs per block")
        overlap = m // 2
        step = m - overlap
        if not 2 * eps_data + 1 < overlap + 2:
            raise EncodingError(
                f"2*eps_data+1 = {2 * eps_data + 1} must be < overlap+2 = {overlap + 2}"
            )
        pt_count = -(-n // step)
        return cls(
            n, kv_bits, limb_bits, he.plain_modulus, slots, m, overlap, step, pt_count
        )

    def block_of(self, pos: int) -> int:
        """Plaintext ID whose coverage starts at or before ``pos``."""
        return min(pos // self.step, self.pt_count - 1)

    def coverage(self, block: int) -> tuple[int, int]:
        """Half-open position interval [start, end) encoded in ``block``."""
        start = block * self.step
        return start, start + self.pairs_per_plaintext

    def blocks_covering(self, pos: int) -> list[int]:
        """All block IDs whose coverage interval contains ``pos``."""
        first = max(0, -(-(pos - self.pairs_per_plaintext + 1) // self.step))
        last = min(pos // self.step, self.pt_count - 1)
        return [j for j in range(first, last + 1) if j * self.step <= pos]


def pos_to_pt_id(pos: int, params: EncodingParams) -> int:
    """Plaintext ID for a position: min(pos // step, pt_count - 1)."""
    return params.block_of(pos)


# -- limb packing ------------------------------------------------------------


def pair_to_limbs(key: int, value: bytes, params: EncodingParams) -> np.ndarray:
    """Big-endian limb split of one pair, key limbs before value limbs.

    A partial final limb keeps its data bits low-aligned (zero-padded
    high).
    """
    word = int.from_bytes(int(key).to_bytes(8, "big") + value, "big")
    limbs = np.empty(params.slots_per_pair, dtype=np.uint32)
    tail_bits = params.kv_bits - (params.slots_per_pair - 1) * params.limb_bits
    limbs[-1] = word & ((1 << tail_bits) - 1)
    word >>= tail_bits
    mask = (1 << params.limb_bits) - 1
    for j in range(params.slots_per_pair - 2, -1, -1):
        limbs[j] = word & mask
        word >>= params.limb_bits
    return limbs


def limbs_to_pair(limbs: np.ndarray, params: EncodingParams) -> tuple[int, bytes]:
    """Inverse of :func:`pair_to_limbs`."""
    tail_bits = params.kv_bits - (params.slots_per_pair - 1) * params.limb_bits
    word = 0
    for v in limbs[:-1]:
        word = (word << params.limb_bits) | int(v)
    word = (word << tail_bits) | int(limbs[-1])
    blob = word.to_bytes(params.kv_bits // 8, "big")
    return int.from_bytes(blob[:8], "big"), blob[8:]


def _pairs_to_limb_rows(
    keys: np.ndarray, values: np.ndarray, params: EncodingParams
) -> np.ndarray:
    """Vectorised limb split of many pairs -> (count, slots_per_pair)."""
    count = len(keys)
    pair_bytes = params.kv_bits // 8
    raw = np.empty((count, pair_bytes), dtype=np.uint8)
    raw[:, :8] = keys.astype(">u8").view(np.uint8).reshape(count, 8)
    raw[:, 8:] = values
    if params.limb_bits == 8:
        return raw.astype(np.uint32)
    bits = np.unpackbits(raw, axis=1)
    total_bits = params.slots_per_pair * params.limb_bits
    if total_bits > bits.shape[1]:
        pad = np.zeros((count, total_bits - bits.shape[1]), dtype=np.uint8)
        bits = np.concatenate([bits, pad], axis=1)
    bits = bits.reshape(count, params.slots_per_pair, params.limb_bits)
    weights = (1 << np.arange(params.limb_bits - 1, -1, -1)).astype(np.uint32)
    limbs = (bits * weights).sum(axis=2).astype(np.uint32)
    tail_bits = params.kv_bits - (params.slots_per_pair - 1) * params.limb_bits
    limbs[:, -1] >>= params.limb_bits - tail_bits  # keep the tail low-aligned
    return limbs


def _limb_rows_to_pairs(
    rows: np.ndarray, params: EncodingParams
) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`_pairs_to_limb_rows` -> (keys, value matrix)."""
    count = rows.shape[0]
    pair_bytes = params.kv_bits // 8
    if params.limb_bits == 8:
        raw = rows.astype(np.uint8)
    else:
        rows = rows.copy()
        tail_bits = params.kv_bits - (params.slots_per_pair - 1) * params.limb_bits
        rows[:, -1] <<= params.limb_bits - tail_bits
        weights = np.arange(params.limb_bits - 1, -1, -1, dtype=np.uint32)
        bits = ((rows[:, :, None] >> weights[None, None, :]) & 1).astype(np.uint8)
        bits = bits.reshape(count, -1)[:, : pair_bytes * 8]
        raw = np.packbits(bits, axis=1)
    keys = raw[:, :8].copy().view(">u8").reshape(count).astype(np.uint64)
    return keys, raw[:, 8:]


# -- encoded store -----------------------------------------------------------


@dataclass
class EncodedStore:
    """Misaligned homomorphic encoding of one store version.

    ``limbs`` holds the raw limb values per block; ``ntt`` the
    centre-lifted NTT-domain rows the answer path multiplies against.
    """

    params: EncodingParams
    he: HeParams
    limbs: np.ndarray  # (pt_count, ring_degree) uint32
    ntt: np.ndarray  # (pt_count, ring_degree) uint64
    version_id: int
    access_counts: np.ndarray | None = None
    _block_locks: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self._block_locks:
            self._block_locks = [threading.Lock() for _ in range(self.params.pt_count)]

    def block_bytes(self, block: int) -> bytes:
        """Raw limb content of a block (prefix-reuse comparisons)."""
        return self.limbs[block].tobytes()

    def enable_access_log(self):
        self.access_counts = np.zeros(self.params.pt_count, dtype=np.int64)


def _lift_centered(limb_rows: np.ndarray, params: EncodingParams, he: HeParams) -> np.ndarray:
    """Lift limb values into [0, q) centred around zero.

    Centring keeps the data mean out of the answer's accumulated noise;
    the decoder reverses it modulo the plain modulus.
    """
    half = 1 << (params.limb_bits - 1)
    c = limb_rows.astype(np.int64) - half
    out = np.where(c >= 0, c, 0).astype(np.uint64)
    neg = c < 0
    out[neg] = np.uint64(he.cipher_modulus) + c[neg].astype(np.uint64)
    return out


def _fill_blocks(
    store: KvStore,
    params: EncodingParams,
    limbs: np.ndarray,
    from_block: int = 0,
):
    """Populate limb rows for blocks >= from_block from the raw store."""
    all_rows = _pairs_to_limb_rows(store.keys, store.values, params)
    pad_pair = pair_to_limbs(KEY_SENTINEL, bytes(store.value_bytes), params)
    spp = params.slots_per_pair
    m = params.pairs_per_plaintext
    for block in range(from_block, params.pt_count):
        start = block * params.step
        end_real = min(start + m, store.n)
        span = end_real - start
        limbs[block, : span * spp] = all_rows[start:end_real].reshape(-1)
        if span < m:
            tail = np.tile(pad_pair, (m - span, 1)).reshape(-1)
            limbs[block, span * spp : m * spp] = tail


def encode_store(
    store: KvStore,
    he: HeParams,
    eps_data: int,
    version_id: int | None = None,
    reuse: "EncodedStore | None" = None,
    reuse_blocks: int = 0,
) -> EncodedStore:
    """Pack a store into overlapping plaintext blocks, deterministic.

    When ``reuse`` is given, the first ``reuse_blocks`` blocks are taken
    from it verbatim instead of being re-encoded (copy-on-write batch
    updates re-encode only from the lowest affected position on).
    """
    params = EncodingParams.derive(store.n, store.kv_bits, he, eps_data)
    ring = he.ring_degree
    limbs = np.zeros((params.pt_count, ring), dtype=np.uint32)
    ntt = np.empty((params.pt_count, ring), dtype=np.uint64)
    start_block = 0
    if reuse is not None and reuse_blocks > 0 and reuse.params.step == params.step:
        start_block = min(reuse_blocks, params.pt_count, reuse.params.pt_count)
        limbs[:start_block] = reuse.limbs[:start_block]
        ntt[:start_block] = reuse.ntt[:start_block]
    _fill_blocks(store, params, limbs, start_block)
    fresh = _lift_centered(limbs[start_block:], params, he)
    gold.tables_for(ring).forward(fresh)
    ntt[start_block:] = fresh
    return EncodedStore(
        params, he, limbs, ntt, store.version_id if version_id is None else version_id
    )


def reencode_block(enc: EncodedStore, store: KvStore, block: int):
    """Rewrite one block in place from the raw store (value updates)."""
    params = enc.params
    ring = enc.he.ring_degree
    start = block * params.step
    end_real = min(start + params.pairs_per_plaintext, store.n)
    rows = _pairs_to_limb_rows(
        store.keys[start:end_real], store.values[start:end_real], params
    )
    with enc._block_locks[block]:
        enc.limbs[block, : rows.size] = rows.reshape(-1)
        fresh = _lift_centered(enc.limbs[block : block + 1], params, enc.he)
        gold.tables_for(ring).forward(fresh)
        enc.ntt[block] = fresh[0]


# -- queries -----------------------------------------------------------------


@dataclass
class VarPirQuery:
    """Wire-level variable-range query.

    ``l_pt``/``r_pt`` delimit the cyclic block range; ``ct_blobs`` holds
    one serialized selector ciphertext per ring-degree-sized chunk.  All
    plaintext fields are functions of the obfuscated range and public
    parameters only.
    """

    version_id: int
    kind: str
    l_pt: int
    r_pt: int
    ct_blobs: list[bytes]

    @property
    def ct_count(self) -> int:
        return len(self.ct_blobs)


def covered_pt_width(l_pt: int, r_pt: int, pt_count: int) -> int:
    return (r_pt - l_pt) % pt_count + 1


def block_range(obf: ObfuscatedRange, params: EncodingParams) -> tuple[int, int]:
    """Cyclic block IDs [l_pt, r_pt] whose coverage spans the range.

    A wrapped range whose uncovered gap falls inside a single block spans
    every block, so it degrades to the full block range rather than a
    one-block one.
    """
    if obf.kind == "full":
        return 0, params.pt_count - 1
    l_pt = pos_to_pt_id(obf.l, params)
    r_pt = pos_to_pt_id(obf.r, params)
    if obf.kind == "wrapped" and l_pt <= r_pt:
        return 0, params.pt_count - 1
    return l_pt, r_pt


def query_chunks(w_pt: int, ring_degree: int) -> list[int]:
    """Chunk widths covering w_pt selectors, ring_degree per ciphertext."""
    out = []
    left = w_pt
    while left > 0:
        take = min(left, ring_degree)
        out.append(take)
        left -= take
    return out


def build_query(
    pred: PredictedRange,
    obf: ObfuscatedRange,
    params: EncodingParams,
    sk: SecretKey,
    rng: Rng,
    version_id: int,
) -> VarPirQuery:
    """Encrypt the one-hot block selector for an obfuscated range.

    The target block is the one covering the predicted window; its cyclic
    offset inside [l_pt, r_pt] determines which chunk ciphertext carries
    the pre-scaled one-hot coefficient.  Chunk count and sizes depend only
    on the obfuscated range, never on the key.

    Raises:
        ValueError: the obfuscated range does not cover the predicted one.
    """
    if not obf.covers(pred.lo, pred.hi):
        raise ValueError("obfuscated range must cover the predicted range")
    he = sk.params
    l_pt, r_pt = block_range(obf, params)
    w_pt = covered_pt_width(l_pt, r_pt, params.pt_count)
    target = pos_to_pt_id(pred.lo, params)
    offset = (target - l_pt) % params.pt_count
    if offset >= w_pt:
        raise ValueError("target block escaped the obfuscated block range")
    blobs = []
    start = 0
    for width in query_chunks(w_pt, he.ring_degree):
        poly = np.zeros(he.ring_degree, dtype=np.uint64)
        if start <= offset < start + width:
            poly[offset - start] = hc.expansion_scale(width, he)
        blobs.append(hc.encrypt(poly, sk, rng).serialize())
        start += width
    return VarPirQuery(version_id, obf.kind, l_pt, r_pt, blobs)


def answer(
    enc: EncodedStore, query: VarPirQuery, keys: GaloisKeySet
) -> hc.Ciphertext:
    """Accumulated response over the queried cyclic block range.

    Every block in the range participates in exactly one multiplication
    and one addition, regardless of the target, so the access pattern is
    uniform over the disclosed range.
    """
    he = enc.he
    params = enc.params
    if query.version_id != enc.version_id:
        raise StaleVersionError(query.version_id, enc.version_id)
    w_pt = covered_pt_width(query.l_pt, query.r_pt, params.pt_count)
    widths = query_chunks(w_pt, he.ring_degree)
    if len(widths) != query.ct_count:
        raise ValueError(
            f"expected {len(widths)} query ciphertexts, got {query.ct_count}"
        )
    ring = he.ring_degree
    acc0 = np.zeros(ring, dtype=np.uint64)
    acc1 = np.zeros(ring, dtype=np.uint64)
    start = 0
    with _EXPAND_LOCK:
        for width, blob in zip(widths, query.ct_blobs):
            ct = hc.Ciphertext.deserialize(blob, he).to_ntt()
            ids = (query.l_pt + start + np.arange(width)) % params.pt_count
            ids = ids.astype(np.int64)
            c0, c1 = hc.expand_batch(ct.c0[None, :], ct.c1[None, :], width, keys, he)
            gold.accumulate_products(acc0, acc1, c0, c1, enc.ntt, ids)
            if enc.access_counts is not None:
                np.add.at(enc.access_counts, ids, 1)
            start += width
    return hc.Ciphertext(enc.he, acc0, acc1, True).to_coeff()


def decode_answer(
    plain: np.ndarray,
    key: int,
    pred: PredictedRange,
    params: EncodingParams,
) -> bytes | None:
    """Recover the value for ``key`` from a decrypted answer polynomial.

    Reassembles the pairs of the block covering the predicted window,
    drops sentinel padding, and binary-searches the window for the key.
    Returns None when the key is absent.
    """
    half = 1 << (params.limb_bits - 1)
    limbs = ((plain.astype(np.int64) + half) % params.plain_modulus).astype(np.uint32)
    m = params.pairs_per_plaintext
    spp = params.slots_per_pair
    rows = limbs[: m * spp].reshape(m, spp)
    keys, values = _limb_rows_to_pairs(rows, params)
    block = pos_to_pt_id(pred.lo, params)
    start, _ = params.coverage(block)
    lo = pred.lo - start
    hi = min(pred.hi - start, m - 1)
    window_keys = keys[lo : hi + 1]
    idx = int(np.searchsorted(window_keys, np.uint64(key)))
    if idx < len(window_keys) and int(window_keys[idx]) == int(key):
        if int(window_keys[idx]) == KEY_SENTINEL:
            return None
        return values[lo + idx].tobytes()
    return None
