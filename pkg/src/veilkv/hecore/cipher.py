"""Symmetric ring-LWE encryption with the operations variable-range
retrieval needs: addition, plaintext multiplication, automorphism key
switching, and oblivious one-hot query expansion.

The client encrypts its own queries and decrypts responses, so there is no
public-key encryptor; the key material uploaded at session start is the
Galois key set.  Plaintexts are coefficient-packed polynomials with
entries below the plain modulus.  Ciphertexts are pairs of polynomials
mod q and decrypt as c0 + c1*s.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ..rng import Rng
from . import gold
from .params import GOLDILOCKS_Q, HeParams

_Q = GOLDILOCKS_Q


class HeError(RuntimeError):
    """Parameter or format violation in the homomorphic layer."""


# -- coefficient-domain automorphism tables ---------------------------------

_COEFF_PERM_CACHE: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
_NTT_PERM_CACHE: dict[tuple[int, int], np.ndarray] = {}
_EXPONENT_CACHE: dict[int, np.ndarray] = {}
_MONO_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _coeff_perm(n: int, g: int) -> tuple[np.ndarray, np.ndarray]:
    """Map x**i -> x**(g*i mod 2n): destination index and sign mask."""
    key = (n, g)
    if key not in _COEFF_PERM_CACHE:
        i = np.arange(n, dtype=np.int64)
        e = (g * i) % (2 * n)
        dest = np.where(e < n, e, e - n)
        negate = e >= n
        _COEFF_PERM_CACHE[key] = (dest, negate)
    return _COEFF_PERM_CACHE[key]


def apply_automorphism_coeff(poly: np.ndarray, g: int) -> np.ndarray:
    """Substitute x -> x**g in a coefficient-domain polynomial mod q."""
    n = len(poly)
    dest, negate = _coeff_perm(n, g)
    out = np.zeros(n, dtype=np.uint64)
    vals = poly.copy()
    neg = negate & (vals != 0)
    vals[neg] = np.uint64(_Q) - vals[neg]
    out[dest] = vals
    return out


def _slot_exponents(n: int) -> np.ndarray:
    """Exponent e_k with NTT slot k evaluating polynomials at psi**e_k.

    Derived numerically from the transform of the monomial x, so it stays
    correct for any slot ordering the NTT kernels use.
    """
    if n not in _EXPONENT_CACHE:
        tbl = gold.tables_for(n)
        row = np.zeros((1, n), dtype=np.uint64)
        row[0, 1] = 1
        tbl.forward(row)
        psi = tbl.psi
        dlog = {}
        acc = 1
        for j in range(2 * n):
            dlog[acc] = j
            acc = acc * psi % _Q
        _EXPONENT_CACHE[n] = np.array([dlog[int(v)] for v in row[0]], dtype=np.int64)
    return _EXPONENT_CACHE[n]


def _ntt_perm(n: int, g: int) -> np.ndarray:
    """Slot permutation realising the automorphism in the NTT domain."""
    key = (n, g)
    if key not in _NTT_PERM_CACHE:
        exps = _slot_exponents(n)
        order = {int(e): k for k, e in enumerate(exps)}
        perm = np.array([order[(g * int(e)) % (2 * n)] for e in exps], dtype=np.int64)
        _NTT_PERM_CACHE[key] = perm
    return _NTT_PERM_CACHE[key]


def _monomial_ntt(n: int, exponent: int) -> np.ndarray:
    """NTT-domain values of x**exponent (exponent taken mod 2n)."""
    key = (n, exponent % (2 * n))
    if key not in _MONO_CACHE:
        tbl = gold.tables_for(n)
        exps = _slot_exponents(n)
        psi = tbl.psi
        vec = np.array(
            [pow(psi, (int(e) * key[1]) % (2 * n), _Q) for e in exps], dtype=np.uint64
        )
        _MONO_CACHE[key] = vec
    return _MONO_CACHE[key]


# -- key material ------------------------------------------------------------


@dataclass
class SecretKey:
    """Ternary secret with a cached NTT-domain copy."""

    params: HeParams
    coeffs: np.ndarray
    ntt: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.ntt is None:
            rows = self.coeffs[None, :].copy()
            gold.tables_for(self.params.n).forward(rows)
            self.ntt = rows[0]


def keygen(params: HeParams, rng: Rng) -> SecretKey:
    """Sample a fresh ternary secret key."""
    tern = rng.ternary(params.n)
    coeffs = np.where(tern >= 0, tern, np.int64(0)).astype(np.uint64)
    coeffs[tern < 0] = np.uint64(_Q - 1)
    return SecretKey(params, coeffs)


@dataclass
class GaloisKeySet:
    """Key-switch keys for the automorphisms used by query expansion.

    Per element g: matrices (L, N) in the NTT domain such that row i
    encrypts B**i * s(x**g) under s.
    """

    params: HeParams
    keys: dict[int, tuple[np.ndarray, np.ndarray]]

    def serialize(self) -> bytes:
        n = self.params.n
        parts = [self.params.params_hash(), struct.pack("<I", len(self.keys))]
        tbl = gold.tables_for(n)
        for g in sorted(self.keys):
            k0, k1 = self.keys[g]
            c0 = k0.copy()
            c1 = k1.copy()
            tbl.inverse(c0)
            tbl.inverse(c1)
            parts.append(struct.pack("<II", g, k0.shape[0]))
            parts.append(c0.astype("<u8").tobytes())
            parts.append(c1.astype("<u8").tobytes())
        return b"".join(parts)

    @classmethod
    def deserialize(cls, blob: bytes, params: HeParams) -> "GaloisKeySet":
        n = params.n
        if blob[:8] != params.params_hash():
            raise HeError("galois key blob for different parameters")
        (count,) = struct.unpack_from("<I", blob, 8)
        pos = 12
        tbl = gold.tables_for(n)
        keys = {}
        for _ in range(count):
            if pos + 8 > len(blob):
                raise HeError("truncated galois key header")
            g, digits = struct.unpack_from("<II", blob, pos)
            pos += 8
            span = digits * n * 8
            if pos + 2 * span > len(blob):
                raise HeError("truncated galois key payload")
            k0 = np.frombuffer(blob, dtype="<u8", count=digits * n, offset=pos).reshape(
                digits, n
            ).copy()
            pos += span
            k1 = np.frombuffer(blob, dtype="<u8", count=digits * n, offset=pos).reshape(
                digits, n
            ).copy()
            pos += span
            tbl.forward(k0)
            tbl.forward(k1)
            keys[g] = (k0, k1)
        return cls(params, keys)


KS_SKIP_DIGITS = 1  # lowest digit dropped; its term rides as switch noise


def gen_galois_keys(sk: SecretKey, params: HeParams, rng: Rng) -> GaloisKeySet:
    """Key-switch keys for all expansion automorphism elements.

    Row j encrypts B**(skip + j) * s(x**g) under s, for the balanced-digit
    decomposition with the lowest digit dropped.
    """
    n = params.n
    tbl = gold.tables_for(n)
    ell = params.num_digits - KS_SKIP_DIGITS
    base_pows = [
        pow(1 << params.decomp_log, i + KS_SKIP_DIGITS, _Q) for i in range(ell)
    ]
    keys = {}
    for g in params.galois_elements:
        s_g = apply_automorphism_coeff(sk.coeffs, g)
        rows_sg = s_g[None, :].copy()
        tbl.forward(rows_sg)
        sg_ntt = rows_sg[0]
        a = np.empty((ell, n), dtype=np.uint64)
        for i in range(ell):
            a[i] = rng.integers(_Q, n)
        a_ntt = a.copy()
        tbl.forward(a_ntt)
        e = _gauss_poly_rows(params, rng, ell)
        tbl.forward(e)
        k0 = np.empty((ell, n), dtype=np.uint64)
        gold.pointwise_mul(k0, a_ntt, np.broadcast_to(sk.ntt, (ell, n)).copy())
        k0 = (np.uint64(_Q) - k0) % np.uint64(_Q)  # -a*s
        gold.add_inplace(k0, e)
        scaled = np.empty((ell, n), dtype=np.uint64)
        for i in range(ell):
            row = sg_ntt[None, :].copy()
            gold.scalar_mul_inplace(row, np.uint64(base_pows[i]))
            scaled[i] = row[0]
        gold.add_inplace(k0, scaled)
        keys[g] = (k0, a_ntt)
    return GaloisKeySet(params, keys)


def _gauss_poly_rows(params: HeParams, rng: Rng, rows: int) -> np.ndarray:
    """Rows of centred Gaussian noise lifted into [0, q)."""
    e = rng.gauss_ints(params.noise_stddev, rows * params.n).reshape(rows, params.n)
    out = np.where(e >= 0, e, 0).astype(np.uint64)
    neg = e < 0
    out[neg] = (np.uint64(_Q) + e[neg].astype(np.int64).astype(np.uint64))
    return out


# -- ciphertexts -------------------------------------------------------------


@dataclass
class Ciphertext:
    """Pair of mod-q polynomials; ``is_ntt`` tracks the representation."""

    params: HeParams
    c0: np.ndarray
    c1: np.ndarray
    is_ntt: bool = False

    def copy(self) -> "Ciphertext":
        return Ciphertext(self.params, self.c0.copy(), self.c1.copy(), self.is_ntt)

    def to_ntt(self) -> "Ciphertext":
        if self.is_ntt:
            return self
        rows = np.stack([self.c0, self.c1])
        gold.tables_for(self.params.n).forward(rows)
        return Ciphertext(self.params, rows[0], rows[1], True)

    def to_coeff(self) -> "Ciphertext":
        if not self.is_ntt:
            return self
        rows = np.stack([self.c0, self.c1])
        gold.tables_for(self.params.n).inverse(rows)
        return Ciphertext(self.params, rows[0], rows[1], False)

    def serialize(self) -> bytes:
        ct = self.to_coeff()
        return (
            self.params.params_hash()
            + ct.c0.astype("<u8").tobytes()
            + ct.c1.astype("<u8").tobytes()
        )

    @classmethod
    def deserialize(cls, blob: bytes, params: HeParams) -> "Ciphertext":
        n = params.n
        if len(blob) != params.ciphertext_bytes():
            raise HeError(f"ciphertext blob must be {params.ciphertext_bytes()} bytes")
        if blob[:8] != params.params_hash():
            raise HeError("ciphertext for different parameters")
        c0 = np.frombuffer(blob, dtype="<u8", count=n, offset=8).copy()
        c1 = np.frombuffer(blob, dtype="<u8", count=n, offset=8 + 8 * n).copy()
        return cls(params, c0, c1, False)


def _check_plain(params: HeParams, pt: np.ndarray) -> np.ndarray:
    pt = np.asarray(pt, dtype=np.uint64)
    if pt.shape != (params.n,):
        raise HeError(f"plaintext must have {params.n} coefficients")
    if int(pt.max(initial=0)) >= params.plain_modulus:
        raise HeError("plaintext coefficient exceeds plain modulus")
    return pt


def encrypt(pt: np.ndarray, sk: SecretKey, rng: Rng) -> Ciphertext:
    """Symmetric encryption of a coefficient-packed plaintext."""
    params = sk.params
    pt = _check_plain(params, pt)
    n = params.n
    tbl = gold.tables_for(n)
    a = rng.integers(_Q, n)
    a_rows = a[None, :].copy()
    tbl.forward(a_rows)
    prod = np.empty((1, n), dtype=np.uint64)
    gold.pointwise_mul(prod[0], a_rows[0], sk.ntt)
    tbl.inverse(prod)
    c0 = (np.uint64(_Q) - prod[0]) % np.uint64(_Q)
    delta = np.uint64(params.delta)
    rows = c0[None, :]
    gold.add_inplace(rows, (pt * delta)[None, :])  # delta * m < q per term
    e = _gauss_poly_rows(params, rng, 1)[0]
    gold.add_inplace(rows, e[None, :])
    return Ciphertext(params, rows[0], a, False)


def decrypt(ct: Ciphertext, sk: SecretKey) -> np.ndarray:
    """Recover the plaintext polynomial (valid while noise budget > 0)."""
    v = _raw_phase(ct, sk)
    params = ct.params
    delta = np.uint64(params.delta)
    quot = v // delta
    rem = v - quot * delta
    half = np.uint64((params.delta + 1) // 2)
    m = quot + (rem >= half).astype(np.uint64)
    return (m % np.uint64(params.plain_modulus)).astype(np.uint64)


def _raw_phase(ct: Ciphertext, sk: SecretKey) -> np.ndarray:
    """c0 + c1*s in coefficient domain."""
    params = ct.params
    n = params.n
    tbl = gold.tables_for(n)
    cc = ct.to_coeff() if not ct.is_ntt else ct
    if ct.is_ntt:
        prod = np.empty((1, n), dtype=np.uint64)
        gold.pointwise_mul(prod[0], ct.c1, sk.ntt)
        tbl.inverse(prod)
        c0 = ct.c0[None, :].copy()
        tbl.inverse(c0)
        rows = c0
        gold.add_inplace(rows, prod)
        return rows[0]
    c1_rows = cc.c1[None, :].copy()
    tbl.forward(c1_rows)
    prod = np.empty((1, n), dtype=np.uint64)
    gold.pointwise_mul(prod[0], c1_rows[0], sk.ntt)
    tbl.inverse(prod)
    out = cc.c0[None, :].copy()
    gold.add_inplace(out, prod)
    return out[0]


def noise_budget(
    ct: Ciphertext, sk: SecretKey, expected: np.ndarray | None = None
) -> float:
    """Remaining headroom in bits: log2(q / 2p) - log2 |residual|_inf.

    A budget >= 1 implies correct decryption.  Without a reference the
    residual is measured against the decoded plaintext, which floors the
    estimate near zero once decryption breaks; pass ``expected`` (the true
    plaintext) to let an exhausted ciphertext report a negative budget.
    """
    params = ct.params
    v = _raw_phase(ct, sk).astype(object)
    m = decrypt(ct, sk) if expected is None else np.asarray(expected, dtype=np.uint64)
    delta = params.delta
    resid = (v - m.astype(object) * delta) % _Q
    centered = np.where(resid > _Q // 2, resid - _Q, resid)
    worst = int(np.abs(centered).max())
    cap = np.log2(_Q / (2 * params.plain_modulus))
    return float(cap - np.log2(max(worst, 1)))


def add_ct(a: Ciphertext, b: Ciphertext) -> Ciphertext:
    """Homomorphic addition (coefficient-wise sum of the plaintexts)."""
    if a.is_ntt != b.is_ntt:
        b = b.to_ntt() if a.is_ntt else b.to_coeff()
    out = a.copy()
    gold.add_inplace(out.c0[None, :], b.c0[None, :])
    gold.add_inplace(out.c1[None, :], b.c1[None, :])
    return out


def mul_plain(ct: Ciphertext, pt: np.ndarray) -> Ciphertext:
    """Multiply the encrypted polynomial by a plaintext polynomial."""
    params = ct.params
    pt = _check_plain(params, pt)
    n = params.n
    tbl = gold.tables_for(n)
    pt_rows = pt[None, :].astype(np.uint64).copy()
    tbl.forward(pt_rows)
    cn = ct.to_ntt()
    out0 = np.empty((1, n), dtype=np.uint64)
    out1 = np.empty((1, n), dtype=np.uint64)
    gold.pointwise_mul(out0[0], cn.c0, pt_rows[0])
    gold.pointwise_mul(out1[0], cn.c1, pt_rows[0])
    res = Ciphertext(params, out0[0], out1[0], True)
    return res if ct.is_ntt else res.to_coeff()


# -- automorphism and expansion ----------------------------------------------


def _switch_terms(
    params: HeParams,
    t1_ntt: np.ndarray,
    key0: np.ndarray,
    key1: np.ndarray,
    digits_buf: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Key-switch contribution (sum_d digits*key) for a batch of rows.

    The caller adds the first component to the automorphed c0.  The digit
    decomposition happens in coefficient domain: one inverse transform per
    row plus one forward transform per retained digit.
    """
    n = params.n
    ell = params.num_digits - KS_SKIP_DIGITS
    tbl = gold.tables_for(n)
    r = t1_ntt.shape[0]
    t1c = t1_ntt.copy()
    tbl.inverse(t1c)
    if digits_buf is None or digits_buf.shape[0] < r:
        digits_buf = np.empty((r, ell, n), dtype=np.uint64)
    digits = digits_buf[:r]
    gold.decompose_balanced(t1c, digits, params.decomp_log, params.num_digits, KS_SKIP_DIGITS)
    tbl.forward(digits.reshape(r * ell, n))
    out0 = np.empty((r, n), dtype=np.uint64)
    out1 = np.empty((r, n), dtype=np.uint64)
    gold.ks_mac(out0, out1, digits, key0, key1)
    return out0, out1


def _keyswitch_batch(
    params: HeParams,
    t0_ntt: np.ndarray,
    t1_ntt: np.ndarray,
    key0: np.ndarray,
    key1: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Switch rows encrypted under an automorphism image of s back to s."""
    ks0, ks1 = _switch_terms(params, t1_ntt, key0, key1)
    gold.add_inplace(ks0, t0_ntt)
    return ks0, ks1


def apply_automorphism(ct: Ciphertext, g: int, keys: GaloisKeySet) -> Ciphertext:
    """Homomorphic substitution x -> x**g, re-keyed to the original secret."""
    params = ct.params
    if g % 2 == 0:
        raise HeError("galois element must be odd")
    if g % (2 * params.n) == 1:
        return ct.copy()
    if g not in keys.keys:
        raise HeError(f"no key-switch material for element {g}")
    cn = ct.to_ntt()
    perm = _ntt_perm(params.n, g)
    t0 = np.empty((1, params.n), dtype=np.uint64)
    t1 = np.empty((1, params.n), dtype=np.uint64)
    gold.gather_rows(t0, cn.c0[None, :], perm)
    gold.gather_rows(t1, cn.c1[None, :], perm)
    k0, k1 = keys.keys[g]
    out0, out1 = _keyswitch_batch(params, t0, t1, k0, k1)
    res = Ciphertext(params, out0[0], out1[0], True)
    return res if ct.is_ntt else res.to_coeff()


def expansion_scale(w: int, params: HeParams) -> int:
    """Pre-scale the client embeds: inverse of 2**ceil(log2 w) mod p."""
    rounds = max(w - 1, 0).bit_length()
    return pow(pow(2, rounds, params.plain_modulus), -1, params.plain_modulus)


def oblivious_expand(
    query_ct: Ciphertext, w: int, keys: GaloisKeySet, params: HeParams
) -> list[Ciphertext]:
    """Expand one ciphertext into w ciphertexts of 0/1 constants.

    The input encrypts expansion_scale(w) at the selected coefficient and
    zero elsewhere; output k decrypts to the constant 1 exactly when k is
    that coefficient.  Iterative doubling with elements N/2**j + 1.
    """
    if w < 1 or w > params.n:
        raise HeError(f"w must be in [1, {params.n}]")
    c0, c1 = expand_batch(
        query_ct.to_ntt().c0[None, :], query_ct.to_ntt().c1[None, :], w, keys, params
    )
    return [Ciphertext(params, c0[k].copy(), c1[k].copy(), True) for k in range(w)]


class _ExpandWorkspace:
    """Reusable ping-pong buffers for the expansion of one ring degree."""

    def __init__(self, n: int, cap: int, ell: int):
        self.cap = cap
        self.bufs = [
            (np.empty((cap, n), dtype=np.uint64), np.empty((cap, n), dtype=np.uint64))
            for _ in range(2)
        ]
        self.t1 = np.empty((cap // 2 if cap > 1 else 1, n), dtype=np.uint64)
        self.digits = np.empty((cap // 2 if cap > 1 else 1, ell, n), dtype=np.uint64)


_WS_CACHE: dict[tuple[int, int], _ExpandWorkspace] = {}


def _workspace(params: HeParams, w_pow2: int) -> _ExpandWorkspace:
    key = (params.n, w_pow2)
    if key not in _WS_CACHE:
        # one workspace per (N, power-of-two width); the largest dominates
        _WS_CACHE[key] = _ExpandWorkspace(
            params.n, w_pow2, params.num_digits - KS_SKIP_DIGITS
        )
    return _WS_CACHE[key]


def expand_batch(
    q0: np.ndarray, q1: np.ndarray, w: int, keys: GaloisKeySet, params: HeParams
) -> tuple[np.ndarray, np.ndarray]:
    """Row-batched expansion core: (1, N) NTT query -> (w, N) outputs."""
    n = params.n
    ell = params.num_digits - KS_SKIP_DIGITS
    tbl = gold.tables_for(n)
    rounds = max(w - 1, 0).bit_length()
    w_pow2 = 1 << rounds
    ws = _workspace(params, w_pow2)
    cur0, cur1 = ws.bufs[0]
    nxt0, nxt1 = ws.bufs[1]
    cur0[0] = q0[0]
    cur1[0] = q1[0]
    for j in range(rounds):
        g = n // (1 << j) + 1
        perm = _ntt_perm(n, g)
        r = 1 << j
        k0, k1 = keys.keys[g]
        t1 = ws.t1[:r]
        gold.gather_rows(t1, cur1[:r], perm)
        tbl.inverse(t1)
        digits = ws.digits[:r]
        gold.decompose_balanced(t1, digits, params.decomp_log, params.num_digits, KS_SKIP_DIGITS)
        tbl.forward(digits.reshape(r * ell, n))
        ks0 = nxt0[:r]
        ks1 = nxt1[:r]
        gold.ks_mac(ks0, ks1, digits, k0, k1)
        mono = _monomial_ntt(n, -(1 << j))
        gold.round_children(cur0[: 2 * r], cur1[: 2 * r], ks0, ks1, perm, mono, nxt0, nxt1, r)
        cur0, cur1, nxt0, nxt1 = nxt0, nxt1, cur0, cur1
    return cur0[:w], cur1[:w]
