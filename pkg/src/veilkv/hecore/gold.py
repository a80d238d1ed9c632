"""Vectorised arithmetic in the Goldilocks field q = 2**64 - 2**32 + 1.

All kernels are numba-compiled and operate on uint64 arrays.  The 128-bit
products needed by modular multiplication are assembled from 32-bit halves
and reduced with the identities 2**64 = 2**32 - 1 and 2**96 = -1 (mod q),
so everything stays in native 64-bit registers.  Row-batched NTT kernels
parallelise across rows, which is where the server's expansion and
inner-product work lands.
"""

from __future__ import annotations

import numba as nb
import numpy as np
from llvmlite import ir
from numba.core import types
from numba.extending import intrinsic

from .params import GOLDILOCKS_Q, primitive_root_2n

Q = np.uint64(GOLDILOCKS_Q)
_MASK32 = np.uint64(0xFFFFFFFF)
_U32 = np.uint64(32)


@intrinsic
def _mul128(typingctx, a, b):
    """Full 64x64 -> 128-bit product as (hi, lo); lowers to one mul."""
    sig = types.UniTuple(types.uint64, 2)(types.uint64, types.uint64)

    def codegen(context, builder, signature, args):
        i128 = ir.IntType(128)
        i64 = ir.IntType(64)
        prod = builder.mul(builder.zext(args[0], i128), builder.zext(args[1], i128))
        lo = builder.trunc(prod, i64)
        hi = builder.trunc(builder.lshr(prod, ir.Constant(i128, 64)), i64)
        return context.make_tuple(builder, signature.return_type, [hi, lo])

    return sig, codegen


@nb.njit(nb.uint64(nb.uint64, nb.uint64), inline="always", cache=True)
def addmod(a, b):
    s = a + b
    # wraparound of the 64-bit add contributes 2**64 = 2**32 - 1 mod q
    if s < a:
        s += _MASK32
    if s >= Q:
        s -= Q
    return s


@nb.njit(nb.uint64(nb.uint64, nb.uint64), inline="always", cache=True)
def submod(a, b):
    # for reduced inputs the borrow-corrected result is already below q
    d = a - b
    if a < b:
        d -= _MASK32  # borrow: -2**64 = -(2**32 - 1) mod q
    return d


@nb.njit(nb.uint64(nb.uint64, nb.uint64), inline="always", cache=True)
def mulmod(a, b):
    hi, lo = _mul128(a, b)
    # reduce hi*2**64 + lo via 2**64 = 2**32 - 1 and 2**96 = -1 (mod q)
    hi_hi = hi >> _U32
    hi_lo = hi & _MASK32
    t0 = lo - hi_hi
    if lo < hi_hi:
        t0 -= _MASK32
    t1 = (hi_lo << _U32) - hi_lo
    res = t0 + t1
    if res < t0:
        res += _MASK32
    if res >= Q:
        res -= Q
    return res


@nb.njit(nb.uint64(nb.uint64, nb.uint64), inline="always", cache=True)
def powmod(base, exp):
    acc = np.uint64(1)
    b = base
    e = exp
    while e > 0:
        if e & np.uint64(1):
            acc = mulmod(acc, b)
        b = mulmod(b, b)
        e >>= np.uint64(1)
    return acc


# -- batched NTT -----------------------------------------------------------


@nb.njit(cache=True, nogil=True)
def _ntt_row(a, psi_rev):
    n = a.shape[0]
    t = n
    m = 1
    while m < n:
        t >>= 1
        if t >= 4:
            for i in range(m):
                j1 = 2 * i * t
                s = psi_rev[m + i]
                for j in range(j1, j1 + t):
                    u = a[j]
                    v = mulmod(a[j + t], s)
                    a[j] = addmod(u, v)
                    a[j + t] = submod(u, v)
        elif t == 2:
            for i in range(m):
                j = 4 * i
                s = psi_rev[m + i]
                u0 = a[j]
                v0 = mulmod(a[j + 2], s)
                u1 = a[j + 1]
                v1 = mulmod(a[j + 3], s)
                a[j] = addmod(u0, v0)
                a[j + 2] = submod(u0, v0)
                a[j + 1] = addmod(u1, v1)
                a[j + 3] = submod(u1, v1)
        else:
            for i in range(m):
                j = 2 * i
                u = a[j]
                v = mulmod(a[j + 1], psi_rev[m + i])
                a[j] = addmod(u, v)
                a[j + 1] = submod(u, v)
        m <<= 1


@nb.njit(cache=True, nogil=True)
def _intt_row(a, ipsi_rev, n_inv):
    n = a.shape[0]
    t = 1
    m = n
    while m > 1:
        h = m >> 1
        if t == 1:
            for i in range(h):
                j = 2 * i
                s = ipsi_rev[h + i]
                u = a[j]
                v = a[j + 1]
                a[j] = addmod(u, v)
                a[j + 1] = mulmod(submod(u, v), s)
        elif t == 2:
            for i in range(h):
                j = 4 * i
                s = ipsi_rev[h + i]
                u0 = a[j]
                v0 = a[j + 2]
                u1 = a[j + 1]
                v1 = a[j + 3]
                a[j] = addmod(u0, v0)
                a[j + 2] = mulmod(submod(u0, v0), s)
                a[j + 1] = addmod(u1, v1)
                a[j + 3] = mulmod(submod(u1, v1), s)
        else:
            j1 = 0
            for i in range(h):
                s = ipsi_rev[h + i]
                for j in range(j1, j1 + t):
                    u = a[j]
                    v = a[j + t]
                    a[j] = addmod(u, v)
                    a[j + t] = mulmod(submod(u, v), s)
                j1 += 2 * t
        t <<= 1
        m = h
    for j in range(n):
        a[j] = mulmod(a[j], n_inv)


@nb.njit(cache=True, nogil=True, parallel=True)
def ntt_batch(rows, psi_rev):
    for r in nb.prange(rows.shape[0]):
        _ntt_row(rows[r], psi_rev)


@nb.njit(cache=True, nogil=True, parallel=True)
def intt_batch(rows, ipsi_rev, n_inv):
    for r in nb.prange(rows.shape[0]):
        _intt_row(rows[r], ipsi_rev, n_inv)


# -- pointwise kernels -------------------------------------------------------


@nb.njit(cache=True, nogil=True, parallel=True)
def pointwise_mul(out, a, b):
    flat_o = out.reshape(-1)
    flat_a = a.reshape(-1)
    flat_b = b.reshape(-1)
    for i in nb.prange(flat_o.shape[0]):
        flat_o[i] = mulmod(flat_a[i], flat_b[i])


@nb.njit(cache=True, nogil=True, parallel=True)
def pointwise_mul_row(out, a, row):
    """out[r] = a[r] * row, elementwise mod q."""
    n = row.shape[0]
    for r in nb.prange(a.shape[0]):
        for i in range(n):
            out[r, i] = mulmod(a[r, i], row[i])


@nb.njit(cache=True, nogil=True, parallel=True)
def add_inplace(a, b):
    flat_a = a.reshape(-1)
    flat_b = b.reshape(-1)
    for i in nb.prange(flat_a.shape[0]):
        flat_a[i] = addmod(flat_a[i], flat_b[i])


@nb.njit(cache=True, nogil=True)
def scalar_mul_inplace(a, s):
    flat = a.reshape(-1)
    for i in range(flat.shape[0]):
        flat[i] = mulmod(flat[i], s)


@nb.njit(cache=True, nogil=True, parallel=True)
def accumulate_products(acc0, acc1, c0_rows, c1_rows, pt_rows, ids):
    """acc += sum_k ct_k (*) pt[ids[k]], all operands in the NTT domain.

    The per-plaintext inner product of the retrieval answer: each selected
    plaintext participates in exactly one multiplication and one addition.
    Column-blocked so every memory sweep stays cache-resident.
    """
    n = acc0.shape[0]
    block = 2048
    nblocks = (n + block - 1) // block
    for b in nb.prange(nblocks):
        i0 = b * block
        i1 = min(i0 + block, n)
        for k in range(ids.shape[0]):
            pid = ids[k]
            for i in range(i0, i1):
                pt = pt_rows[pid, i]
                acc0[i] = addmod(acc0[i], mulmod(c0_rows[k, i], pt))
                acc1[i] = addmod(acc1[i], mulmod(c1_rows[k, i], pt))


@nb.njit(cache=True, nogil=True, parallel=True)
def decompose_balanced(coeffs, out, decomp_log, num_digits, skip):
    """Balanced base-2**decomp_log digits, lifted into [0, q).

    Digits 0..num_digits-2 lie in [-B/2, B/2); the top digit absorbs the
    final carry and stays unsigned in [0, B].  Digits below ``skip`` are
    dropped; their contribution to the switched ciphertext is absorbed as
    key-switch noise.  coeffs: (R, N); out: (R, num_digits - skip, N).
    """
    logb = np.uint64(decomp_log)
    bbase = np.uint64(1) << logb
    half = bbase >> np.uint64(1)
    mask = bbase - np.uint64(1)
    for r in nb.prange(coeffs.shape[0]):
        for i in range(coeffs.shape[1]):
            v = coeffs[r, i]
            carry = np.uint64(0)
            for d in range(num_digits):
                raw = ((v >> (logb * np.uint64(d))) & mask) + carry
                if d < num_digits - 1 and raw >= half:
                    digit = Q - (bbase - raw)  # negative digit lifted mod q
                    carry = np.uint64(1)
                else:
                    digit = raw
                    carry = np.uint64(0)
                if d >= skip:
                    out[r, d - skip, i] = digit


@nb.njit(cache=True, nogil=True, parallel=True)
def ks_mac(out0, out1, digits, key0, key1):
    """out += sum_d digits[:, d] * key[d] pointwise (NTT domain).

    digits: (R, L, N); key0/key1: (L, N); out0/out1: (R, N), overwritten.
    """
    r_count = digits.shape[0]
    ell = digits.shape[1]
    n = digits.shape[2]
    for r in nb.prange(r_count):
        for i in range(n):
            out0[r, i] = mulmod(digits[r, 0, i], key0[0, i])
            out1[r, i] = mulmod(digits[r, 0, i], key1[0, i])
        for d in range(1, ell):
            for i in range(n):
                out0[r, i] = addmod(out0[r, i], mulmod(digits[r, d, i], key0[d, i]))
                out1[r, i] = addmod(out1[r, i], mulmod(digits[r, d, i], key1[d, i]))


@nb.njit(cache=True, nogil=True, parallel=True)
def round_children(c0, c1, ks0, ks1, perm, mono, out0, out1, r):
    """One expansion round: rows [0, r) -> even rows [0, r) and odd rows
    [r, 2r) of the output buffers; everything stays in the NTT domain.

    even = c + Sub(c, g); odd = (c - Sub(c, g)) * x**(-2**j), where
    Sub(c, g) = (gather(c0, perm) + ks0, ks1 contribution on c1).
    """
    n = c0.shape[1]
    for row in nb.prange(r):
        for i in range(n):
            # Sub(c, g): c0 gets the permuted poly plus the switch term,
            # c1 is rebuilt entirely by the switch
            s0 = addmod(c0[row, perm[i]], ks0[row, i])
            s1 = ks1[row, i]
            a0 = c0[row, i]
            a1 = c1[row, i]
            out0[row, i] = addmod(a0, s0)
            out1[row, i] = addmod(a1, s1)
            out0[r + row, i] = mulmod(submod(a0, s0), mono[i])
            out1[r + row, i] = mulmod(submod(a1, s1), mono[i])


@nb.njit(cache=True, nogil=True, parallel=True)
def gather_rows(out, src, perm):
    """out[r, i] = src[r, perm[i]] (NTT-domain automorphism)."""
    for r in nb.prange(src.shape[0]):
        for i in range(src.shape[1]):
            out[r, i] = src[r, perm[i]]


# -- tables ------------------------------------------------------------------


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n, dtype=np.uint64)
    out = np.zeros(n, dtype=np.uint64)
    for b in range(bits):
        out |= ((idx >> np.uint64(b)) & np.uint64(1)) << np.uint64(bits - 1 - b)
    return out


class NttTables:
    """Precomputed twiddle tables for one ring degree."""

    def __init__(self, n: int):
        self.n = n
        psi = primitive_root_2n(2 * n)
        ipsi = pow(psi, GOLDILOCKS_Q - 2, GOLDILOCKS_Q)
        rev = _bit_reverse_indices(n)
        psi_pows = np.empty(n, dtype=np.uint64)
        ipsi_pows = np.empty(n, dtype=np.uint64)
        acc = 1
        iacc = 1
        for i in range(n):
            psi_pows[i] = acc
            ipsi_pows[i] = iacc
            acc = acc * psi % GOLDILOCKS_Q
            iacc = iacc * ipsi % GOLDILOCKS_Q
        self.psi = psi
        self.psi_rev = psi_pows[rev.astype(np.int64)].copy()
        self.ipsi_rev = ipsi_pows[rev.astype(np.int64)].copy()
        self.n_inv = np.uint64(pow(n, GOLDILOCKS_Q - 2, GOLDILOCKS_Q))

    def forward(self, rows: np.ndarray):
        ntt_batch(rows, self.psi_rev)

    def inverse(self, rows: np.ndarray):
        intt_batch(rows, self.ipsi_rev, self.n_inv)


_TABLE_CACHE: dict[int, NttTables] = {}


def tables_for(n: int) -> NttTables:
    if n not in _TABLE_CACHE:
        _TABLE_CACHE[n] = NttTables(n)
    return _TABLE_CACHE[n]


def negacyclic_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Product of two coefficient-domain polynomials mod (q, x^n + 1)."""
    n = len(a)
    tbl = tables_for(n)
    rows = np.stack([a, b]).astype(np.uint64)
    tbl.forward(rows)
    out = np.empty((1, n), dtype=np.uint64)
    pointwise_mul(out[0], rows[0], rows[1])
    tbl.inverse(out)
    return out[0]


def schoolbook_negacyclic_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Quadratic-time oracle for negacyclic multiplication (exact ints)."""
    n = len(a)
    acc = [0] * n
    av = [int(x) for x in a]
    bv = [int(x) for x in b]
    for i, ai in enumerate(av):
        if ai == 0:
            continue
        for j, bj in enumerate(bv):
            k = i + j
            prod = ai * bj
            if k < n:
                acc[k] += prod
            else:
                acc[k - n] -= prod
    return np.array([v % GOLDILOCKS_Q for v in acc], dtype=np.uint64)
