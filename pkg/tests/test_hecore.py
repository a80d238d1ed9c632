import numpy as np
import pytest

from veilkv.hecore import (
    Ciphertext,
    GaloisKeySet,
    HeError,
    HeParams,
    GOLDILOCKS_Q,
    add_ct,
    apply_automorphism,
    decrypt,
    derive_plain_modulus,
    encrypt,
    expansion_scale,
    gen_galois_keys,
    is_prime,
    keygen,
    mul_plain,
    noise_budget,
    oblivious_expand,
)
from veilkv.hecore import gold
from veilkv.rng import Rng


@pytest.fixture(scope="module")
def ctx():
    params = HeParams()
    rng = Rng(101)
    sk = keygen(params, rng)
    keys = gen_galois_keys(sk, params, rng)
    return params, rng, sk, keys


def rand_plain(params, rng):
    return rng.integers(params.plain_modulus, params.n)


# -- parameter derivation ----------------------------------------------------


def test_modulus_primality_search_oracle():
    # trial-division oracle for the pinned moduli
    def brute_prime(v):
        if v < 2:
            return False
        f = 2
        while f * f <= v:
            if v % f == 0:
                return False
            f += 1
        return True

    p = HeParams().plain_modulus
    assert brute_prime(p)
    assert p == 257  # smallest prime >= 2**8
    for cand in range(1 << 8, p, 2):
        assert not brute_prime(cand) or cand % 2 == 0
    assert is_prime(GOLDILOCKS_Q)
    assert (GOLDILOCKS_Q - 1) % (2 * 4096) == 0
    assert derive_plain_modulus(8) == 257
    assert derive_plain_modulus(20) == 1048583


def test_params_validation():
    with pytest.raises(ValueError):
        HeParams(ring_degree=3000)
    with pytest.raises(ValueError):
        HeParams(plain_modulus=256)
    assert HeParams().galois_elements[0] == 4097
    assert len(HeParams().galois_elements) == 12


# -- encryption ---------------------------------------------------------------


def test_roundtrip_zero_and_random(ctx):
    params, rng, sk, _ = ctx
    zero = np.zeros(params.n, dtype=np.uint64)
    assert np.array_equal(decrypt(encrypt(zero, sk, rng), sk), zero)
    for _ in range(25):
        pt = rand_plain(params, rng)
        assert np.array_equal(decrypt(encrypt(pt, sk, rng), sk), pt)


def test_fresh_budget(ctx):
    params, rng, sk, _ = ctx
    ct = encrypt(rand_plain(params, rng), sk, rng)
    assert noise_budget(ct, sk) >= 20


def test_additive_homomorphism(ctx):
    params, rng, sk, _ = ctx
    a, b = rand_plain(params, rng), rand_plain(params, rng)
    got = decrypt(add_ct(encrypt(a, sk, rng), encrypt(b, sk, rng)), sk)
    assert np.array_equal(got, (a + b) % params.plain_modulus)


def test_mul_plain_identity_and_zero(ctx):
    params, rng, sk, _ = ctx
    one = np.zeros(params.n, dtype=np.uint64)
    one[0] = 1
    pt = rand_plain(params, rng)
    assert np.array_equal(decrypt(mul_plain(encrypt(one, sk, rng), pt), sk), pt)
    zero = np.zeros(params.n, dtype=np.uint64)
    got = decrypt(mul_plain(encrypt(pt, sk, rng), zero), sk)
    assert not got.any()


def test_one_hot_selection_matches_plain_oracle(ctx):
    params, rng, sk, _ = ctx
    pts = [rand_plain(params, rng) for _ in range(5)]
    target = 3
    acc = None
    for j, pt in enumerate(pts):
        sel = np.zeros(params.n, dtype=np.uint64)
        sel[0] = 1 if j == target else 0
        term = mul_plain(encrypt(sel, sk, rng), pt)
        acc = term if acc is None else add_ct(acc, term)
    assert np.array_equal(decrypt(acc, sk), pts[target])


def test_mul_plain_ring_semantics(ctx):
    # decrypt(mul_plain) = negacyclic product of the plaintexts mod p
    params, rng, sk, _ = ctx
    a, b = rand_plain(params, rng), rand_plain(params, rng)
    got = decrypt(mul_plain(encrypt(a, sk, rng), b), sk)
    prod = gold.negacyclic_mul(a, b).astype(object)
    # integer coefficients are < n * p**2 << q; centre before reducing mod p
    signed = np.where(prod > GOLDILOCKS_Q // 2, prod - GOLDILOCKS_Q, prod)
    expect = (signed % params.plain_modulus).astype(np.uint64)
    assert np.array_equal(got, expect)


# -- automorphisms -------------------------------------------------------------


def plaintext_substitution(pt, g, p, n):
    """Oracle: x -> x**g substitution on the plaintext polynomial mod p."""
    out = np.zeros(n, dtype=np.int64)
    i = np.arange(n, dtype=np.int64)
    e = (g * i) % (2 * n)
    dest = np.where(e < n, e, e - n)
    vals = pt.astype(np.int64).copy()
    neg = e >= n
    vals[neg] = (-vals[neg]) % p
    out[dest] = vals
    return out.astype(np.uint64) % np.uint64(p)


def test_automorphism_element_one_is_identity(ctx):
    params, rng, sk, keys = ctx
    pt = rand_plain(params, rng)
    ct = encrypt(pt, sk, rng)
    assert np.array_equal(decrypt(apply_automorphism(ct, 1, keys), sk), pt)


def test_automorphism_on_monomial(ctx):
    params, rng, sk, keys = ctx
    g = params.n // 2 + 1
    pt = np.zeros(params.n, dtype=np.uint64)
    pt[1] = 1  # the polynomial x
    got = decrypt(apply_automorphism(encrypt(pt, sk, rng), g, keys), sk)
    expect = np.zeros(params.n, dtype=np.uint64)
    expect[g % params.n] = 1 if g < params.n else params.plain_modulus - 1
    assert np.array_equal(got, plaintext_substitution(pt, g, params.plain_modulus, params.n))


def test_automorphism_random_elements(ctx):
    params, rng, sk, keys = ctx
    for g in (params.galois_elements[0], params.galois_elements[5], params.galois_elements[-1]):
        pt = rand_plain(params, rng)
        got = decrypt(apply_automorphism(encrypt(pt, sk, rng), g, keys), sk)
        assert np.array_equal(
            got, plaintext_substitution(pt, g, params.plain_modulus, params.n)
        )


def test_automorphism_requires_key(ctx):
    params, rng, sk, keys = ctx
    ct = encrypt(rand_plain(params, rng), sk, rng)
    with pytest.raises(HeError):
        apply_automorphism(ct, 11, keys)


# -- NTT oracle ---------------------------------------------------------------


def test_ntt_equals_schoolbook_256():
    rng = np.random.default_rng(5)
    for _ in range(20):
        a = rng.integers(0, GOLDILOCKS_Q, 256, dtype=np.uint64)
        b = rng.integers(0, GOLDILOCKS_Q, 256, dtype=np.uint64)
        assert np.array_equal(
            gold.negacyclic_mul(a, b), gold.schoolbook_negacyclic_mul(a, b)
        )


# -- oblivious expansion --------------------------------------------------------


def expand_and_check(params, sk, keys, rng, w, offset):
    query = np.zeros(params.n, dtype=np.uint64)
    query[offset] = expansion_scale(w, params)
    outs = oblivious_expand(encrypt(query, sk, rng), w, keys, params)
    assert len(outs) == w
    for k, ct in enumerate(outs):
        plain = decrypt(ct, sk)
        want = 1 if k == offset else 0
        assert int(plain[0]) == want, (w, offset, k)
        assert not plain[1:].any(), (w, offset, k)


def test_expand_w1(ctx):
    params, rng, sk, keys = ctx
    expand_and_check(params, sk, keys, rng, 1, 0)


def test_expand_small_all_offsets(ctx):
    params, rng, sk, keys = ctx
    for w in (2, 7):
        for offset in range(w):
            expand_and_check(params, sk, keys, rng, w, offset)


def test_expand_rejects_oversize(ctx):
    params, rng, sk, keys = ctx
    ct = encrypt(np.zeros(params.n, dtype=np.uint64), sk, rng)
    with pytest.raises(HeError):
        oblivious_expand(ct, params.n + 1, keys, params)


# -- noise budget ---------------------------------------------------------------


def test_budget_monotone_chain(ctx):
    params, rng, sk, keys = ctx
    pt = rand_plain(params, rng)
    ct = encrypt(pt, sk, rng)
    b0 = noise_budget(ct, sk)
    ct2 = apply_automorphism(ct, params.galois_elements[-1], keys)
    b1 = noise_budget(ct2, sk)
    ct3 = mul_plain(ct2, rand_plain(params, rng))
    b2 = noise_budget(ct3, sk)
    ct4 = add_ct(ct3, ct3)
    b3 = noise_budget(ct4, sk)
    assert b0 > b1 > b2 >= b3


def test_budget_exhaustion_flagged(ctx):
    # stress chain with a tracked true plaintext: the reported budget must
    # go non-positive once decryption breaks
    params, rng, sk, _ = ctx
    p = params.plain_modulus
    true = rand_plain(params, rng)
    ct = encrypt(true, sk, rng)
    broke = False
    for _ in range(6):
        factor = rand_plain(params, rng)
        ct = mul_plain(ct, factor)
        prod = gold.negacyclic_mul(true, factor).astype(object)
        signed = np.where(prod > GOLDILOCKS_Q // 2, prod - GOLDILOCKS_Q, prod)
        true = (signed % p).astype(np.uint64)
        if not np.array_equal(decrypt(ct, sk), true):
            broke = True
            break
    assert broke
    assert noise_budget(ct, sk, expected=true) <= 0


# -- serialization ----------------------------------------------------------------


def test_ciphertext_serialization_constant_size(ctx):
    params, rng, sk, _ = ctx
    sizes = set()
    for pt in (np.zeros(params.n, dtype=np.uint64), rand_plain(params, rng)):
        blob = encrypt(pt, sk, rng).serialize()
        sizes.add(len(blob))
        back = Ciphertext.deserialize(blob, params)
        assert np.array_equal(decrypt(back, sk), pt)
    assert sizes == {params.ciphertext_bytes()}


def test_ciphertext_rejects_wrong_params(ctx):
    params, rng, sk, _ = ctx
    blob = encrypt(rand_plain(params, rng), sk, rng).serialize()
    other = HeParams(plain_modulus=263)
    with pytest.raises(HeError):
        Ciphertext.deserialize(blob, other)


def test_galois_key_serialization_roundtrip(ctx):
    params, rng, sk, keys = ctx
    blob = keys.serialize()
    back = GaloisKeySet.deserialize(blob, params)
    assert set(back.keys) == set(keys.keys)
    g = params.galois_elements[2]
    pt = rand_plain(params, rng)
    got = decrypt(apply_automorphism(encrypt(pt, sk, rng), g, back), sk)
    assert np.array_equal(
        got, plaintext_substitution(pt, g, params.plain_modulus, params.n)
    )
