import dataclasses

import numpy as np
import pytest

from veilkv import varpir
from veilkv.dldp import ObfuscatedRange, PrivacyParams, obfuscate_range
from veilkv.hecore import HeParams, decrypt, gen_galois_keys, keygen
from veilkv.pgm import PgmIndex, PredictedRange
from veilkv.rng import Rng
from veilkv.store import KEY_SENTINEL, generate_dataset


@pytest.fixture(scope="module")
def he():
    return HeParams()


@pytest.fixture(scope="module")
def crypto(he):
    rng = Rng(77)
    sk = keygen(he, rng)
    return sk, gen_galois_keys(sk, he, rng), rng


@pytest.fixture(scope="module")
def small_world(he, crypto):
    sk, keys, rng = crypto
    store = generate_dataset(1 << 13, "uniform", 8, seed=21)
    idx = PgmIndex.build(store.keys)
    enc = varpir.encode_store(store, he, 64)
    return store, idx, enc


# -- encoding arithmetic -------------------------------------------------------


def test_paper_geometry_20_bit_limbs(he):
    he20 = dataclasses.replace(he, plain_modulus=1048583)
    ep = varpir.EncodingParams.derive(1 << 20, 128, he20, 64)
    assert ep.limb_bits == 20
    assert ep.slots_per_pair == 7
    assert ep.pairs_per_plaintext == 585
    assert ep.overlap_m == 292 and ep.step == 293


def test_default_geometry(he):
    ep = varpir.EncodingParams.derive(1 << 20, 128, he, 64)
    assert ep.limb_bits == 8
    assert ep.slots_per_pair == 16
    assert ep.pairs_per_plaintext == 256
    assert ep.step == 128
    assert ep.pt_count == (1 << 20) // 128
    # storage expansion factor M/step
    assert ep.pairs_per_plaintext / ep.step == 2.0


def test_fit_condition_enforced(he):
    with pytest.raises(varpir.EncodingError):
        varpir.EncodingParams.derive(1 << 16, 128, he, eps_data=200)


def _manual_params(n, m, step, pt_count):
    return varpir.EncodingParams(
        n=n,
        kv_bits=128,
        limb_bits=8,
        plain_modulus=257,
        slots_per_pair=16,
        pairs_per_plaintext=m,
        overlap_m=m - step,
        step=step,
        pt_count=pt_count,
    )


def test_block_layout_matches_worked_example():
    # M=4, step=2, n=12: block j holds positions [2j, 2j+4)
    ep = _manual_params(12, 4, 2, 6)
    assert ep.coverage(0) == (0, 4)
    assert ep.coverage(4) == (8, 12)
    assert varpir.pos_to_pt_id(5, ep) == 2
    assert varpir.pos_to_pt_id(11, ep) == 5
    assert varpir.pos_to_pt_id(0, ep) == 0


def test_query_one_hot_offset_matches_worked_example(he, crypto):
    # pred inside block 4, obfuscated blocks {2..5}: third selector is hot
    sk, _, rng = crypto
    ep = _manual_params(12, 4, 2, 6)
    pred = PredictedRange(9, 8, 10)
    obf = ObfuscatedRange("contiguous", 5, 11, 12)
    q = varpir.build_query(pred, obf, ep, sk, rng, version_id=1)
    assert (q.l_pt, q.r_pt) == (2, 5)
    assert q.ct_count == 1
    from veilkv.hecore import Ciphertext

    plain = decrypt(Ciphertext.deserialize(q.ct_blobs[0], sk.params), sk)
    w_pt = 4
    scale = pow(pow(2, 2, 257), -1, 257)
    expect = np.zeros(sk.params.n, dtype=np.uint64)
    expect[2] = scale
    assert np.array_equal(plain, expect)


def test_limb_roundtrip_random_pairs(he):
    ep = varpir.EncodingParams.derive(1 << 10, 128, he, 64)
    rng = Rng(3)
    for _ in range(200):
        key = int(rng.u64(1)[0] % (KEY_SENTINEL - 1))
        value = bytes(rng.take_bytes(8))
        limbs = varpir.pair_to_limbs(key, value, ep)
        assert varpir.limbs_to_pair(limbs, ep) == (key, value)


def test_limb_roundtrip_partial_tail(he):
    # 20-bit limbs over 128-bit pairs leave a 8-bit tail limb
    he20 = dataclasses.replace(he, plain_modulus=1048583)
    ep = varpir.EncodingParams.derive(1 << 10, 128, he20, 64)
    rng = Rng(4)
    for _ in range(100):
        key = int(rng.u64(1)[0] % (KEY_SENTINEL - 1))
        value = bytes(rng.take_bytes(8))
        limbs = varpir.pair_to_limbs(key, value, ep)
        assert int(limbs[-1]) < 1 << 8  # zero-padded high
        assert varpir.limbs_to_pair(limbs, ep) == (key, value)
    keys = rng.u64(64)
    vals = np.frombuffer(rng.take_bytes(64 * 8), dtype=np.uint8).reshape(64, 8)
    rows = varpir._pairs_to_limb_rows(keys, vals, ep)
    back_k, back_v = varpir._limb_rows_to_pairs(rows, ep)
    assert np.array_equal(back_k, keys)
    assert np.array_equal(back_v, vals)


def test_predicted_window_always_in_single_block(he):
    ep = varpir.EncodingParams.derive(100_000, 128, he, 64)
    pos = np.arange(100_000)
    lo = np.maximum(pos - 64, 0)
    hi = np.minimum(pos + 64, 100_000 - 1)
    block = np.minimum(lo // ep.step, ep.pt_count - 1)
    start = block * ep.step
    end = start + ep.pairs_per_plaintext
    assert (lo >= start).all()
    assert (hi < end).all()


def test_blocks_covering_oracle(he):
    ep = varpir.EncodingParams.derive(5000, 128, he, 64)
    for pos in (0, 77, 128, 4999, 2500):
        brute = [
            j
            for j in range(ep.pt_count)
            if ep.coverage(j)[0] <= pos < ep.coverage(j)[1]
        ]
        assert ep.blocks_covering(pos) == brute


def test_encode_decode_block(small_world, he, crypto):
    store, idx, enc = small_world
    # non-sentinel pairs of block j equal the store slice
    j = 10
    start, end = enc.params.coverage(j)
    rows = enc.limbs[j].reshape(
        enc.params.pairs_per_plaintext, enc.params.slots_per_pair
    )
    keys, values = varpir._limb_rows_to_pairs(rows, enc.params)
    span = min(end, store.n) - start
    assert np.array_equal(keys[:span], store.keys[start : start + span])
    assert np.array_equal(values[:span], store.values[start : start + span])


def test_tail_block_sentinel_padded(he):
    store = generate_dataset(300, "uniform", 8, seed=9)
    enc = varpir.encode_store(store, he, 64)
    last = enc.params.pt_count - 1
    rows = enc.limbs[last].reshape(-1, enc.params.slots_per_pair)
    keys, _ = varpir._limb_rows_to_pairs(rows, enc.params)
    start, _ = enc.params.coverage(last)
    real = store.n - start
    assert (keys[real:] == KEY_SENTINEL).all()


def test_answer_matches_store_scan(small_world, he, crypto):
    store, idx, enc = small_world
    sk, keys, rng = crypto
    params = PrivacyParams(t=40)
    for _ in range(15):
        i = int(rng.integers(store.n, 1)[0])
        key = int(store.keys[i])
        pred = idx.predict(key)
        obf = obfuscate_range(pred, store.n, params, rng)
        q = varpir.build_query(pred, obf, enc.params, sk, rng, enc.version_id)
        plain = decrypt(varpir.answer(enc, q, keys), sk)
        got = varpir.decode_answer(plain, key, pred, enc.params)
        assert got == store.lookup(key)


def test_absent_between_present(small_world, he, crypto):
    store, idx, enc = small_world
    sk, keys, rng = crypto
    probe = int(store.keys[500]) + 1
    if store.lookup(probe) is not None:
        probe += 1
    pred = idx.predict(probe)
    obf = obfuscate_range(pred, store.n, PrivacyParams(t=40), rng)
    q = varpir.build_query(pred, obf, enc.params, sk, rng, enc.version_id)
    plain = decrypt(varpir.answer(enc, q, keys), sk)
    assert varpir.decode_answer(plain, probe, pred, enc.params) is None


def test_uniform_access_instrumentation(small_world, he, crypto):
    store, idx, enc = small_world
    sk, keys, rng = crypto
    enc.enable_access_log()
    key = int(store.keys[123])
    pred = idx.predict(key)
    obf = ObfuscatedRange("contiguous", max(0, pred.lo - 500), min(store.n - 1, pred.hi + 700), store.n)
    q = varpir.build_query(pred, obf, enc.params, sk, rng, enc.version_id)
    varpir.answer(enc, q, keys)
    counts = enc.access_counts
    l_pt = varpir.pos_to_pt_id(obf.l, enc.params)
    r_pt = varpir.pos_to_pt_id(obf.r, enc.params)
    inside = np.arange(l_pt, r_pt + 1)
    assert (counts[inside] == 1).all()
    mask = np.ones(enc.params.pt_count, dtype=bool)
    mask[inside] = False
    assert (counts[mask] == 0).all()
    enc.access_counts = None


def test_stale_version_rejected(small_world, he, crypto):
    store, idx, enc = small_world
    sk, keys, rng = crypto
    pred = idx.predict(int(store.keys[0]))
    obf = ObfuscatedRange("contiguous", pred.lo, pred.hi, store.n)
    q = varpir.build_query(pred, obf, enc.params, sk, rng, enc.version_id + 5)
    with pytest.raises(varpir.StaleVersionError):
        varpir.answer(enc, q, keys)


def test_query_requires_coverage(small_world, he, crypto):
    store, idx, enc = small_world
    sk, _, rng = crypto
    pred = idx.predict(int(store.keys[4000]))
    bad = ObfuscatedRange("contiguous", 0, max(0, pred.lo - 2), store.n)
    with pytest.raises(ValueError):
        varpir.build_query(pred, bad, enc.params, sk, rng, enc.version_id)


def test_wrapped_gap_inside_one_block_degrades_to_full(small_world, he, crypto):
    # uncovered gap (r, l) inside a single block: every block participates
    store, idx, enc = small_world
    sk, keys, rng = crypto
    step = enc.params.step
    key = int(store.keys[10])
    pred = idx.predict(key)
    gap_block = 40
    l = gap_block * step + step // 2 + 10
    r = gap_block * step + step // 2
    obf = ObfuscatedRange("wrapped", l, r, store.n)
    assert varpir.pos_to_pt_id(l, enc.params) == varpir.pos_to_pt_id(r, enc.params)
    q = varpir.build_query(pred, obf, enc.params, sk, rng, enc.version_id)
    assert (q.l_pt, q.r_pt) == (0, enc.params.pt_count - 1)
    plain = decrypt(varpir.answer(enc, q, keys), sk)
    assert varpir.decode_answer(plain, key, pred, enc.params) == store.lookup(key)


def test_wrapped_range_enumerates_cyclically(small_world, he, crypto):
    store, idx, enc = small_world
    sk, keys, rng = crypto
    key = int(store.keys[50])  # early position; wrapped range covers it
    pred = idx.predict(key)
    obf = ObfuscatedRange("wrapped", store.n - 200, pred.hi + 100, store.n)
    assert obf.covers(pred.lo, pred.hi)
    q = varpir.build_query(pred, obf, enc.params, sk, rng, enc.version_id)
    assert q.r_pt < q.l_pt
    plain = decrypt(varpir.answer(enc, q, keys), sk)
    assert varpir.decode_answer(plain, key, pred, enc.params) == store.lookup(key)
