import numpy as np
import pytest

from veilkv.hecore import HeParams
from veilkv.protocol import (
    ClientError,
    ClientSession,
    CostInputs,
    LoopbackTransport,
    Server,
    SimulatedTransport,
    QueryService,
    TcpTransport,
    handle_plain_download,
    select_scheme,
)
from veilkv.protocol import wire
from veilkv.protocol.transport import Transport
from veilkv.rng import Rng
from veilkv.store import derive_value, generate_dataset
from veilkv.versions import VersionedStore


@pytest.fixture(scope="module")
def world():
    store = generate_dataset(1 << 13, "uniform", 8, seed=31)
    oracle = {int(k): v.tobytes() for k, v in zip(store.keys, store.values)}
    versions = VersionedStore(store, HeParams())
    service = QueryService(versions)
    return service, oracle, list(oracle)


def new_session(service, seed=1, **kw):
    return ClientSession(LoopbackTransport(service), rng=Rng(seed), **kw)


# -- cost model ----------------------------------------------------------------


def test_select_scheme_worked_example():
    inputs = CostInputs(
        bandwidth_bps=50e6,
        rtt_s=0.0,
        c_fhe_s=1e-3,
        pair_bytes=16,
        query_ct_bytes=65_600,
        answer_ct_bytes=65_600,
        ring_degree=4096,
    )
    scheme, c_plain, c_var = select_scheme(25_729, 89, inputs)
    assert scheme == "plain"
    assert c_plain == pytest.approx(25_729 * 16 * 8 / 50e6, rel=1e-12)
    assert c_var == pytest.approx((65_600 * 2 * 8) / 50e6 + 89 * 1e-3, rel=1e-12)
    assert c_plain < c_var


def test_select_scheme_dominated_case():
    # zero compute cost and cheaper ciphertext transfer: varpir must win
    inputs = CostInputs(
        bandwidth_bps=10e6,
        rtt_s=0.030,
        c_fhe_s=0.0,
        pair_bytes=16,
        query_ct_bytes=1000,
        answer_ct_bytes=1000,
        ring_degree=4096,
    )
    scheme, c_plain, c_var = select_scheme(10_000, 50, inputs)
    assert scheme == "varpir"
    assert c_var < c_plain


def test_select_scheme_tie_prefers_plain():
    inputs = CostInputs(
        bandwidth_bps=1e6,
        rtt_s=0.0,
        c_fhe_s=0.0,
        pair_bytes=1,
        query_ct_bytes=0,
        answer_ct_bytes=8,
        ring_degree=4096,
    )
    # 8 pair-bytes == 8 answer bytes, identical transfer
    scheme, c_plain, c_var = select_scheme(8, 1, inputs)
    assert c_plain == c_var
    assert scheme == "plain"


# -- simulated transport ---------------------------------------------------------


def test_simulated_transfer_arithmetic():
    assert SimulatedTransport.transfer_seconds(1_000_000, 50e6) == pytest.approx(0.16)


class _EchoService:
    def new_session(self):
        return 1

    def handle(self, session, msg_type, payload, admin=False):
        return msg_type, payload


def test_simulated_zero_byte_rtt_only():
    tr = SimulatedTransport(LoopbackTransport(_EchoService()), 50e6, 0.030)
    tr.request(0x01, b"")
    # only the 5-byte frame headers ride the wire
    assert tr.last.rtt_s == 0.030
    assert tr.last.transfer_s == pytest.approx(10 * 8 / 50e6)
    assert abs(tr.last.total_s - 0.030) < 1e-3


def test_simulated_delays_additive():
    tr = SimulatedTransport(LoopbackTransport(_EchoService()), 1e6, 0.010)
    tr.request(0x01, b"x" * 100)
    first = tr.total_virtual_s
    tr.request(0x01, b"x" * 100)
    assert tr.total_virtual_s == pytest.approx(2 * first)


# -- plain download handler --------------------------------------------------------


def test_plain_download_shapes(world):
    service, oracle, keys = world
    store = service.versions.active.store
    single = handle_plain_download(store, 5, 5, "contiguous")
    assert len(single) == store.pair_bytes
    full = handle_plain_download(store, 0, store.n - 1, "full")
    assert len(full) == store.n * store.pair_bytes
    wrapped = handle_plain_download(store, store.n - 2, 1, "wrapped")
    # brute-force cyclic slice oracle
    expect = store.slice_pairs(store.n - 2, store.n - 1) + store.slice_pairs(0, 1)
    assert wrapped == expect
    assert len(wrapped) == 4 * store.pair_bytes


# -- init ---------------------------------------------------------------------------


def test_init_bundle_and_index_quality(world):
    service, oracle, keys = world
    session = new_session(service, seed=2)
    store = service.versions.active.store
    yh = session.pgm.predict_batch(store.keys)
    assert (np.abs(yh - np.arange(store.n)) <= 64).all()
    assert session.bundle.n == store.n
    assert session.bundle.c_fhe_per_plaintext > 0


def test_init_rejects_corrupt_index(world):
    service, oracle, keys = world

    class Corrupting(Transport):
        def __init__(self, inner):
            self.inner = inner

        def request(self, msg_type, payload):
            resp_type, resp = self.inner.request(msg_type, payload)
            if resp_type == wire.MSG_INIT_RESP:
                resp = resp.replace(b"FPGM", b"XXXX")  # break the index magic
            return resp_type, resp

    with pytest.raises(ClientError):
        ClientSession(Corrupting(LoopbackTransport(service)), rng=Rng(3))


# -- lookups over TCP -----------------------------------------------------------------


def test_tcp_end_to_end(world):
    service, oracle, keys = world
    server = Server(service.versions)
    server.start()
    try:
        host, port = server.address
        tr = TcpTransport(host, port)
        session = ClientSession(tr, rng=Rng(4))
        k = keys[137]
        assert session.lookup(k, t=300, scheme="plain") == oracle[k]
        assert session.lookup(k, t=300, scheme="varpir") == oracle[k]
        absent = k + 1
        while absent in oracle:
            absent += 1
        assert session.lookup(absent, t=300) is None
        # admin over the local endpoint
        ahost, aport = server.admin_address
        admin = TcpTransport(ahost, aport)
        new_value = b"\x11" * 8
        rt, _ = admin.request(
            wire.MSG_ADMIN_UPDATE_VALUE, wire.encode_admin_update_value(k, new_value)
        )
        assert rt == wire.MSG_ADMIN_UPDATE_VALUE
        assert session.lookup(k, t=300, scheme="plain") == new_value
        assert session.lookup(k, t=300, scheme="varpir") == new_value
        oracle[k] = new_value
        # admin rejected on the public endpoint
        rt, payload = tr.request(
            wire.MSG_ADMIN_UPDATE_VALUE, wire.encode_admin_update_value(k, new_value)
        )
        assert rt == wire.MSG_ERROR
        code, _ = wire.decode_error(payload)
        assert code == wire.ERR_ADMIN_ONLY
        admin.close()
        session.close()
    finally:
        server.stop()


def test_zero_noise_plain_downloads_exact_window(world, monkeypatch):
    service, oracle, keys = world
    from veilkv import dldp

    monkeypatch.setattr(dldp, "sample_boundary_offset", lambda lam, rng, count=None: 0)
    session = ClientSession(
        SimulatedTransport(LoopbackTransport(service), 50e6, 0.030),
        rng=Rng(5),
        adjusted_t=False,
    )
    k = keys[4000]
    assert session.lookup(k, t=300, scheme="plain") == oracle[k]
    # interior window, unclamped: exactly 2*eps_data + 1 pairs downloaded
    pair_bytes = session.bundle.kv_bits // 8
    assert session.last_metrics.down_bytes == 129 * pair_bytes + 5


def test_stale_version_flow(world):
    service, oracle, keys = world
    session = new_session(service, seed=6)
    old_vid = session.version_id
    ins = keys[-1] + 17
    while ins in oracle:
        ins += 1
    admin = LoopbackTransport(service, admin=True)
    rt, payload = admin.request(
        wire.MSG_ADMIN_BATCH_UPDATE,
        wire.encode_admin_batch([(ins, derive_value(ins, 8))], [keys[3]], 8),
    )
    assert rt == wire.MSG_ADMIN_BATCH_UPDATE
    new_vid = int.from_bytes(payload, "little")
    assert new_vid == old_vid + 1
    got = session.lookup(ins, t=300, scheme="varpir")
    assert got == derive_value(ins, 8)
    assert session.last_metrics.stale_retries == 1
    assert session.version_id == new_vid
    assert session.lookup(keys[3], t=300, scheme="plain") is None
    oracle[ins] = derive_value(ins, 8)
    del oracle[keys[3]]
    world[2].append(ins)
    world[2].remove(keys[3])


def test_version_monotone_across_reinit(world):
    service, oracle, keys = world
    before = new_session(service, seed=7).version_id
    admin = LoopbackTransport(service, admin=True)
    admin.request(wire.MSG_ADMIN_BATCH_UPDATE, wire.encode_admin_batch([], [], 8))
    after = new_session(service, seed=8).version_id
    assert after == before + 1


def test_noop_batch_update_preserves_content(world):
    service, oracle, keys = world
    old = service.versions.active
    admin = LoopbackTransport(service, admin=True)
    admin.request(wire.MSG_ADMIN_BATCH_UPDATE, wire.encode_admin_batch([], [], 8))
    new = service.versions.active
    assert new.version_id == old.version_id + 1
    assert np.array_equal(new.store.keys, old.store.keys)
    assert np.array_equal(new.store.values, old.store.values)
    assert np.array_equal(new.enc.limbs, old.enc.limbs)
    assert new.pgm.serialize() == old.pgm.serialize()


# -- privacy-relevant message shape ---------------------------------------------------


def test_plain_fields_identical_for_shared_range(world):
    service, oracle, keys = world
    from veilkv.dldp import ObfuscatedRange
    from veilkv import varpir

    session = new_session(service, seed=9)
    store = service.versions.active.store
    enc_params = session.bundle.encoding
    # two different true keys inside one block share an obfuscated range
    k1, k2 = int(store.keys[1000]), int(store.keys[1010])
    obf = ObfuscatedRange("contiguous", 800, 1400, store.n)
    payloads = []
    ct_blobs = []
    for key in (k1, k2):
        pred = session.pgm.predict(key)
        q = varpir.build_query(
            pred, obf, enc_params, session.sk, session.rng, session.version_id
        )
        payloads.append(
            wire.encode_query_varpir(q.version_id, q.kind, q.l_pt, q.r_pt, q.ct_blobs)
        )
        ct_blobs.append(b"".join(q.ct_blobs))
    head = len(payloads[0]) - len(ct_blobs[0])
    assert payloads[0][:head] == payloads[1][:head]
    assert len(payloads[0]) == len(payloads[1])
    assert ct_blobs[0] != ct_blobs[1]  # fresh encryption randomness
    # plain-download query bytes are fully identical
    p1 = wire.encode_query_plain(1, obf.kind, obf.l, obf.r)
    p2 = wire.encode_query_plain(1, obf.kind, obf.l, obf.r)
    assert p1 == p2
