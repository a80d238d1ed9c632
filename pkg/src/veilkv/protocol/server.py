"""Server half: session management, query dispatch, and the TCP listeners.

Clients are read-only; value and batch-key updates arrive on a separate
local-only admin endpoint.  Each query executes against the version
snapshot it names.  Queries naming a superseded version are answered from
that version (while it is retained) inside a stale notice that carries the
new version id and index, and the client re-executes.
"""

from __future__ import annotations

import itertools
import socket
import socketserver
import threading
import time

import numpy as np

from .. import varpir
from ..hecore import GaloisKeySet, HeError
from ..hecore import cipher as hc
from ..hecore import gold
from ..rng import Rng
from ..store import KeyNotFoundError
from ..versions import StoreVersion, UpdateConflictError, VersionedStore
from . import wire


class QueryService:
    """Transport-agnostic request handler; one instance serves many sessions."""

    def __init__(
        self,
        versions: VersionedStore,
        bandwidth_hint: float = 50e6,
        rtt_hint: float = 0.030,
    ):
        self.versions = versions
        self.bandwidth_hint = bandwidth_hint
        self.rtt_hint = rtt_hint
        self._session_counter = itertools.count(1)
        self._galois: dict[int, GaloisKeySet] = {}
        self._galois_lock = threading.Lock()
        self.c_fhe_per_plaintext = self._calibrate_c_fhe()

    # -- sessions ---------------------------------------------------------

    def new_session(self) -> int:
        return next(self._session_counter)

    def drop_session(self, session: int):
        with self._galois_lock:
            self._galois.pop(session, None)

    def _calibrate_c_fhe(self, sample_blocks: int = 96) -> float:
        """Mean per-plaintext cost of the answer pipeline, measured once.

        Runs a throwaway expansion plus multiply/accumulate chain over
        ``sample_blocks`` blocks of the active encoding (after a warmup
        pass so compilation does not pollute the estimate).  The sample
        width is deliberately not a power of two: expansion always runs to
        the next power of two, and a mid-range width matches the average
        per-block cost a real query sees.
        """
        version = self.versions.active
        he = version.enc.he
        rng = Rng(0)
        sk = hc.keygen(he, rng)
        keys = hc.gen_galois_keys(sk, he, rng)
        w = min(sample_blocks, version.enc.params.pt_count, he.ring_degree)
        poly = np.zeros(he.ring_degree, dtype=np.uint64)
        poly[0] = hc.expansion_scale(w, he)
        query = hc.encrypt(poly, sk, rng).to_ntt()
        ids = np.arange(w, dtype=np.int64)
        acc0 = np.zeros(he.ring_degree, dtype=np.uint64)
        acc1 = np.zeros(he.ring_degree, dtype=np.uint64)

        def run():
            c0, c1 = hc.expand_batch(query.c0[None, :], query.c1[None, :], w, keys, he)
            gold.accumulate_products(acc0, acc1, c0, c1, version.enc.ntt, ids)

        run()  # warmup, includes JIT
        t0 = time.perf_counter()
        run()
        return (time.perf_counter() - t0) / w

    # -- dispatch -----------------------------------------------------------

    def handle(
        self, session: int, msg_type: int, payload: bytes, admin: bool = False
    ) -> tuple[int, bytes]:
        try:
            if msg_type == wire.MSG_INIT_REQ:
                return self._handle_init()
            if msg_type == wire.MSG_GALOIS_KEYS:
                return self._handle_galois(session, payload)
            if msg_type == wire.MSG_QUERY_PLAIN:
                return self._handle_plain(session, payload)
            if msg_type == wire.MSG_QUERY_VARPIR:
                return self._handle_varpir(session, payload)
            if msg_type == wire.MSG_ADMIN_UPDATE_VALUE:
                if not admin:
                    return _err(wire.ERR_ADMIN_ONLY, "update on public endpoint")
                return self._handle_update_value(payload)
            if msg_type == wire.MSG_ADMIN_BATCH_UPDATE:
                if not admin:
                    return _err(wire.ERR_ADMIN_ONLY, "update on public endpoint")
                return self._handle_batch(payload)
            return _err(wire.ERR_BAD_MESSAGE, f"unknown message type {msg_type:#x}")
        except wire.WireError as exc:
            return _err(wire.ERR_BAD_MESSAGE, str(exc))
        except KeyNotFoundError as exc:
            return _err(wire.ERR_KEY_NOT_FOUND, str(exc))
        except UpdateConflictError as exc:
            return _err(wire.ERR_UPDATE_CONFLICT, str(exc))
        except HeError as exc:
            return _err(wire.ERR_BAD_MESSAGE, str(exc))
        except Exception as exc:  # noqa: BLE001 - surface as protocol error
            return _err(wire.ERR_INTERNAL, f"{type(exc).__name__}: {exc}")

    def _handle_init(self) -> tuple[int, bytes]:
        version = self.versions.active
        bundle = wire.InitBundle(
            n=version.store.n,
            kv_bits=version.store.kv_bits,
            version_id=version.version_id,
            schemes=(wire.SCHEME_PLAIN, wire.SCHEME_VARPIR),
            he=version.enc.he,
            encoding=version.enc.params,
            pgm_blob=version.pgm.serialize(),
            c_fhe_per_plaintext=self.c_fhe_per_plaintext,
            bandwidth_hint=self.bandwidth_hint,
            rtt_hint=self.rtt_hint,
        )
        return wire.MSG_INIT_RESP, bundle.encode()

    def _handle_galois(self, session: int, payload: bytes) -> tuple[int, bytes]:
        keys = GaloisKeySet.deserialize(payload, self.versions.active.enc.he)
        with self._galois_lock:
            self._galois[session] = keys
        return wire.MSG_GALOIS_KEYS, b""

    def _resolve_version(self, version_id: int) -> tuple[StoreVersion, bool]:
        version = self.versions.get_version(version_id)
        if version is None:
            raise _VersionExpired(version_id)
        return version, version_id != self.versions.active.version_id

    def _handle_plain(self, session: int, payload: bytes) -> tuple[int, bytes]:
        version_id, kind, l, r = wire.decode_query_plain(payload)
        try:
            version, stale = self._resolve_version(version_id)
        except _VersionExpired:
            return _err(wire.ERR_VERSION_EXPIRED, f"version {version_id} retired")
        blob = handle_plain_download(version.store, l, r, kind)
        self.versions.acknowledge(session, version_id)
        if stale:
            return self._wrap_stale(wire.MSG_RESP_PLAIN, blob)
        return wire.MSG_RESP_PLAIN, blob

    def _handle_varpir(self, session: int, payload: bytes) -> tuple[int, bytes]:
        he = self.versions.active.enc.he
        version_id, kind, l_pt, r_pt, blobs = wire.decode_query_varpir(
            payload, he.ciphertext_bytes()
        )
        with self._galois_lock:
            keys = self._galois.get(session)
        if keys is None:
            return _err(wire.ERR_BAD_MESSAGE, "no galois keys registered")
        try:
            version, stale = self._resolve_version(version_id)
        except _VersionExpired:
            return _err(wire.ERR_VERSION_EXPIRED, f"version {version_id} retired")
        query = varpir.VarPirQuery(version_id, kind, l_pt, r_pt, blobs)
        answer_ct = varpir.answer(version.enc, query, keys)
        self.versions.acknowledge(session, version_id)
        blob = answer_ct.serialize()
        if stale:
            return self._wrap_stale(wire.MSG_RESP_VARPIR, blob)
        return wire.MSG_RESP_VARPIR, blob

    def _wrap_stale(self, inner_type: int, inner: bytes) -> tuple[int, bytes]:
        active = self.versions.active
        payload = wire.encode_stale(
            active.version_id, active.pgm.serialize(), inner_type, inner
        )
        return wire.MSG_STALE_VERSION, payload

    def _handle_update_value(self, payload: bytes) -> tuple[int, bytes]:
        key, value = wire.decode_admin_update_value(payload)
        self.versions.update_value(key, value)
        return wire.MSG_ADMIN_UPDATE_VALUE, b""

    def _handle_batch(self, payload: bytes) -> tuple[int, bytes]:
        value_bytes = self.versions.active.store.value_bytes
        inserts, deletes = wire.decode_admin_batch(payload, value_bytes)
        new_vid = self.versions.batch_update_keys(inserts, deletes)
        return wire.MSG_ADMIN_BATCH_UPDATE, new_vid.to_bytes(8, "little")


class _VersionExpired(Exception):
    def __init__(self, version_id: int):
        super().__init__(f"version {version_id} expired")
        self.version_id = version_id


def _err(code: int, message: str) -> tuple[int, bytes]:
    return wire.MSG_ERROR, wire.encode_error(code, message)


def handle_plain_download(store, l: int, r: int, kind: str) -> bytes:
    """Raw pair bytes of the disclosed range; a copy, no computation.

    Contiguous ranges stream pairs [l, r]; wrapped ranges stream
    [l, n-1] then [0, r] in cyclic order; full ranges stream everything.
    """
    n = store.n
    if kind == "full":
        return store.slice_pairs(0, n - 1)
    if not (0 <= l < n and 0 <= r < n):
        raise wire.WireError(f"range [{l}, {r}] outside store of {n}")
    if kind == "contiguous":
        if l > r:
            raise wire.WireError("contiguous range with l > r")
        return store.slice_pairs(l, r)
    if r >= l:
        raise wire.WireError("wrapped range with r >= l")
    return store.slice_pairs(l, n - 1) + store.slice_pairs(0, r)


# -- TCP layer ---------------------------------------------------------------


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        service: QueryService = self.server.service  # type: ignore[attr-defined]
        admin: bool = self.server.admin_endpoint  # type: ignore[attr-defined]
        session = service.new_session()
        try:
            while True:
                try:
                    msg_type, payload = wire.recv_message(self.request)
                except (ConnectionError, OSError):
                    return
                resp_type, resp = service.handle(session, msg_type, payload, admin)
                try:
                    self.request.sendall(wire.frame(resp_type, resp))
                except OSError:
                    return
        finally:
            service.drop_session(session)


class _ThreadedServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class Server:
    """TCP front end: a public query endpoint and a local-only admin one."""

    def __init__(
        self,
        versions: VersionedStore,
        host: str = "127.0.0.1",
        port: int = 0,
        admin_port: int = 0,
        bandwidth_hint: float = 50e6,
        rtt_hint: float = 0.030,
    ):
        self.service = QueryService(versions, bandwidth_hint, rtt_hint)
        self._public = _ThreadedServer((host, port), _Handler)
        self._public.service = self.service  # type: ignore[attr-defined]
        self._public.admin_endpoint = False  # type: ignore[attr-defined]
        self._admin = _ThreadedServer(("127.0.0.1", admin_port), _Handler)
        self._admin.service = self.service  # type: ignore[attr-defined]
        self._admin.admin_endpoint = True  # type: ignore[attr-defined]
        self._threads: list[threading.Thread] = []

    @property
    def address(self) -> tuple[str, int]:
        return self._public.server_address  # type: ignore[return-value]

    @property
    def admin_address(self) -> tuple[str, int]:
        return self._admin.server_address  # type: ignore[return-value]

    def start(self):
        for srv in (self._public, self._admin):
            thread = threading.Thread(target=srv.serve_forever, daemon=True)
            thread.start()
            self._threads.append(thread)

    def stop(self):
        for srv in (self._public, self._admin):
            srv.shutdown()
            srv.server_close()
