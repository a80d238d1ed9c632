"""Client half: offline initialization and the online lookup pipeline.

A session downloads the init bundle (parameters plus serialized index),
generates its secret and Galois keys, uploads the Galois keys, and then
answers lookups via predict -> obfuscate -> select scheme -> retrieve ->
verify.  On a stale-version notice it installs the shipped index and
re-executes the query against the new version, up to a small retry cap.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .. import varpir
from ..dldp import (
    DEFAULT_EPS_DP,
    ObfuscatedRange,
    PrivacyParams,
    effective_noise_distance,
    obfuscate_range,
)
from ..hecore import cipher as hc
from ..pgm import PgmIndex
from ..rng import Rng
from ..store import KEY_BYTES
from . import cost, wire
from .transport import Transport


class ClientError(RuntimeError):
    """Initialization or lookup failed at the protocol level."""


class ServerSideError(ClientError):
    """The server answered with an error frame."""

    def __init__(self, code: int, message: str):
        super().__init__(f"server error {code}: {message}")
        self.code = code


@dataclass
class LookupMetrics:
    """Per-lookup record for benchmarks and the cost-model tests."""

    scheme: str = ""
    range_len_items: int = 0
    w_pt: int = 0
    cost_plain_s: float = 0.0
    cost_varpir_s: float = 0.0
    transfer_s: float = 0.0
    rtt_s: float = 0.0
    service_wall_s: float = 0.0
    client_wall_s: float = 0.0
    stale_retries: int = 0
    up_bytes: int = 0
    down_bytes: int = 0

    @property
    def latency_s(self) -> float:
        """End-to-end latency: virtual transfer + rtt + measured compute."""
        return self.transfer_s + self.rtt_s + self.service_wall_s + self.client_wall_s


class ClientSession:
    """One client endpoint; single request in flight at a time.

    Args:
        transport: channel to the server (TCP, loopback, or simulated).
        rng: randomness for privacy noise and encryption; defaults to a
            fresh OS-seeded generator.
        scheme: "auto" (cost model), "plain", or "varpir".
        adjusted_t: when True (default), the user distance t has
            2*eps_data reserved for index error before noise scaling.
    """

    MAX_STALE_RETRIES = 3

    def __init__(
        self,
        transport: Transport,
        rng: Rng | None = None,
        scheme: str = "auto",
        adjusted_t: bool = True,
    ):
        if scheme not in ("auto", cost.PLAIN_DOWNLOAD, cost.VARPIR):
            raise ValueError(f"unknown scheme {scheme!r}")
        self.transport = transport
        self.rng = rng or Rng()
        self.default_scheme = scheme
        self.adjusted_t = adjusted_t
        self.bundle: wire.InitBundle | None = None
        self.pgm: PgmIndex | None = None
        self.version_id = 0
        self.sk: hc.SecretKey | None = None
        self.last_metrics = LookupMetrics()
        self._init()

    # -- offline phase ------------------------------------------------------

    def _init(self):
        resp_type, payload = self._request(wire.MSG_INIT_REQ, b"")
        if resp_type != wire.MSG_INIT_RESP:
            raise ClientError(f"unexpected init response type {resp_type:#x}")
        try:
            bundle = wire.InitBundle.decode(payload)
            pgm = PgmIndex.deserialize(bundle.pgm_blob)
        except Exception as exc:
            raise ClientError(f"malformed init bundle: {exc}") from exc
        if pgm.n != bundle.n:
            raise ClientError("index does not match the advertised pair count")
        self.bundle = bundle
        self.pgm = pgm
        self.version_id = bundle.version_id
        self.sk = hc.keygen(bundle.he, self.rng)
        galois = hc.gen_galois_keys(self.sk, bundle.he, self.rng)
        resp_type, _ = self._request(wire.MSG_GALOIS_KEYS, galois.serialize())
        if resp_type != wire.MSG_GALOIS_KEYS:
            raise ClientError("galois key upload rejected")

    def _request(self, msg_type: int, payload: bytes) -> tuple[int, bytes]:
        resp_type, resp = self.transport.request(msg_type, payload)
        if resp_type == wire.MSG_ERROR:
            code, message = wire.decode_error(resp)
            raise ServerSideError(code, message)
        return resp_type, resp

    # -- online phase ---------------------------------------------------------

    def cost_inputs(self, bandwidth_bps=None, rtt_s=None) -> cost.CostInputs:
        bundle = self.bundle
        ct_bytes = bundle.he.ciphertext_bytes()
        return cost.CostInputs(
            bandwidth_bps=bandwidth_bps or bundle.bandwidth_hint,
            rtt_s=bundle.rtt_hint if rtt_s is None else rtt_s,
            c_fhe_s=bundle.c_fhe_per_plaintext,
            pair_bytes=bundle.kv_bits // 8,
            query_ct_bytes=ct_bytes,
            answer_ct_bytes=ct_bytes,
            ring_degree=bundle.he.ring_degree,
        )

    def lookup(
        self,
        key: int,
        t: int,
        eps_dp: float = DEFAULT_EPS_DP,
        scheme: str | None = None,
        bandwidth_bps: float | None = None,
        rtt_s: float | None = None,
    ) -> bytes | None:
        """Private lookup; returns the value or None when absent.

        Raises:
            ClientError: transport failure or repeated staleness.
        """
        chosen = scheme or self.default_scheme
        metrics = LookupMetrics()
        t_start = time.perf_counter()
        for attempt in range(self.MAX_STALE_RETRIES + 1):
            pred = self.pgm.predict(key)
            t_eff = effective_noise_distance(t, self.pgm.eps_data, self.adjusted_t)
            params = PrivacyParams(t=t_eff, eps_dp=eps_dp)
            obf = obfuscate_range(pred, self.bundle.n, params, self.rng)
            metrics.range_len_items = obf.covered_count
            metrics.w_pt = self._w_pt(obf)
            inputs = self.cost_inputs(bandwidth_bps, rtt_s)
            pick, c_plain, c_var = cost.select_scheme(
                obf.covered_count, metrics.w_pt, inputs
            )
            metrics.cost_plain_s, metrics.cost_varpir_s = c_plain, c_var
            metrics.scheme = pick if chosen == "auto" else chosen
            if metrics.scheme == cost.PLAIN_DOWNLOAD:
                outcome = self._lookup_plain(key, pred, obf, metrics)
            else:
                outcome = self._lookup_varpir(key, pred, obf, metrics)
            if outcome is not _STALE:
                metrics.client_wall_s = (
                    time.perf_counter() - t_start
                ) - metrics.service_wall_s
                self.last_metrics = metrics
                return outcome
            metrics.stale_retries += 1
        raise ClientError("query kept hitting retired versions")

    def _w_pt(self, obf: ObfuscatedRange) -> int:
        enc = self.bundle.encoding
        l_pt, r_pt = varpir.block_range(obf, enc)
        return varpir.covered_pt_width(l_pt, r_pt, enc.pt_count)

    def _record_transfer(self, metrics: LookupMetrics):
        last = getattr(self.transport, "last", None)
        if last is not None:
            metrics.transfer_s += last.transfer_s
            metrics.rtt_s += last.rtt_s
            metrics.service_wall_s += last.service_wall_s
            metrics.up_bytes += last.up_bytes
            metrics.down_bytes += last.down_bytes

    def _lookup_plain(self, key, pred, obf, metrics):
        payload = wire.encode_query_plain(self.version_id, obf.kind, obf.l, obf.r)
        resp_type, resp = self._request(wire.MSG_QUERY_PLAIN, payload)
        self._record_transfer(metrics)
        if resp_type == wire.MSG_STALE_VERSION:
            self._install_new_version(resp)
            return _STALE
        if resp_type != wire.MSG_RESP_PLAIN:
            raise ClientError(f"unexpected response type {resp_type:#x}")
        return self._search_pairs(resp, key)

    def _search_pairs(self, blob: bytes, key: int) -> bytes | None:
        pair_bytes = self.bundle.kv_bits // 8
        if len(blob) % pair_bytes:
            raise ClientError("ragged plain download")
        pairs = np.frombuffer(blob, dtype=np.uint8).reshape(-1, pair_bytes)
        keys = pairs[:, :KEY_BYTES].copy().view("<u8").reshape(-1)
        hits = np.nonzero(keys == np.uint64(key))[0]
        if len(hits) == 0:
            return None
        return pairs[int(hits[0]), KEY_BYTES:].tobytes()

    def _lookup_varpir(self, key, pred, obf, metrics):
        query = varpir.build_query(
            pred, obf, self.bundle.encoding, self.sk, self.rng, self.version_id
        )
        payload = wire.encode_query_varpir(
            query.version_id, query.kind, query.l_pt, query.r_pt, query.ct_blobs
        )
        resp_type, resp = self._request(wire.MSG_QUERY_VARPIR, payload)
        self._record_transfer(metrics)
        if resp_type == wire.MSG_STALE_VERSION:
            self._install_new_version(resp)
            return _STALE
        if resp_type != wire.MSG_RESP_VARPIR:
            raise ClientError(f"unexpected response type {resp_type:#x}")
        answer_ct = hc.Ciphertext.deserialize(resp, self.bundle.he)
        plain = hc.decrypt(answer_ct, self.sk)
        return varpir.decode_answer(plain, key, pred, self.bundle.encoding)

    def _install_new_version(self, payload: bytes):
        new_version, pgm_blob, _inner_type, _inner = wire.decode_stale(payload)
        try:
            self.pgm = PgmIndex.deserialize(pgm_blob)
        except Exception as exc:
            raise ClientError(f"stale notice carried a bad index: {exc}") from exc
        self.version_id = new_version
        self.bundle.version_id = new_version
        self.bundle.n = self.pgm.n
        self.bundle.encoding = varpir.EncodingParams.derive(
            self.pgm.n, self.bundle.kv_bits, self.bundle.he, self.pgm.eps_data
        )

    # -- admin (local tooling) -------------------------------------------------

    def close(self):
        self.transport.close()


_STALE = object()
