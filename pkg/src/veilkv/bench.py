"""Desk-scale reproductions of the framework's quantitative claims.

Each routine returns CSV-ready rows (list of dicts) so the CLI can write
delimited output; all randomised columns are deterministic under a fixed
seed, wall-clock columns are not.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass

import numpy as np

from . import dldp, varpir
from .hecore import HeParams
from .pgm import PgmIndex
from .protocol import (
    ClientSession,
    LoopbackTransport,
    QueryService,
    SimulatedTransport,
)
from .rng import Rng
from .store import generate_dataset
from .versions import VersionedStore

RANGE_LENGTH_COLUMNS = ("mechanism", "t", "mean_len", "expected_len")
INDEX_SIZE_COLUMNS = ("dataset", "n", "eps_data", "size_bytes", "size_mib", "levels")
CROSSOVER_COLUMNS = (
    "bandwidth_mbps",
    "t",
    "chosen",
    "model_plain_s",
    "model_varpir_s",
    "measured_plain_s",
    "measured_varpir_s",
    "measured_argmin",
)
UPDATES_COLUMNS = ("mode", "queries", "total_s", "overhead_ratio", "all_correct")


def bench_range_lengths(
    t_values: list[int],
    eps_dp: float = dldp.DEFAULT_EPS_DP,
    eps_data: int = 64,
    page_m: int = 256,
    trials: int = 1_000_000,
    n: int = 1 << 24,
    seed: int = 0,
) -> list[dict]:
    """Monte Carlo mean covered lengths at item and page granularity."""
    rng = Rng(seed)
    rows = []
    center = n // 2
    for t in t_values:
        params = dldp.PrivacyParams(t=t, eps_dp=eps_dp)
        item_lengths = dldp.obfuscate_range_batch(
            center - eps_data, center + eps_data, n, params, rng, trials
        )
        rows.append(
            {
                "mechanism": "item",
                "t": t,
                "mean_len": float(np.mean(item_lengths)),
                "expected_len": dldp.expected_range_length(t, eps_dp, eps_data, n),
            }
        )
        page_lengths = dldp.btree_range_lengths_batch(
            n // page_m, page_m, params, rng, trials
        )
        rows.append(
            {
                "mechanism": "page",
                "t": t,
                "mean_len": float(np.mean(page_lengths)),
                "expected_len": dldp.btree_expected_range_length(t, eps_dp, page_m),
            }
        )
    return rows


def bench_index_size(
    dataset_specs: list[tuple[str, int]],
    eps_values: list[int],
    seed: int = 0,
) -> list[dict]:
    """Serialized index sizes across datasets and leaf error bounds."""
    rows = []
    for dist, n in dataset_specs:
        store = generate_dataset(n, dist, 8, seed=seed)
        for eps in eps_values:
            idx = PgmIndex.build(store.keys, eps_data=eps)
            size = idx.size_bytes()
            rows.append(
                {
                    "dataset": dist,
                    "n": n,
                    "eps_data": eps,
                    "size_bytes": size,
                    "size_mib": size / (1 << 20),
                    "levels": len(idx.levels),
                }
            )
    return rows


@dataclass
class _Bench:
    service: QueryService
    oracle: dict[int, bytes]
    keys: np.ndarray


def _serve(n: int, seed: int, he: HeParams | None = None) -> _Bench:
    store = generate_dataset(n, "uniform", 8, seed=seed)
    oracle = {int(k): v.tobytes() for k, v in zip(store.keys, store.values)}
    keys = store.keys.copy()
    versions = VersionedStore(store, he or HeParams())
    return _Bench(QueryService(versions), oracle, keys)


def _measure_scheme(
    session: ClientSession, key: int, t: int, scheme: str, bandwidth: float, rtt: float
) -> float:
    value = session.lookup(key, t=t, scheme=scheme, bandwidth_bps=bandwidth, rtt_s=rtt)
    del value
    return session.last_metrics.latency_s


def bench_crossover(
    bandwidths_mbps: list[float],
    t_values: list[int],
    n: int = 1 << 20,
    queries_per_cell: int = 3,
    seed: int = 0,
    service: QueryService | None = None,
    adjusted_t: bool = False,
) -> list[dict]:
    """Scheme choice versus measured latency across a bandwidth grid.

    Latency = virtual transfer time at the simulated bandwidth plus the
    measured compute time, matching what the cost model predicts.
    """
    bench = (
        _Bench(service, {}, service.versions.active.store.keys)
        if service is not None
        else _serve(n, seed)
    )
    rng = Rng(seed + 1)
    rows = []
    for bw_mbps in bandwidths_mbps:
        bw = bw_mbps * 1e6
        transport = SimulatedTransport(LoopbackTransport(bench.service), bw, 0.030)
        session = ClientSession(transport, rng=rng.spawn(), adjusted_t=adjusted_t)
        for t in t_values:
            picks = []
            plain_s = []
            varpir_s = []
            for i in range(queries_per_cell):
                key = int(bench.keys[int(rng.integers(len(bench.keys), 1)[0])])
                session.lookup(key, t=t, scheme="auto", bandwidth_bps=bw)
                picks.append(session.last_metrics.scheme)
                model_plain = session.last_metrics.cost_plain_s
                model_var = session.last_metrics.cost_varpir_s
                plain_s.append(
                    _measure_scheme(session, key, t, "plain", bw, 0.030)
                )
                varpir_s.append(
                    _measure_scheme(session, key, t, "varpir", bw, 0.030)
                )
            measured_plain = float(np.median(plain_s))
            measured_var = float(np.median(varpir_s))
            rows.append(
                {
                    "bandwidth_mbps": bw_mbps,
                    "t": t,
                    "chosen": max(set(picks), key=picks.count),
                    "model_plain_s": model_plain,
                    "model_varpir_s": model_var,
                    "measured_plain_s": measured_plain,
                    "measured_varpir_s": measured_var,
                    "measured_argmin": "plain" if measured_plain <= measured_var else "varpir",
                }
            )
        session.close()
    return rows


def bench_updates(
    query_count: int = 100,
    update_interval_s: float = 1.0,
    n: int = 1 << 16,
    t: int = 1000,
    seed: int = 0,
    service: QueryService | None = None,
    scheme: str = "auto",
) -> list[dict]:
    """Total query time with and without concurrent value updates, plus a
    mid-run batch key update with stale-retry accounting."""
    bench = (
        _Bench(service, _oracle_of(service), service.versions.active.store.keys)
        if service is not None
        else _serve(n, seed)
    )
    svc = bench.service
    rng = Rng(seed + 2)
    pick_keys = [
        int(bench.keys[int(rng.integers(len(bench.keys), 1)[0])])
        for _ in range(query_count)
    ]
    oracle = bench.oracle or _oracle_of(svc)

    def run_queries(session) -> tuple[float, bool, int]:
        total = 0.0
        correct = True
        max_retries = 0
        for key in pick_keys:
            value = session.lookup(key, t=t, scheme=scheme)
            total += session.last_metrics.latency_s
            max_retries = max(max_retries, session.last_metrics.stale_retries)
            if value != oracle[key]:
                correct = False
        return total, correct, max_retries

    transport = SimulatedTransport(LoopbackTransport(svc), 50e6, 0.030)
    session = ClientSession(transport, rng=rng.spawn(), adjusted_t=False)

    base_total, base_ok, _ = run_queries(session)

    stop = threading.Event()
    update_count = [0]

    def updater():
        upd_rng = Rng(seed + 3)
        while not stop.wait(update_interval_s):
            key = int(bench.keys[int(upd_rng.integers(len(bench.keys), 1)[0])])
            new_value = bytes(upd_rng.take_bytes(len(oracle[key])))
            svc.versions.update_value(key, new_value)
            oracle[key] = new_value
            update_count[0] += 1

    thread = threading.Thread(target=updater, daemon=True)
    thread.start()
    upd_total, upd_ok, _ = run_queries(session)
    stop.set()
    thread.join()

    rows = [
        {
            "mode": "no_updates",
            "queries": query_count,
            "total_s": base_total,
            "overhead_ratio": 1.0,
            "all_correct": base_ok,
        },
        {
            "mode": "value_updates",
            "queries": query_count,
            "total_s": upd_total,
            "overhead_ratio": upd_total / base_total if base_total else 1.0,
            "all_correct": upd_ok,
        },
    ]
    return rows


def _oracle_of(service: QueryService) -> dict[int, bytes]:
    store = service.versions.active.store
    return {int(k): v.tobytes() for k, v in zip(store.keys, store.values)}


def write_csv(rows: list[dict], columns: tuple[str, ...], out) -> None:
    """Write rows as CSV to a file-like object."""
    import csv

    writer = csv.DictWriter(out, fieldnames=list(columns))
    writer.writeheader()
    for row in rows:
        writer.writerow({c: row.get(c, "") for c in columns})
