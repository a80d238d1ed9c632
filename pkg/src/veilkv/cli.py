"""Command-line entry points: server, client, and benchmark driver."""

from __future__ import annotations

import argparse
import sys
import time

from . import bench
from .dldp import DEFAULT_EPS_DP
from .hecore import HeParams
from .pgm import DEFAULT_EPS_DATA, DEFAULT_EPS_MODEL
from .protocol import ClientSession, Server, TcpTransport
from .rng import Rng
from .store import generate_dataset, load_sosd
from .versions import VersionedStore


def _parse_gen(spec: str) -> tuple[int, str, int]:
    try:
        n_str, dist, seed_str = spec.split(",")
        return int(n_str), dist, int(seed_str)
    except ValueError as exc:
        raise SystemExit(f"--gen expects N,DIST,SEED (got {spec!r}): {exc}")


def server_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="veilkv-server",
        description="Serve a sorted key-value store for private lookups.",
    )
    src = parser.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="SOSD key file (u64 count then u64 keys, LE)")
    src.add_argument("--gen", help="synthetic dataset as N,DIST,SEED")
    parser.add_argument("--value-bytes", type=int, default=8)
    parser.add_argument("--port", type=int, default=7107)
    parser.add_argument("--admin-port", type=int, default=7108)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--eps-data", type=int, default=DEFAULT_EPS_DATA)
    parser.add_argument("--eps-model", type=int, default=DEFAULT_EPS_MODEL)
    parser.add_argument("--he-n", type=int, default=4096, help="ring degree")
    args = parser.parse_args(argv)

    if args.data:
        store = load_sosd(args.data, args.value_bytes)
    else:
        n, dist, seed = _parse_gen(args.gen)
        store = generate_dataset(n, dist, args.value_bytes, seed)
    print(f"loaded {store.n} pairs ({store.pair_bytes} bytes each)")
    he = HeParams(ring_degree=args.he_n)
    t0 = time.perf_counter()
    versions = VersionedStore(store, he, args.eps_data, args.eps_model)
    print(f"version {versions.active.version_id} ready in {time.perf_counter() - t0:.1f}s "
          f"({versions.active.enc.params.pt_count} encoded blocks)")
    server = Server(versions, host=args.host, port=args.port, admin_port=args.admin_port)
    server.start()
    print(f"serving on {server.address[0]}:{server.address[1]} "
          f"(admin on 127.0.0.1:{server.admin_address[1]})")
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        server.stop()
    return 0


def client_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="veilkv-client", description="Private lookup against a veilkv server."
    )
    parser.add_argument("--endpoint", default="127.0.0.1:7107", help="HOST:PORT")
    parser.add_argument("--key", type=int, required=True)
    parser.add_argument("--t", type=int, required=True, help="indistinguishability distance")
    parser.add_argument("--eps-dp", type=float, default=DEFAULT_EPS_DP)
    parser.add_argument(
        "--scheme", choices=["auto", "plain", "varpir"], default="auto"
    )
    parser.add_argument("--seed", type=int, default=None, help="RNG seed (testing)")
    parser.add_argument(
        "--raw-t",
        action="store_true",
        help="treat --t as the raw noise distance instead of reserving 2*eps_data",
    )
    args = parser.parse_args(argv)

    host, port = args.endpoint.rsplit(":", 1)
    transport = TcpTransport(host, int(port))
    session = ClientSession(
        transport,
        rng=Rng(args.seed) if args.seed is not None else None,
        scheme=args.scheme,
        adjusted_t=not args.raw_t,
    )
    value = session.lookup(args.key, t=args.t, eps_dp=args.eps_dp)
    m = session.last_metrics
    if value is None:
        print("absent")
    else:
        print(value.hex())
    print(
        f"# scheme={m.scheme} range={m.range_len_items} blocks={m.w_pt} "
        f"up={m.up_bytes}B down={m.down_bytes}B",
        file=sys.stderr,
    )
    session.close()
    return 0


def bench_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="veilkv-bench", description="Reproduce the desk-scale benchmark trends."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_range = sub.add_parser(
        "range-lengths",
        help="mean obfuscated-range lengths; columns: "
        + ",".join(bench.RANGE_LENGTH_COLUMNS),
    )
    p_range.add_argument("--t", type=int, nargs="+", default=[10, 100, 1000, 10000])
    p_range.add_argument("--eps-dp", type=float, default=DEFAULT_EPS_DP)
    p_range.add_argument("--eps-data", type=int, default=64)
    p_range.add_argument("--page-m", type=int, default=256)
    p_range.add_argument("--trials", type=int, default=1_000_000)
    p_range.add_argument("--domain", type=int, default=1 << 24)

    p_size = sub.add_parser(
        "index-size",
        help="serialized index sizes; columns: " + ",".join(bench.INDEX_SIZE_COLUMNS),
    )
    p_size.add_argument("--n", type=int, nargs="+", default=[1 << 20])
    p_size.add_argument(
        "--dist", nargs="+", default=["uniform"], choices=["uniform", "normal", "clustered"]
    )
    p_size.add_argument("--eps-data", type=int, nargs="+", default=[512, 256, 128, 64, 32])

    p_cross = sub.add_parser(
        "crossover",
        help="scheme-selection crossover; columns: " + ",".join(bench.CROSSOVER_COLUMNS),
    )
    p_cross.add_argument("--bandwidth", type=float, nargs="+", default=[10, 50, 100, 1000])
    p_cross.add_argument("--t", type=int, nargs="+", default=[100, 10000])
    p_cross.add_argument("--n", type=int, default=1 << 20)
    p_cross.add_argument("--queries", type=int, default=3)

    p_upd = sub.add_parser(
        "updates",
        help="query time with/without updates; columns: " + ",".join(bench.UPDATES_COLUMNS),
    )
    p_upd.add_argument("--queries", type=int, default=100)
    p_upd.add_argument("--interval", type=float, default=1.0)
    p_upd.add_argument("--n", type=int, default=1 << 16)
    p_upd.add_argument("--t", type=int, default=1000)
    p_upd.add_argument("--scheme", choices=["auto", "plain", "varpir"], default="auto")

    for sp in (p_range, p_size, p_cross, p_upd):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default="-", help="CSV path, - for stdout")

    args = parser.parse_args(argv)
    if args.command == "range-lengths":
        rows = bench.bench_range_lengths(
            args.t, args.eps_dp, args.eps_data, args.page_m, args.trials,
            args.domain, args.seed,
        )
        columns = bench.RANGE_LENGTH_COLUMNS
    elif args.command == "index-size":
        specs = [(d, n) for d in args.dist for n in args.n]
        rows = bench.bench_index_size(specs, args.eps_data, args.seed)
        columns = bench.INDEX_SIZE_COLUMNS
    elif args.command == "crossover":
        rows = bench.bench_crossover(
            args.bandwidth, args.t, args.n, args.queries, args.seed
        )
        columns = bench.CROSSOVER_COLUMNS
    else:
        rows = bench.bench_updates(
            args.queries, args.interval, args.n, args.t, args.seed,
            scheme=args.scheme,
        )
        columns = bench.UPDATES_COLUMNS

    if args.out == "-":
        bench.write_csv(rows, columns, sys.stdout)
    else:
        with open(args.out, "w", newline="") as fh:
            bench.write_csv(rows, columns, fh)
        print(f"wrote {len(rows)} rows to {args.out}", file=sys.stderr)
    return 0
