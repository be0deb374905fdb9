"""``anonpads`` command line: coordinator, LP, benchmark and tcpping."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .bench.harness import load_scenario, run_scenario
from .bench.report import emit_report, summarize
from .bench.tcpping import emu_target, tcpping, write_series
from .cluster import ClusterError, run_cluster
from .config import ConfigError, LoadedConfig, build_config, load_config
from .coordinator import Sima, SimaTimeout
from .engine import EngineError, LogicalProcess
from .transport.base import TransportError
from .transport.direct import DirectTransport
from .transport.emu import TOR_RTT_ROWS, EmuConfig
from .transport.emu_tcp import EmuTcpTransport
from .transport.socks import SocksConfig, SocksTransport
from .wire import Endpoint

log = logging.getLogger("anonpads")

TRANSPORTS = ("direct", "socks", "emu")


def endpoint(text: str) -> Endpoint:
    try:
        return Endpoint.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def make_transport(kind: str, emu: EmuConfig | None = None, seed: int = 0, name: str = "node"):
    if kind == "direct":
        return DirectTransport()
    if kind == "socks":
        return SocksTransport(SocksConfig.from_env())
    if kind == "emu":
        return EmuTcpTransport(emu, seed=seed, name=name)
    raise ValueError(kind)


def cmd_sima(args) -> int:
    transport = make_transport(args.transport, name="sima")
    sima = Sima(transport, args.expected, args.listen, timeout_s=args.timeout_s)
    print(f"sima listening on {sima.endpoint}, expecting {args.expected} LPs", flush=True)
    try:
        report = sima.serve()
    except SimaTimeout as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for line in report.lines():
        print(line)
    print(f"roster broadcast after {report.duration_s:.3f}s ({report.rejected} rejected)")
    return 0


def cmd_lp(args) -> int:
    loaded = load_config(args.config) if args.config else LoadedConfig(build_config({}).run)
    transport = make_transport(args.transport, loaded.emu, loaded.run.seed, name=str(args.listen))
    lp = LogicalProcess(transport, args.sima, loaded.run, listen_ep=args.listen)
    try:
        res = lp.run()
    except (EngineError, TransportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    m = res.metrics
    print(f"lp {res.lp_id} of {len(res.roster.entries)}: wct_s={m.wct_s:.3f} init_s={m.init_s:.3f}")
    for key, value in m.counters().items():
        if not isinstance(value, list):
            print(f"{key}={value}")
    print(f"entities_hosted={len(res.final_entities)}")
    return 0


def cmd_simulate(args) -> int:
    loaded = load_config(args.config) if args.config else LoadedConfig(build_config({}).run)
    try:
        res = run_cluster(loaded.run, args.lps, args.transport, emu=loaded.emu)
    except ClusterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    m = res.metrics
    print(f"{args.lps} LPs over {args.transport}: wct_s={m.wct_s:.3f} init_s={m.init_s:.3f}")
    for key, value in m.counters().items():
        if not isinstance(value, list):
            print(f"{key}={value}")
    return 0


def cmd_bench(args) -> int:
    scenarios = load_scenario(args.scenario)
    rows = []
    failed = []
    for sc in scenarios:
        print(f"running {sc.label}: {sc.repetitions} reps, {sc.n_lps} LPs", flush=True)
        runs = run_scenario(sc, failures=failed)
        rows.append(summarize(sc.label, sc.balancer, sc.group, runs))
    paths = emit_report(rows, args.out, args.name)
    print(paths[2].read_text(encoding="utf-8"), end="")
    if failed:
        print(f"{len(failed)} run(s) failed and were excluded")
    for p in paths:
        print(f"wrote {p}")
    return 0


def cmd_tcpping(args) -> int:
    overlay = None
    emu = None
    target = args.target
    if args.via == "emu":
        mean, std = TOR_RTT_ROWS[args.row] if args.row else (args.mean, args.std)
        cfg = EmuConfig(mean_ms=mean, std_ms=std, mode=args.emu_mode, time_scale=args.time_scale)
        emu, target, overlay = emu_target(cfg, seed=args.seed, target=args.target)

    def progress(i, rtt):
        if args.verbose:
            print(f"seq={i} " + ("miss" if rtt is None else f"rtt={rtt:.3f} ms"), flush=True)

    try:
        series = tcpping(target, args.n, args.interval, args.via, emu=emu, progress=progress)
    finally:
        if overlay is not None:
            overlay.stop()
    st = series.stats()
    print(f"{len(series.samples)} probes to {target} via {args.via}, {series.misses} missed")
    if st is not None:
        print(f"mean={st.mean:.2f} ms sd={st.sd:.2f} min={st.min:.2f} max={st.max:.2f} "
              f"ci90={st.ci90_halfwidth:.2f}")
    if args.out:
        for p in write_series(series, args.out):
            print(f"wrote {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="anonpads", description=__doc__)
    ap.add_argument("--log-level", default="WARNING")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sima", help="run the bootstrap coordinator")
    p.add_argument("--listen", type=endpoint, required=True)
    p.add_argument("--expected", type=int, required=True)
    p.add_argument("--transport", choices=TRANSPORTS, default="direct")
    p.add_argument("--timeout-s", type=float, default=300.0)
    p.set_defaults(func=cmd_sima)

    p = sub.add_parser("lp", help="run one logical process")
    p.add_argument("--sima", type=endpoint, required=True)
    p.add_argument("--listen", type=endpoint, required=True)
    p.add_argument("--transport", choices=TRANSPORTS, default="direct")
    p.add_argument("--config", type=Path)
    p.set_defaults(func=cmd_lp)

    p = sub.add_parser("simulate", help="run coordinator and all LPs in this process")
    p.add_argument("--lps", type=int, default=3)
    p.add_argument("--transport", choices=TRANSPORTS, default="emu")
    p.add_argument("--config", type=Path)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="run a scenario matrix and write CSV reports")
    p.add_argument("--scenario", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--name", default="scenario")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("tcpping", help="measure connection-setup RTT")
    p.add_argument("--target", type=endpoint, required=True)
    p.add_argument("--via", choices=TRANSPORTS, default="direct")
    p.add_argument("-n", type=int, default=200)
    p.add_argument("--interval", type=float, default=3.0)
    p.add_argument("--out", type=Path)
    p.add_argument("--row", choices=sorted(TOR_RTT_ROWS), help="emu latency preset")
    p.add_argument("--mean", type=float, default=326.42, help="emu RTT mean (ms)")
    p.add_argument("--std", type=float, default=278.52, help="emu RTT sd (ms)")
    p.add_argument("--emu-mode", choices=("ledger", "sleep"), default="ledger")
    p.add_argument("--time-scale", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_tcpping)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
