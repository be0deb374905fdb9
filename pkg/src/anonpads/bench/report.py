"""CSV and text reports for scenario matrices."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from ..engine import RunMetrics
from .stats import InsufficientSamples, StatsRow, speedup, stats

SUMMARY_COLUMNS = ["config", "mean_wct_s", "sd", "min", "max", "ci90", "pings_total",
                   "pings_remote", "migrations", "speedup_vs_all_off"]
RAW_COLUMNS = ["config", "run", "wct_s", "init_s", "pings_total", "pings_remote",
               "digest_frames", "ping_frames", "migrate_frames", "migrations"]

CI_NOTE = ("ci90 is the half-width 1.645 * sd / sqrt(n) (normal quantile, sample sd); "
           "displayed values are rounded half up to integers.")


@dataclass
class ConfigSummary:
    label: str
    balancer: str                  # ALL_ON / ALL_OFF
    group: tuple                   # rows in one group are compared for speedup
    wct: Optional[StatsRow]
    pings_total: float = 0.0
    pings_remote: float = 0.0
    migrations: float = 0.0
    runs: Sequence[RunMetrics] = ()


def summarize(label: str, balancer: str, group: tuple, runs: Sequence[RunMetrics]) -> ConfigSummary:
    """Counters are averaged over runs (identical across seeded repeats in ledger mode)."""
    try:
        wct = stats([r.wct_s for r in runs])
    except InsufficientSamples:
        wct = None
    n = max(len(runs), 1)
    return ConfigSummary(label, balancer, group, wct,
                         sum(r.pings_total for r in runs) / n,
                         sum(r.pings_remote for r in runs) / n,
                         sum(r.migrations for r in runs) / n, tuple(runs))


def speedups(rows: Sequence[ConfigSummary]) -> Dict[str, float]:
    """ALL_ON label -> ALL_OFF/ALL_ON mean WCT within the same group."""
    off = {r.group: r for r in rows if r.balancer == "ALL_OFF" and r.wct is not None}
    out = {}
    for r in rows:
        base = off.get(r.group)
        if r.balancer == "ALL_ON" and base is not None and r.wct is not None and r.wct.mean > 0:
            out[r.label] = speedup(base.wct.mean, r.wct.mean)
    return out


def _num(x: float) -> str:
    if float(x).is_integer():
        return str(int(x))
    return f"{x:.3f}"


def emit_report(rows: Sequence[ConfigSummary], out_dir: str | Path,
                name: str = "scenario") -> Tuple[Path, Path, Path]:
    """Write ``<name>_summary.csv``, ``<name>_runs.csv`` and ``<name>_summary.txt``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary, raw, text = out / f"{name}_summary.csv", out / f"{name}_runs.csv", out / f"{name}_summary.txt"
    ups = speedups(rows)
    with summary.open("w", newline="", encoding="utf-8") as fp:
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            st = ["", "", "", "", ""] if r.wct is None else [_num(v) for v in r.wct.as_tuple()]
            up = ups.get(r.label)
            w.writerow([r.label] + st + [_num(r.pings_total), _num(r.pings_remote),
                                         _num(r.migrations), "" if up is None else f"{up:.2f}"])
    with raw.open("w", newline="", encoding="utf-8") as fp:
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(RAW_COLUMNS)
        for r in rows:
            for i, m in enumerate(r.runs):
                w.writerow([r.label, i, f"{m.wct_s:.6f}", f"{m.init_s:.6f}", m.pings_total,
                            m.pings_remote, m.digest_frames, m.ping_frames, m.migrate_frames,
                            m.migrations])
    lines = [f"{'config':<28}{'mean':>10}{'sd':>10}{'min':>10}{'max':>10}{'ci90':>8}{'speedup':>9}"]
    for r in rows:
        up = ups.get(r.label)
        if r.wct is None:
            lines.append(f"{r.label:<28}{'(fewer than 2 successful runs)':>48}")
            continue
        s = r.wct
        lines.append(f"{r.label:<28}{s.mean:>10.3f}{s.sd:>10.3f}{s.min:>10.3f}{s.max:>10.3f}"
                     f"{s.ci90:>8d}{'' if up is None else f'{up:.2f}':>9}")
    lines += ["", CI_NOTE]
    text.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return summary, raw, text
