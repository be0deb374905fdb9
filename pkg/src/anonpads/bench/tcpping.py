"""tcpping: RTT as TCP connection-establishment time.

The anonymity overlay carries no ICMP, so each probe times how long it
takes to open a stream to the target (through the SOCKS CONNECT round trip,
or through an emulated circuit) and then closes it again.
"""

from __future__ import annotations

import csv
import logging
import socket
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np

from ..transport.base import ConnectFailed
from ..transport.emu import EmuConfig, EmuOverlay, EmuTransport
from ..transport.socks import SocksConfig, SocksError, socks_open
from ..wire import Endpoint
from .stats import InsufficientSamples, StatsRow, stats

log = logging.getLogger(__name__)

HIST_BINS = 20


@dataclass
class PingSeries:
    target: Endpoint
    via: str
    samples: List[Optional[float]] = field(default_factory=list)   # None marks a miss

    @property
    def rtts(self) -> List[float]:
        return [s for s in self.samples if s is not None]

    @property
    def misses(self) -> int:
        return sum(1 for s in self.samples if s is None)

    def stats(self) -> Optional[StatsRow]:
        try:
            return stats(self.rtts)
        except InsufficientSamples:
            return None

    def histogram(self, bins: int = HIST_BINS):
        """``(counts, edges)``; empty arrays when no probe succeeded."""
        if not self.rtts:
            return np.zeros(0, dtype=int), np.zeros(0)
        return np.histogram(np.asarray(self.rtts), bins=bins)


def probe_direct(target: Endpoint, timeout_s: float = 5.0) -> Optional[float]:
    t0 = time.perf_counter()
    try:
        sock = socket.create_connection((target.host, target.port), timeout=timeout_s)
    except OSError as exc:
        log.debug("direct probe to %s missed: %s", target, exc)
        return None
    rtt = (time.perf_counter() - t0) * 1000.0
    sock.close()
    return rtt


def probe_socks(target: Endpoint, cfg: SocksConfig) -> Optional[float]:
    # one attempt per probe: a retry would fold backoff sleeps into the RTT
    one_shot = SocksConfig(cfg.proxy_host, cfg.proxy_port, 1, cfg.initial_backoff_ms,
                           cfg.max_backoff_ms, cfg.timeout_s)
    t0 = time.perf_counter()
    try:
        sock, _ = socks_open(one_shot, target)
    except (ConnectFailed, SocksError, OSError) as exc:
        log.debug("socks probe to %s missed: %s", target, exc)
        return None
    rtt = (time.perf_counter() - t0) * 1000.0
    sock.close()
    return rtt


def tcpping(target: Endpoint, n: int = 200, interval_s: float = 3.0, via: str = "direct",
            socks: SocksConfig | None = None, emu: EmuTransport | None = None,
            sleep: Callable[[float], None] = time.sleep, progress=None) -> PingSeries:
    """Send ``n`` probes, one every ``interval_s`` seconds.

    With ``via="emu"`` the caller passes an :class:`EmuTransport` whose overlay
    hosts ``target``.  In ledger mode probe ``i`` is taken at virtual time
    ``i * interval_s`` and nothing sleeps; in sleep mode the circuit delay is
    actually waited out (scaled by ``time_scale``) and timed.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    series = PingSeries(target, via)
    if via == "socks":
        socks = SocksConfig.from_env(socks)
    elif via == "emu" and emu is None:
        raise ValueError("via=emu needs an EmuTransport")
    elif via not in ("direct", "socks", "emu"):
        raise ValueError(f"unknown transport {via!r}")
    for i in range(n):
        if via == "direct":
            rtt = probe_direct(target)
        elif via == "socks":
            rtt = probe_socks(target, socks)
        else:
            rtt = _probe_emu(emu, target, i * interval_s * 1000.0)
        series.samples.append(rtt)
        if progress is not None:
            progress(i, rtt)
        if i + 1 < n and not (via == "emu" and emu.overlay.ledger):
            scale = emu.overlay.cfg.time_scale if via == "emu" else 1.0
            sleep(interval_s * scale)
    return series


def _probe_emu(emu: EmuTransport, target: Endpoint, now_v: float) -> Optional[float]:
    rtt = emu.probe_rtt(target, now_v)
    if rtt is None or emu.overlay.ledger:
        return rtt
    scale = emu.overlay.cfg.time_scale
    t0 = time.perf_counter()
    time.sleep(rtt * scale / 1000.0)
    return (time.perf_counter() - t0) * 1000.0 / scale


def emu_target(cfg: EmuConfig, seed: int = 0, target: Endpoint | None = None):
    """Overlay with a listening hidden service; returns ``(transport, target, overlay)``."""
    overlay = EmuOverlay(cfg, seed=seed)
    server = EmuTransport(overlay, "tcpping-target")
    lst = server.listen(target)
    return EmuTransport(overlay, "tcpping"), lst.endpoint, overlay


def write_series(series: PingSeries, out_dir: str | Path, prefix: str = "tcpping") -> List[Path]:
    """Raw samples, a one-row summary, and the histogram bins as CSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    raw, summary, hist = (out / f"{prefix}_raw.csv", out / f"{prefix}_stats.csv",
                          out / f"{prefix}_hist.csv")
    with raw.open("w", newline="", encoding="utf-8") as fp:
        w = csv.writer(fp)
        w.writerow(["seq", "rtt_ms"])
        for i, s in enumerate(series.samples):
            w.writerow([i, "" if s is None else f"{s:.3f}"])
    st = series.stats()
    with summary.open("w", newline="", encoding="utf-8") as fp:
        w = csv.writer(fp)
        w.writerow(["target", "via", "n", "misses", "mean_ms", "sd_ms", "min_ms", "max_ms", "ci90"])
        vals = ["", "", "", "", ""] if st is None else [f"{v:.3f}" for v in st.as_tuple()]
        w.writerow([str(series.target), series.via, len(series.samples), series.misses] + vals)
    counts, edges = series.histogram()
    with hist.open("w", newline="", encoding="utf-8") as fp:
        w = csv.writer(fp)
        w.writerow(["bin_lo_ms", "bin_hi_ms", "count"])
        for k, c in enumerate(counts):
            w.writerow([f"{edges[k]:.3f}", f"{edges[k + 1]:.3f}", int(c)])
    return [raw, summary, hist]
