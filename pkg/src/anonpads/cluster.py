"""Run a coordinator and N LPs inside one process (one thread each)."""

from __future__ import annotations

import base64
import hashlib
import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from .coordinator import ExitReport, Sima
from .engine import LogicalProcess, LpResult, RunConfig, RunMetrics
from .model import SmhEntity
from .transport.direct import DirectTransport
from .transport.emu import EmuConfig, EmuOverlay, EmuTransport
from .transport.socks import SocksConfig, SocksTransport
from .wire import Endpoint

log = logging.getLogger(__name__)

TRANSPORTS = ("direct", "socks", "emu")


def onion_name(*parts) -> str:
    """Deterministic v2-style (16 character) onion hostname."""
    digest = hashlib.sha1(repr(parts).encode()).digest()[:10]
    return base64.b32encode(digest).decode().lower() + ".onion"


class ClusterError(Exception):
    pass


@dataclass
class ClusterResult:
    metrics: RunMetrics
    lps: List[LpResult]
    sima: Optional[ExitReport]
    final: Dict[int, SmhEntity] = field(default_factory=dict)
    link_failures: int = 0
    retransmissions: int = 0

    @property
    def edges(self):
        return sorted(e for lp in self.lps for e in lp.initiated)


def _transports(kind: str, n_lps: int, seed: int, emu: EmuConfig | None,
                socks: SocksConfig | None):
    """Return (sima_transport, sima_listener, [(lp_transport, lp_listener)], cleanup)."""
    if kind == "direct":
        t = DirectTransport()
        return t, t.listen(), [(DirectTransport(), DirectTransport().listen()) for _ in range(n_lps)], None
    if kind == "emu":
        overlay = EmuOverlay(emu or EmuConfig(), seed=seed)
        st = EmuTransport(overlay, "sima")
        lps = []
        for i in range(n_lps):
            lt = EmuTransport(overlay, f"slot{i}")
            lps.append((lt, lt.listen()))
        return st, st.listen(), lps, overlay.stop
    if kind == "socks":
        st = SocksTransport(socks)
        sl = st.listen(Endpoint("socks", onion_name(seed, "sima"), 1), bind_port=0)
        lps = []
        for i in range(n_lps):
            lt = SocksTransport(socks)
            lps.append((lt, lt.listen(Endpoint("socks", onion_name(seed, "lp", i), 1), bind_port=0)))
        return st, sl, lps, None
    raise ValueError(f"unknown transport {kind!r}")


def run_cluster(cfg: RunConfig, n_lps: int, transport: str = "emu", emu: EmuConfig | None = None,
                socks: SocksConfig | None = None, timeout_s: float = 600.0,
                start_order: List[int] | None = None) -> ClusterResult:
    """Bootstrap and run ``n_lps`` LPs; raises :class:`ClusterError` if any LP fails.

    ``start_order`` permutes LP thread start order (registration order).
    """
    st, sima_listener, lp_parts, cleanup = _transports(transport, n_lps, cfg.seed, emu, socks)
    sima = Sima(st, n_lps, timeout_s=cfg.bootstrap_timeout_s, listener=sima_listener)
    results: Dict[int, LpResult] = {}
    errors: List[BaseException] = []
    report: List[ExitReport] = []

    def sima_main():
        try:
            report.append(sima.serve())
        except BaseException as exc:
            errors.append(exc)

    def lp_main(idx):
        lt, ll = lp_parts[idx]
        lp = LogicalProcess(lt, sima_listener.endpoint, cfg, listener=ll)
        try:
            res = lp.run()
            results[res.lp_id] = res
        except BaseException as exc:
            log.warning("LP slot %d failed: %s", idx, exc)
            errors.append(exc)
            lp.close()

    threads = [threading.Thread(target=sima_main, name="sima", daemon=True)]
    order = start_order if start_order is not None else list(range(n_lps))
    threads += [threading.Thread(target=lp_main, args=(i,), name=f"lp-slot{i}", daemon=True)
                for i in order]
    try:
        for th in threads:
            th.start()
        deadline = time.monotonic() + timeout_s
        for th in threads:
            th.join(max(0.0, deadline - time.monotonic()))
        if any(th.is_alive() for th in threads):
            errors.append(ClusterError(f"run did not finish within {timeout_s}s"))
    finally:
        if cleanup is not None:
            cleanup()
    if errors:
        raise ClusterError(f"run failed: {errors[0]}") from errors[0]
    lps = [results[i] for i in sorted(results)]
    final: Dict[int, SmhEntity] = {}
    for lp in lps:
        overlap = final.keys() & lp.final_entities.keys()
        if overlap:
            raise ClusterError(f"entities hosted twice: {sorted(overlap)[:5]}")
        final.update(lp.final_entities)
    failures = sum(s["failures"] for lp in lps for s in lp.link_stats.values())
    retrans = sum(s["retransmissions"] for lp in lps for s in lp.link_stats.values())
    return ClusterResult(RunMetrics.merge([lp.metrics for lp in lps]), lps,
                         report[0] if report else None, final, failures, retrans)
