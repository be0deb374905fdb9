"""Scenario matrices: transport x balancer x size, repeated over seeds."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

from ..cluster import ClusterError, run_cluster
from ..config import BALANCER_MODES, ConfigError, build_config, parse_sections
from ..engine import RunConfig, RunMetrics
from ..transport.emu import EmuConfig
from ..transport.socks import SocksConfig

log = logging.getLogger(__name__)

SCENARIO_KEYS = ("name", "transport", "n_lps", "repetitions", "seeds")


@dataclass
class ScenarioConfig:
    transport: str = "emu"
    balancer: str = "ALL_OFF"
    n_entities: int = 300
    n_lps: int = 3
    n_steps: int = 200
    repetitions: int = 10
    seeds: List[int] = field(default_factory=list)
    run: RunConfig = field(default_factory=RunConfig)
    emu: EmuConfig = field(default_factory=EmuConfig)
    name: str = ""

    def __post_init__(self):
        if self.transport not in ("direct", "socks", "emu"):
            raise ConfigError(f"unknown transport {self.transport!r}")
        if self.balancer not in BALANCER_MODES:
            raise ConfigError(f"balancer must be ALL_ON or ALL_OFF, got {self.balancer!r}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if not self.seeds:
            self.seeds = [self.run.seed + i for i in range(self.repetitions)]
        if len(self.seeds) != self.repetitions:
            raise ConfigError(f"{len(self.seeds)} seeds given for {self.repetitions} repetitions")
        if self.n_lps < 1:
            raise ConfigError("n_lps must be >= 1")
        # keep the nested run config consistent with the flat fields
        self.run = dataclasses.replace(
            self.run, n_steps=self.n_steps,
            model=dataclasses.replace(self.run.model, n_entities=self.n_entities),
            balancer=dataclasses.replace(self.run.balancer, enabled=BALANCER_MODES[self.balancer]))

    @property
    def label(self) -> str:
        return self.name or f"{self.transport}/{self.balancer}/{self.n_entities}"

    @property
    def group(self) -> tuple:
        """Configs differing only in balancer mode share a group."""
        return (self.transport, self.n_entities, self.n_lps, self.n_steps)

    def run_config(self, seed: int) -> RunConfig:
        return dataclasses.replace(self.run, seed=seed)


def scenario_from_kv(kv: Dict[str, str]) -> ScenarioConfig:
    kv = dict(kv)
    balancer = kv.get("balancer", "ALL_OFF").upper()
    if "balancer.enabled" in kv:
        balancer = "ALL_ON" if build_config({"balancer.enabled": kv["balancer.enabled"]}).run.balancer.enabled else "ALL_OFF"
    scen = {k: kv.pop(k) for k in SCENARIO_KEYS if k in kv}
    loaded = build_config(kv)
    try:
        reps = int(scen.get("repetitions", 10))
        seeds = [int(s) for s in scen["seeds"].split(",") if s.strip()] if "seeds" in scen else []
        n_lps = int(scen.get("n_lps", 3))
    except ValueError as exc:
        raise ConfigError(f"bad scenario value: {exc}") from None
    if seeds and "repetitions" not in scen:
        reps = len(seeds)
    return ScenarioConfig(transport=scen.get("transport", "emu"), balancer=balancer,
                          n_entities=loaded.run.model.n_entities, n_lps=n_lps,
                          n_steps=loaded.run.n_steps, repetitions=reps, seeds=seeds,
                          run=loaded.run, emu=loaded.emu, name=scen.get("name", ""))


def parse_scenario(text: str, source: str = "<scenario>") -> List[ScenarioConfig]:
    """Preamble keys are defaults for every ``[run]`` section."""
    sections = parse_sections(text, source)
    defaults = sections[0][1]
    out = []
    for name, kv in sections[1:]:
        if name != "run":
            raise ConfigError(f"{source}: unknown section [{name}]")
        out.append(scenario_from_kv({**defaults, **kv}))
    if not out and defaults:
        out.append(scenario_from_kv(defaults))
    return out


def load_scenario(path: str | Path) -> List[ScenarioConfig]:
    p = Path(path)
    return parse_scenario(p.read_text(encoding="utf-8"), str(p))


@dataclass
class FailedRun:
    label: str
    seed: int
    error: str


def run_scenario(cfg: ScenarioConfig, runner: Optional[Callable] = None,
                 failures: Optional[List[FailedRun]] = None,
                 socks: SocksConfig | None = None) -> List[RunMetrics]:
    """Run every repetition in turn; aborted runs are logged, appended to
    ``failures`` and left out of the returned list."""
    runner = runner or _cluster_runner(cfg, socks)
    records = []
    for rep, seed in enumerate(cfg.seeds):
        try:
            metrics = runner(cfg.run_config(seed))
        except (ClusterError, OSError) as exc:
            log.warning("%s rep %d (seed %d) failed and is excluded: %s", cfg.label, rep, seed, exc)
            if failures is not None:
                failures.append(FailedRun(cfg.label, seed, str(exc)))
            continue
        log.info("%s rep %d seed %d: wct %.3fs, pings_remote %d", cfg.label, rep, seed,
                 metrics.wct_s, metrics.pings_remote)
        records.append(metrics)
    return records


def _cluster_runner(cfg: ScenarioConfig, socks: SocksConfig | None):
    def run(rc: RunConfig) -> RunMetrics:
        return run_cluster(rc, cfg.n_lps, cfg.transport, emu=cfg.emu, socks=socks).metrics
    return run
