"""Benchmark harness: scenario runs, statistics, reports and tcpping."""

from .harness import FailedRun, ScenarioConfig, load_scenario, parse_scenario, run_scenario
from .report import ConfigSummary, emit_report, speedups, summarize
from .stats import InsufficientSamples, StatsRow, speedup, stats

__all__ = ["FailedRun", "ScenarioConfig", "load_scenario", "parse_scenario", "run_scenario",
           "ConfigSummary", "emit_report", "speedups", "summarize", "InsufficientSamples",
           "StatsRow", "speedup", "stats"]
