"""Summary statistics for repeated wall-clock measurements."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from typing import Sequence

# Normal 0.95 quantile; the two-sided 90% interval uses it rather than Student-t.
Z90 = 1.645


class InsufficientSamples(ValueError):
    pass


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class StatsRow:
    n: int
    mean: float
    sd: float
    min: float
    max: float
    ci90_halfwidth: float

    @property
    def ci90(self) -> int:
        """Half-width rounded for table display."""
        return round_half_up(self.ci90_halfwidth)

    def as_tuple(self):
        return (self.mean, self.sd, self.min, self.max, self.ci90_halfwidth)


def ci90_halfwidth(sd: float, n: int) -> float:
    if n < 1:
        raise InsufficientSamples("need at least one sample")
    return Z90 * sd / math.sqrt(n)


def stats(values: Sequence[float]) -> StatsRow:
    vals = [float(v) for v in values]
    n = len(vals)
    if n < 2:
        raise InsufficientSamples(f"need at least 2 samples, got {n}")
    sd = statistics.stdev(vals)
    return StatsRow(n, statistics.fmean(vals), sd, min(vals), max(vals), ci90_halfwidth(sd, n))


def speedup(wct_off_mean: float, wct_on_mean: float) -> float:
    """ALL_OFF over ALL_ON mean WCT, to 2 decimals."""
    if not wct_on_mean > 0:
        raise ValueError("ALL_ON mean must be positive")
    return round(wct_off_mean / wct_on_mean, 2)
