"""Self-clustering migration planner.

Each LP keeps, per hosted entity, a ring of the last ``window`` steps of
ping counts broken down by destination LP.  Every ``eval_period`` steps the
planner moves entities whose traffic towards some other LP strictly
exceeds ``factor`` times their traffic towards their own LP.
"""

from __future__ import annotations

import math
from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Deque, Dict, Iterable, List, Tuple


@dataclass
class BalancerConfig:
    enabled: bool = False
    window: int = 10
    eval_period: int = 10
    factor: float = 1.0
    max_frac: float = 0.05
    cooldown: int = 20

    def __post_init__(self):
        if self.window < 1 or self.eval_period < 1:
            raise ValueError("window and eval_period must be >= 1")
        if self.factor <= 0:
            raise ValueError("factor must be > 0")
        if not 0 < self.max_frac <= 1:
            raise ValueError("max_frac must lie in (0, 1]")
        if self.cooldown < 0:
            raise ValueError("cooldown must be >= 0")


class InteractionWindow:
    """Per-entity ring buffers of ``{lp_id: pings}`` buckets."""

    def __init__(self, size: int = 10):
        if size < 1:
            raise ValueError("window size must be >= 1")
        self.size = size
        self._rings: Dict[int, Deque[Tuple[int, Dict[int, int]]]] = {}

    def record(self, entity_id: int, dest_lp: int, count: int, step: int) -> None:
        if count < 0:
            raise ValueError("count must be non-negative")
        ring = self._rings.setdefault(entity_id, deque(maxlen=self.size))
        if not ring or ring[-1][0] != step:
            ring.append((step, defaultdict(int)))
        ring[-1][1][dest_lp] += count

    def buckets(self, entity_id: int) -> List[Dict[int, int]]:
        return [dict(b) for _, b in self._rings.get(entity_id, ())]

    def totals(self, entity_id: int, now_step: int | None = None) -> Dict[int, int]:
        """Counts summed over the window, optionally ending at ``now_step``."""
        out: Dict[int, int] = defaultdict(int)
        for step, bucket in self._rings.get(entity_id, ()):
            if now_step is not None and step <= now_step - self.size:
                continue
            for lp, n in bucket.items():
                out[lp] += n
        return dict(out)

    def drop(self, entity_id: int) -> None:
        self._rings.pop(entity_id, None)

    def __contains__(self, entity_id):
        return entity_id in self._rings


def record_interaction(window: InteractionWindow, entity_id: int, dest_lp: int,
                       count: int, step: int = 0) -> InteractionWindow:
    window.record(entity_id, dest_lp, count, step)
    return window


def plan_migrations(window: InteractionWindow, cfg: BalancerConfig, now_step: int,
                    self_lp: int, local_entities: Iterable[int],
                    last_migrated: Dict[int, int] | None = None) -> List[Tuple[int, int]]:
    local = sorted(local_entities)
    last_migrated = last_migrated or {}
    candidates = []
    for eid in local:
        moved_at = last_migrated.get(eid)
        if moved_at is not None and now_step - moved_at < cfg.cooldown:
            continue
        totals = window.totals(eid, now_step)
        internal = totals.get(self_lp, 0)
        external = [(n, lp) for lp, n in totals.items() if lp != self_lp]
        if not external:
            continue
        # highest count wins; lower lp id breaks ties
        best_n, best_lp = max(external, key=lambda t: (t[0], -t[1]))
        if best_n > cfg.factor * internal:
            candidates.append((best_n - internal, eid, best_lp))
    cap = math.floor(cfg.max_frac * len(local) + 1e-9)
    candidates.sort(key=lambda c: (-c[0], c[1]))
    return [(eid, lp) for _, eid, lp in candidates[:cap]]


def migration_stats(metrics) -> int:
    return int(metrics.migrations)
