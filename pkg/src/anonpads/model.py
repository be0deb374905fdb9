"""MIGRATION-WIRELESS benchmark model.

Simulated mobile hosts (SMHs) move on a toroidal square under Random
Waypoint mobility and ping every other SMH within a fixed radius once per
step.  Every random draw is keyed by ``(seed, entity, step, purpose)`` so a
run gives the same trajectories no matter how entities are partitioned.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

MASK64 = (1 << 64) - 1


class ModelError(Exception):
    pass


@dataclass
class ModelConfig:
    n_entities: int = 300
    space_l: float = 10000.0
    radius: float = 250.0
    v_min: float = 1.0
    v_max: float = 10.0
    pause_max: int = 0

    def __post_init__(self):
        if not 0 < self.radius < self.space_l / 2:
            raise ValueError("radius must lie in (0, L/2)")
        if self.v_min > self.v_max or self.v_min < 0:
            raise ValueError("need 0 <= v_min <= v_max")
        if self.pause_max < 0:
            raise ValueError("pause_max must be >= 0")


# -- deterministic streams ----------------------------------------------------

def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


class EntityStream:
    """Small splitmix64 generator; cheap to create once per entity-step."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = seed & MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi], by rejection."""
        span = hi - lo + 1
        limit = (1 << 64) - ((1 << 64) % span)
        while True:
            v = self.next_u64()
            if v < limit:
                return lo + v % span


def _tag_code(purpose: str) -> int:
    data = purpose.encode("utf-8")
    return (zlib.crc32(data) << 32) | zlib.adler32(data)


def entity_rng(global_seed: int, entity_id: int, step: int, purpose: str) -> EntityStream:
    h = splitmix64(global_seed & MASK64)
    h = splitmix64(h ^ (entity_id & MASK64))
    h = splitmix64(h ^ (step & MASK64))
    h = splitmix64(h ^ _tag_code(purpose))
    return EntityStream(h)


# -- entities -----------------------------------------------------------------

_BLOB = struct.Struct(">IdddddI")


@dataclass
class SmhEntity:
    entity_id: int
    x: float
    y: float
    wx: float
    wy: float
    speed: float
    pause_left: int = 0

    @property
    def pos(self) -> Tuple[float, float]:
        return (self.x, self.y)

    def to_bytes(self) -> bytes:
        return _BLOB.pack(self.entity_id, self.x, self.y, self.wx, self.wy,
                          self.speed, self.pause_left)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "SmhEntity":
        if len(blob) != _BLOB.size:
            raise ModelError(f"entity blob must be {_BLOB.size} bytes, got {len(blob)}")
        return cls(*_BLOB.unpack(blob))


def _wrap(v: float, L: float) -> float:
    v = v % L
    # float modulo can round a tiny negative up to exactly L
    return 0.0 if v >= L else v


def _axis_delta(a: float, b: float, L: float) -> float:
    """Signed shortest displacement from a to b along one toroidal axis."""
    d = b - a
    if d > L / 2:
        d -= L
    elif d < -L / 2:
        d += L
    return d


def toroidal_dist(a: Sequence[float], b: Sequence[float], L: float) -> float:
    dx = abs(a[0] - b[0])
    dx = min(dx, L - dx)
    dy = abs(a[1] - b[1])
    dy = min(dy, L - dy)
    return math.sqrt(dx * dx + dy * dy)


def initial_entity(seed: int, entity_id: int, cfg: ModelConfig) -> SmhEntity:
    rng = entity_rng(seed, entity_id, 0, "init")
    L = cfg.space_l
    x, y = rng.uniform(0, L), rng.uniform(0, L)
    wx, wy = rng.uniform(0, L), rng.uniform(0, L)
    speed = rng.uniform(cfg.v_min, cfg.v_max)
    return SmhEntity(entity_id, _wrap(x, L), _wrap(y, L), _wrap(wx, L), _wrap(wy, L), speed)


def initial_entities(seed: int, cfg: ModelConfig) -> List[SmhEntity]:
    return [initial_entity(seed, i, cfg) for i in range(cfg.n_entities)]


def rwp_step(e: SmhEntity, rng, cfg: ModelConfig) -> SmhEntity:
    """Advance one entity by one step.

    ``rng`` is either a stream or a zero-argument callable returning one,
    so callers can skip building a stream for entities that never draw.
    """
    if e.pause_left > 0:
        return SmhEntity(e.entity_id, e.x, e.y, e.wx, e.wy, e.speed, e.pause_left - 1)
    L = cfg.space_l
    dx = _axis_delta(e.x, e.wx, L)
    dy = _axis_delta(e.y, e.wy, L)
    dist = math.sqrt(dx * dx + dy * dy)
    if dist <= e.speed:
        if callable(rng):
            rng = rng()
        pause = rng.randint(0, cfg.pause_max) if cfg.pause_max > 0 else 0
        wx, wy = _wrap(rng.uniform(0, L), L), _wrap(rng.uniform(0, L), L)
        speed = rng.uniform(cfg.v_min, cfg.v_max)
        return SmhEntity(e.entity_id, e.wx, e.wy, wx, wy, speed, pause)
    f = e.speed / dist
    return SmhEntity(e.entity_id, _wrap(e.x + dx * f, L), _wrap(e.y + dy * f, L),
                     e.wx, e.wy, e.speed, 0)


def advance(e: SmhEntity, seed: int, step: int, cfg: ModelConfig) -> SmhEntity:
    return rwp_step(e, lambda: entity_rng(seed, e.entity_id, step, "rwp"), cfg)


# -- pings --------------------------------------------------------------------

def _as_arrays(positions) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    ids = np.fromiter((p[0] for p in positions), dtype=np.int64, count=len(positions))
    xs = np.fromiter((p[1] for p in positions), dtype=np.float64, count=len(positions))
    ys = np.fromiter((p[2] for p in positions), dtype=np.float64, count=len(positions))
    return ids, xs, ys


def pings_from(sources: Iterable[int], all_positions, cfg: ModelConfig) -> List[Tuple[int, int]]:
    """Sorted directed pings originating at ``sources``.

    Uses the same arithmetic as :func:`toroidal_dist`, so results agree
    exactly with a scalar all-pairs check.
    """
    ids, xs, ys = _as_arrays(all_positions)
    if len(np.unique(ids)) != len(ids):
        raise ModelError("duplicate entity_id in position set")
    order = np.argsort(ids, kind="stable")
    ids, xs, ys = ids[order], xs[order], ys[order]
    src = np.asarray(sorted(sources), dtype=np.int64)
    if src.size == 0 or ids.size == 0:
        return []
    rows = np.searchsorted(ids, src)
    if np.any(rows >= ids.size) or np.any(ids[np.minimum(rows, ids.size - 1)] != src):
        raise ModelError("source entity missing from position set")
    L = cfg.space_l
    dx = np.abs(xs[rows][:, None] - xs[None, :])
    dx = np.minimum(dx, L - dx)
    dy = np.abs(ys[rows][:, None] - ys[None, :])
    dy = np.minimum(dy, L - dy)
    d = np.sqrt(dx * dx + dy * dy)
    hit = d <= cfg.radius
    hit[np.arange(src.size), rows] = False
    si, dj = np.nonzero(hit)
    return list(zip(src[si].tolist(), ids[dj].tolist()))


def compute_pings(all_positions, cfg: ModelConfig) -> List[Tuple[int, int]]:
    ids = [p[0] for p in all_positions]
    return pings_from(ids, all_positions, cfg)


def mean_degree_estimate(cfg: ModelConfig) -> float:
    return (cfg.n_entities - 1) * math.pi * cfg.radius ** 2 / cfg.space_l ** 2


@dataclass
class SequentialResult:
    step_pings: List[int] = field(default_factory=list)
    final: Dict[int, SmhEntity] = field(default_factory=dict)


def run_sequential(seed: int, n_steps: int, cfg: ModelConfig,
                   entities: List[SmhEntity] | None = None) -> SequentialResult:
    """Plain single-process loop, used as the reference for distributed runs."""
    ents = list(entities) if entities is not None else initial_entities(seed, cfg)
    res = SequentialResult()
    for step in range(n_steps):
        positions = [(e.entity_id, e.x, e.y) for e in ents]
        res.step_pings.append(len(compute_pings(positions, cfg)))
        ents = [advance(e, seed, step, cfg) for e in ents]
    res.final = {e.entity_id: e for e in ents}
    return res
