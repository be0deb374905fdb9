"""Seeded fault injection for the reliability layer.

:class:`LossyLink` is a virtual-time, message-oriented link between two
:class:`ReliableEndpoint` objects.  :func:`run_transfer` pushes a stream
of frames across it and reports what the receiver application saw.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import List, Tuple

from .reliability import ReliableEndpoint


@dataclass
class FaultProfile:
    drop: float = 0.0
    duplicate: float = 0.0
    reset_every: int = 0           # emissions between circuit resets; 0 disables
    delay_ms: Tuple[float, float] = (10.0, 60.0)   # uniform one-way delay; spread reorders


@dataclass
class LinkStats:
    emissions: int = 0
    dropped: int = 0
    duplicated: int = 0
    resets: int = 0
    lost_in_reset: int = 0


class LossyLink:
    """Both directions of a link, sharing one emission counter for resets."""

    def __init__(self, profile: FaultProfile, rng: random.Random):
        self.profile = profile
        self.rng = rng
        self.stats = LinkStats()
        self._heap: List[Tuple[float, int, int, bytes]] = []
        self._n = 0

    def transmit(self, direction: int, wire: bytes, now: float) -> None:
        p = self.profile
        self.stats.emissions += 1
        if p.reset_every and self.stats.emissions % p.reset_every == 0:
            self.stats.resets += 1
            self.stats.lost_in_reset += len(self._heap) + 1
            self._heap.clear()
            return
        if self.rng.random() < p.drop:
            self.stats.dropped += 1
            return
        copies = 1
        if self.rng.random() < p.duplicate:
            copies = 2
            self.stats.duplicated += 1
        for _ in range(copies):
            at = now + self.rng.uniform(*p.delay_ms)
            self._n += 1
            heapq.heappush(self._heap, (at, self._n, direction, wire))

    def next_time(self):
        return self._heap[0][0] if self._heap else None

    def pop_due(self, now: float):
        while self._heap and self._heap[0][0] <= now:
            at, _, direction, wire = heapq.heappop(self._heap)
            yield direction, wire


@dataclass
class TransferResult:
    delivered: List[bytes] = field(default_factory=list)
    sender: ReliableEndpoint | None = None
    receiver: ReliableEndpoint | None = None
    link: LinkStats | None = None
    end_time_ms: float = 0.0
    acks_seen: int = 0


def run_transfer(frames: List[bytes], profile: FaultProfile, seed: int,
                 window: int = 64, max_time_ms: float = 1e12) -> TransferResult:
    """Send ``frames`` from endpoint 0 to endpoint 1 under ``profile``."""
    rng = random.Random(seed)
    link = LossyLink(profile, rng)
    ends = [ReliableEndpoint(window=window), ReliableEndpoint(window=window)]
    res = TransferResult(sender=ends[0], receiver=ends[1], link=link.stats)
    now = 0.0
    i = 0
    n = len(frames)
    while len(res.delivered) < n or not ends[0].idle:
        while i < n and ends[0].can_send():
            for w in ends[0].send(frames[i], now):
                link.transmit(1, w, now)
            i += 1
        t_link, t_timer = link.next_time(), ends[0].next_deadline()
        if t_link is None and t_timer is None:
            break
        nxt = t_timer if t_link is None else t_link if t_timer is None else min(t_link, t_timer)
        now = max(now, nxt)
        if now > max_time_ms:
            break
        for direction, wire in link.pop_due(now):
            delivered, emissions = ends[direction].on_receive(wire, now)
            if direction == 1:
                res.delivered.extend(delivered)
            else:
                res.acks_seen += 1
            for w in emissions:
                link.transmit(1 - direction, w, now)
        deadline = ends[0].next_deadline()
        if deadline is not None and deadline <= now:
            for w in ends[0].tick(now):
                link.transmit(1, w, now)
    res.end_time_ms = now
    return res
