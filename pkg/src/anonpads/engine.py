"""Logical Process runtime.

An LP registers with the coordinator, builds its share of the full mesh
(it dials every LP with a lower id and accepts from every higher one),
then runs the time-stepped cycle:

A. broadcast a position digest of hosted entities;
B. once every peer's digest for the step is in, count pings (local ones
   in place, remote ones batched to the hosting LP) and move entities;
C. if the balancer is due, ship planned entities and announce the moves;
D. send ``StepEnd`` with the number of frames sent to that peer this
   step, and advance once every peer's ``StepEnd`` and frames are in.

Ownership changes only at the step barrier, so the global trajectory is
the same for any partitioning.
"""

from __future__ import annotations

import hashlib
import logging
import queue
import threading
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

from .balancer import BalancerConfig, InteractionWindow, plan_migrations
from .model import ModelConfig, SmhEntity, advance, entity_rng, initial_entities, pings_from
from .transport.base import ChannelClosed, ChannelFailed, Closed, ConnectFailed, Failed, TransportError
from .wire import (Endpoint, Hello, LpIdentity, Migrate, MigrateNotice, PingBatch,
                   PositionDigest, Register, RegisterAck, Roster, StepEnd)

log = logging.getLogger(__name__)


class EngineError(Exception):
    pass


class BootstrapError(EngineError):
    pass


class MeshError(EngineError):
    pass


class StepTimeout(EngineError):
    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class RunAborted(EngineError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


@dataclass
class RunConfig:
    seed: int = 1
    n_steps: int = 200
    model: ModelConfig = field(default_factory=ModelConfig)
    balancer: BalancerConfig = field(default_factory=BalancerConfig)
    placement: str = "round_robin"
    bootstrap_timeout_s: float = 60.0
    step_timeout_s: float = 120.0
    connect_retry_s: float = 0.1
    # fixtures: explicit initial entities and an entity -> lp assignment
    entities: Optional[List[SmhEntity]] = None
    assignment: Optional[Dict[int, int]] = None
    trace: bool = False

    def __post_init__(self):
        if self.placement not in ("round_robin", "random"):
            raise ValueError(f"unknown placement {self.placement!r}")

    def all_entities(self) -> List[SmhEntity]:
        if self.entities is not None:
            return list(self.entities)
        return initial_entities(self.seed, self.model)

    def home_lp(self, entity_id: int, n_lps: int) -> int:
        if self.assignment is not None and entity_id in self.assignment:
            return self.assignment[entity_id] % n_lps
        if self.placement == "random":
            return entity_rng(self.seed, entity_id, 0, "placement").randint(0, n_lps - 1)
        return entity_id % n_lps


@dataclass
class RunMetrics:
    wct_s: float = 0.0
    init_s: float = 0.0
    pings_total: int = 0
    pings_remote: int = 0
    pings_received: int = 0
    digest_frames: int = 0
    ping_frames: int = 0
    migrate_frames: int = 0
    notice_frames: int = 0
    step_end_frames: int = 0
    migrations: int = 0
    steps: int = 0
    step_pings: List[int] = field(default_factory=list)
    step_remote: List[int] = field(default_factory=list)
    step_migrations: List[int] = field(default_factory=list)

    COUNTERS = ("pings_total", "pings_remote", "pings_received", "digest_frames", "ping_frames",
                "migrate_frames", "notice_frames", "step_end_frames", "migrations", "steps")

    def counters(self) -> dict:
        """Everything except wall-clock fields; equal across repeated seeded runs."""
        out = {k: getattr(self, k) for k in self.COUNTERS}
        out["step_pings"] = list(self.step_pings)
        out["step_remote"] = list(self.step_remote)
        out["step_migrations"] = list(self.step_migrations)
        return out

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def merge(cls, parts: List["RunMetrics"]) -> "RunMetrics":
        """Combine per-LP metrics: counters add, clocks take the slowest LP."""
        out = cls()
        if not parts:
            return out
        out.wct_s = max(p.wct_s for p in parts)
        out.init_s = max(p.init_s for p in parts)
        for k in cls.COUNTERS:
            if k != "steps":
                setattr(out, k, sum(getattr(p, k) for p in parts))
        out.steps = max(p.steps for p in parts)
        for name in ("step_pings", "step_remote", "step_migrations"):
            n = max(len(getattr(p, name)) for p in parts)
            setattr(out, name, [sum(getattr(p, name)[i] for p in parts if i < len(getattr(p, name)))
                                for i in range(n)])
        return out


@dataclass
class LpResult:
    lp_id: int
    roster: Roster
    metrics: RunMetrics
    final_entities: Dict[int, SmhEntity]
    initiated: List[Tuple[int, int]]
    accepted: List[Tuple[int, int]]
    step_local_counts: List[int] = field(default_factory=list)
    step_directory_hash: List[str] = field(default_factory=list)
    trace: List[tuple] = field(default_factory=list)
    link_stats: Dict[int, dict] = field(default_factory=dict)


class _StepInbox:
    def __init__(self):
        self.digests: Dict[int, tuple] = {}
        self.pings: List[tuple] = []
        self.migrates: List[Migrate] = []
        self.notices: List[MigrateNotice] = []
        self.step_ends: Dict[int, int] = {}
        self.counts: Dict[int, int] = defaultdict(int)


class LogicalProcess:
    def __init__(self, transport, sima_ep: Endpoint, cfg: RunConfig,
                 listen_ep: Endpoint | None = None, listener=None):
        self.transport = transport
        self.sima_ep = sima_ep
        self.cfg = cfg
        self.listen_ep = listen_ep
        self.listener = listener
        self.me: Optional[LpIdentity] = None
        self.roster: Optional[Roster] = None
        self.peers: Dict[int, object] = {}
        self.initiated: List[Tuple[int, int]] = []
        self.accepted: List[Tuple[int, int]] = []
        self.local: Dict[int, SmhEntity] = {}
        self.directory: Dict[int, int] = {}
        self.step = 0
        self.metrics = RunMetrics()
        self.window = InteractionWindow(cfg.balancer.window)
        self.last_migrated: Dict[int, int] = {}
        self._queue: "queue.Queue" = queue.Queue()
        self._inbox: Dict[int, _StepInbox] = defaultdict(_StepInbox)
        self._final_step_end: set = set()
        self._t_boot = None
        self.step_local_counts: List[int] = []
        self.step_directory_hash: List[str] = []
        self.trace: List[tuple] = []

    @property
    def lp_id(self) -> int:
        return self.me.lp_id

    @property
    def n_lps(self) -> int:
        return len(self.roster.entries)

    # -- bootstrap ------------------------------------------------------------

    def _connect_with_retry(self, ep: Endpoint, deadline: float):
        while True:
            try:
                return self.transport.connect(ep)
            except ConnectFailed:
                if time.monotonic() >= deadline:
                    raise
                time.sleep(self.cfg.connect_retry_s)

    def bootstrap(self) -> Tuple[LpIdentity, Roster]:
        self._t_boot = time.monotonic()
        deadline = self._t_boot + self.cfg.bootstrap_timeout_s
        if self.listener is None:
            self.listener = self.transport.listen(self.listen_ep)
        my_ep = self.listener.endpoint
        try:
            sima = self._connect_with_retry(self.sima_ep, deadline)
        except ConnectFailed as exc:
            raise BootstrapError(f"cannot reach coordinator: {exc}") from exc
        try:
            sima.send(Register(my_ep))
            ack = sima.recv(timeout=max(0.0, deadline - time.monotonic()))
            if not isinstance(ack, RegisterAck):
                raise BootstrapError(f"expected RegisterAck, got {type(ack).__name__}")
            roster = sima.recv(timeout=max(0.0, deadline - time.monotonic()))
            if not isinstance(roster, Roster):
                raise BootstrapError(f"expected Roster, got {type(roster).__name__}")
        except TimeoutError as exc:
            raise BootstrapError(f"bootstrap timed out: {exc}") from exc
        except (ChannelClosed, ChannelFailed) as exc:
            raise BootstrapError(f"coordinator rejected or dropped us: {exc}") from exc
        finally:
            sima.close()
        if len(roster.entries) != ack.total_lps:
            raise BootstrapError("roster size disagrees with RegisterAck")
        self.me = LpIdentity(ack.lp_id, my_ep)
        if roster.entries[ack.lp_id] != self.me:
            raise BootstrapError("roster entry for our id does not match our endpoint")
        self.roster = roster
        return self.me, roster

    def establish_mesh(self) -> None:
        me = self.lp_id
        higher = {e.lp_id for e in self.roster.entries if e.lp_id > me}
        deadline = time.monotonic() + self.cfg.bootstrap_timeout_s
        errors: List[Exception] = []
        accepted: Dict[int, object] = {}

        def accept_loop():
            try:
                while len(accepted) < len(higher):
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        raise MeshError(f"LP {me}: peers {sorted(higher - set(accepted))} never connected")
                    chan = self.listener.accept(timeout=remaining)
                    hello = chan.recv(timeout=max(0.1, deadline - time.monotonic()))
                    if not isinstance(hello, Hello):
                        raise MeshError(f"expected Hello, got {type(hello).__name__}")
                    if hello.lp_id not in higher or hello.lp_id in accepted:
                        raise MeshError(f"Hello from unexpected id {hello.lp_id}")
                    accepted[hello.lp_id] = chan
            except Exception as exc:  # reported to the main thread
                errors.append(exc)

        acceptor = threading.Thread(target=accept_loop, name=f"lp{me}-accept", daemon=True)
        acceptor.start()
        for entry in self.roster.entries:
            if entry.lp_id >= me:
                continue
            try:
                chan = self._connect_with_retry(entry.endpoint, deadline)
            except ConnectFailed as exc:
                raise MeshError(f"LP {me} cannot reach LP {entry.lp_id}: {exc}") from exc
            chan.send(Hello(me))
            self.peers[entry.lp_id] = chan
            self.initiated.append((me, entry.lp_id))
        acceptor.join()
        if errors:
            raise errors[0] if isinstance(errors[0], EngineError) else MeshError(str(errors[0]))
        for pid, chan in sorted(accepted.items()):
            self.peers[pid] = chan
            self.accepted.append((pid, me))
        for pid, chan in self.peers.items():
            chan.set_sink(lambda ch, item, pid=pid: self._queue.put((pid, item)))
        self.metrics.init_s = time.monotonic() - self._t_boot

    def load_entities(self) -> None:
        n = self.n_lps
        for e in self.cfg.all_entities():
            host = self.cfg.home_lp(e.entity_id, n)
            self.directory[e.entity_id] = host
            if host == self.lp_id:
                self.local[e.entity_id] = e

    # -- messaging ------------------------------------------------------------

    def _send(self, pid: int, msg, sent: Dict[int, int]) -> None:
        try:
            self.peers[pid].send(msg)
        except TransportError as exc:
            raise RunAborted(f"LP {self.lp_id}: send to LP {pid} failed: {exc}", self.step) from exc
        sent[pid] += 1

    def _file(self, pid: int, item) -> None:
        if isinstance(item, Failed):
            raise RunAborted(f"LP {self.lp_id}: channel to LP {pid} failed: {item.error}", self.step)
        if isinstance(item, Closed):
            if pid not in self._final_step_end:
                raise RunAborted(f"LP {self.lp_id}: LP {pid} closed mid-run", self.step)
            return
        step = item.step
        if step < self.step:
            raise RunAborted(f"LP {self.lp_id}: stale {type(item).__name__} for step {step}", self.step)
        box = self._inbox[step]
        if isinstance(item, StepEnd):
            if item.lp_id != pid:
                raise RunAborted(f"StepEnd from LP {pid} claims id {item.lp_id}", self.step)
            box.step_ends[pid] = item.sent_count
            if step == self.cfg.n_steps - 1:
                self._final_step_end.add(pid)
            return
        box.counts[pid] += 1
        if isinstance(item, PositionDigest):
            box.digests[pid] = item.entries
        elif isinstance(item, PingBatch):
            box.pings.append((pid, item.pairs))
        elif isinstance(item, Migrate):
            box.migrates.append(item)
        elif isinstance(item, MigrateNotice):
            box.notices.append(item)
        else:
            raise RunAborted(f"unexpected {type(item).__name__} from LP {pid}", self.step)

    def _wait(self, ready, what: str) -> None:
        deadline = time.monotonic() + self.cfg.step_timeout_s
        while not ready():
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise StepTimeout(f"LP {self.lp_id}: timed out waiting for {what}", self.step)
            try:
                pid, item = self._queue.get(timeout=min(remaining, 1.0))
            except queue.Empty:
                continue
            self._file(pid, item)

    def _trace(self, *event) -> None:
        if self.cfg.trace:
            self.trace.append(event)

    # -- step cycle -----------------------------------------------------------

    def step_cycle(self) -> None:
        t = self.step
        me = self.lp_id
        peers = sorted(self.peers)
        sent: Dict[int, int] = defaultdict(int)
        box = self._inbox[t]
        model = self.cfg.model

        # A: digest of hosted entities
        local_ids = sorted(self.local)
        digest = PositionDigest(t, tuple((i, self.local[i].x, self.local[i].y) for i in local_ids))
        for pid in peers:
            self._send(pid, digest, sent)
            self.metrics.digest_frames += 1

        # B: pings and movement
        self._wait(lambda: all(p in box.digests for p in peers), f"digests of step {t}")
        self._trace("consume", t, "digest")
        positions = list(digest.entries)
        for pid in peers:
            positions.extend(box.digests[pid])
        pairs = pings_from(local_ids, positions, model)
        remote: Dict[int, list] = defaultdict(list)
        per_src: Dict[int, Dict[int, int]] = defaultdict(lambda: defaultdict(int))
        n_remote = 0
        for src, dst in pairs:
            host = self.directory[dst]
            per_src[src][host] += 1
            if host != me:
                remote[host].append((src, dst))
                n_remote += 1
        for src, counts in per_src.items():
            for host, n in counts.items():
                self.window.record(src, host, n, t)
        for pid in peers:
            if remote.get(pid):
                self._send(pid, PingBatch(t, remote[pid]), sent)
                self.metrics.ping_frames += 1
        self.metrics.pings_total += len(pairs)
        self.metrics.pings_remote += n_remote
        self.metrics.step_pings.append(len(pairs))
        self.metrics.step_remote.append(n_remote)
        for i in local_ids:
            self.local[i] = advance(self.local[i], self.cfg.seed, t, model)

        # C: migrations, committed at the barrier
        outgoing: List[Tuple[int, int]] = []
        bal = self.cfg.balancer
        if bal.enabled and peers and (t + 1) % bal.eval_period == 0:
            for eid, dest in plan_migrations(self.window, bal, t, me, self.local, self.last_migrated):
                self.migrate_out(eid, dest, sent)
                outgoing.append((eid, dest))
        self.metrics.step_migrations.append(len(outgoing))

        # D: step end and barrier
        for pid in peers:
            try:
                self.peers[pid].send(StepEnd(t, me, sent[pid]))
            except TransportError as exc:
                raise RunAborted(f"LP {me}: send to LP {pid} failed: {exc}", t) from exc
            self.metrics.step_end_frames += 1
        self._wait(lambda: all(p in box.step_ends and box.counts[p] >= box.step_ends[p] for p in peers),
                   f"barrier of step {t}")
        self._trace("barrier", t)
        self._trace("consume", t, "barrier-content")
        for pid, pairs_in in box.pings:
            self.metrics.pings_received += len(pairs_in)
        for m in box.migrates:
            self.migrate_in(m)
        for n in box.notices:
            self.directory[n.entity_id] = n.new_lp
        for eid, dest in outgoing:
            self.directory[eid] = dest
        del self._inbox[t]
        self.step_local_counts.append(len(self.local))
        self.step_directory_hash.append(self._directory_hash())
        self.step = t + 1
        self.metrics.steps = self.step

    def migrate_out(self, entity_id: int, dest_lp: int, sent: Dict[int, int]) -> None:
        if entity_id not in self.local:
            raise EngineError(f"cannot migrate unknown entity {entity_id}")
        if dest_lp == self.lp_id or dest_lp not in self.peers:
            raise EngineError(f"bad migration destination {dest_lp}")
        t = self.step
        entity = self.local.pop(entity_id)
        self._send(dest_lp, Migrate(t, entity.to_bytes()), sent)
        self.metrics.migrate_frames += 1
        for pid in sorted(self.peers):
            if pid != dest_lp:
                self._send(pid, MigrateNotice(t, entity_id, dest_lp), sent)
                self.metrics.notice_frames += 1
        self.window.drop(entity_id)
        self.last_migrated.pop(entity_id, None)
        self.metrics.migrations += 1

    def migrate_in(self, msg: Migrate) -> None:
        entity = SmhEntity.from_bytes(msg.entity_blob)
        if entity.entity_id in self.local:
            raise EngineError(f"inbound duplicate entity {entity.entity_id}")
        self.local[entity.entity_id] = entity
        self.directory[entity.entity_id] = self.lp_id
        self.last_migrated[entity.entity_id] = msg.step

    def _directory_hash(self) -> str:
        h = hashlib.blake2b(digest_size=8)
        for eid in sorted(self.directory):
            h.update(b"%d:%d;" % (eid, self.directory[eid]))
        return h.hexdigest()

    def run_steps(self, n_steps: int) -> RunMetrics:
        t0 = time.monotonic()
        for _ in range(n_steps):
            self.step_cycle()
        self.metrics.wct_s = time.monotonic() - t0
        return self.metrics

    # -- lifecycle ------------------------------------------------------------

    def close(self) -> None:
        for chan in self.peers.values():
            try:
                chan.close()
            except Exception:
                log.debug("error closing channel", exc_info=True)
        if self.listener is not None:
            self.listener.close()

    def run(self) -> LpResult:
        try:
            self.bootstrap()
            self.establish_mesh()
            self.load_entities()
            self.run_steps(self.cfg.n_steps)
        finally:
            self.close()
        stats = {}
        for pid, chan in self.peers.items():
            if hasattr(chan, "link_stats"):
                stats[pid] = chan.link_stats()
        return LpResult(self.lp_id, self.roster, self.metrics, dict(self.local),
                        list(self.initiated), list(self.accepted), self.step_local_counts,
                        self.step_directory_hash, self.trace, stats)
