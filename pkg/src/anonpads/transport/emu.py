"""In-process emulation of an onion-routing overlay.

Each direction of a connection runs over its own virtual circuit.  A
circuit adds lognormal latency (moment-matched to a target RTT mean and
standard deviation), lives for a bounded random lifetime, and on rebuild
may inject a transient failure that discards everything in flight.  The
reliability layer rides on top, so channels stay exactly-once and ordered.

Two clock modes:

* ``ledger``: nothing sleeps; each emission's delay is charged to the
  link's virtual clock.  Used for deterministic tests.
* ``sleep``: deliveries are held back for ``delay * time_scale`` of real
  time, so wall-clock measurements feel the overlay.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import logging
import math
import threading
import time
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from ..wire import Endpoint, WireError, decode_frame, encode_frame
from .base import Channel, ChannelClosed, ChannelFailed, Closed, ConnectFailed, Failed, Listener
from .reliability import ReliableEndpoint

log = logging.getLogger(__name__)

# Tor RTT rows (mean_ms, std_ms) between the three cloud hosts.
TOR_RTT_ROWS = {
    "dublin-okeanos": (326.42, 278.52),
    "okeanos-frankfurt": (282.74, 104.83),
    "frankfurt-dublin": (540.74, 54.5),
}


class EmuError(Exception):
    pass


class CircuitDown(EmuError):
    pass


def moment_match(mean_ms: float, std_ms: float) -> Tuple[float, float]:
    """Lognormal ``(mu, sigma)`` whose mean and sd equal the inputs."""
    if not mean_ms > 0:
        raise ValueError("mean must be positive")
    if std_ms < 0:
        raise ValueError("std must be non-negative")
    sigma2 = math.log1p((std_ms / mean_ms) ** 2)
    return math.log(mean_ms) - sigma2 / 2, math.sqrt(sigma2)


def lognormal_moments(mu: float, sigma: float) -> Tuple[float, float]:
    mean = math.exp(mu + sigma * sigma / 2)
    return mean, mean * math.sqrt(math.expm1(sigma * sigma))


@dataclass(frozen=True)
class LatencyParams:
    mean_ms: float
    std_ms: float
    mu: float
    sigma: float

    @classmethod
    def from_moments(cls, mean_ms: float, std_ms: float) -> "LatencyParams":
        mu, sigma = moment_match(mean_ms, std_ms)
        return cls(mean_ms, std_ms, mu, sigma)


@dataclass
class EmuConfig:
    mean_ms: float = 326.42
    std_ms: float = 278.52
    min_lifetime_ms: float = 60_000.0
    max_lifetime_ms: float = 600_000.0
    p_reset: float = 0.05
    base_jitter_ms: float = 0.0
    mode: str = "ledger"
    time_scale: float = 1.0
    tick_ms: float = 20.0

    def __post_init__(self):
        if self.mode not in ("ledger", "sleep"):
            raise ValueError(f"unknown emu mode {self.mode!r}")
        if not 0 < self.min_lifetime_ms <= self.max_lifetime_ms:
            raise ValueError("need 0 < min_lifetime_ms <= max_lifetime_ms")
        if not 0 <= self.p_reset <= 1:
            raise ValueError("p_reset must lie in [0, 1]")
        if self.time_scale <= 0:
            raise ValueError("time_scale must be positive")

    @property
    def params(self) -> LatencyParams:
        return LatencyParams.from_moments(self.mean_ms, self.std_ms)


@dataclass(frozen=True)
class CircuitState:
    established_at: float
    lifetime_ms: float
    params: LatencyParams
    base_offset_ms: float = 0.0
    alive: bool = True
    reset: bool = False        # set on the state returned by a rebuild that failed
    generation: int = 0


def new_circuit(params: LatencyParams, now: float, rng: np.random.Generator,
                cfg: EmuConfig, generation: int = 0) -> CircuitState:
    lifetime = rng.uniform(cfg.min_lifetime_ms, cfg.max_lifetime_ms)
    base = rng.uniform(0.0, cfg.base_jitter_ms) if cfg.base_jitter_ms > 0 else 0.0
    return CircuitState(now, lifetime, params, base, True, False, generation)


def emu_sample_delay(circuit: CircuitState, rng: np.random.Generator) -> float:
    """One-way delay: half of an RTT draw plus the circuit's base offset."""
    if not circuit.alive:
        raise CircuitDown("circuit must be rebuilt before use")
    p = circuit.params
    rtt = math.exp(p.mu) if p.sigma == 0 else rng.lognormal(p.mu, p.sigma)
    return circuit.base_offset_ms + rtt / 2


def emu_sample_rtt(circuit: CircuitState, rng: np.random.Generator) -> float:
    if not circuit.alive:
        raise CircuitDown("circuit must be rebuilt before use")
    p = circuit.params
    rtt = math.exp(p.mu) if p.sigma == 0 else rng.lognormal(p.mu, p.sigma)
    return 2 * circuit.base_offset_ms + rtt


def emu_advance(circuit: CircuitState, now: float, rng: np.random.Generator,
                cfg: EmuConfig) -> CircuitState:
    if circuit.alive and now - circuit.established_at <= circuit.lifetime_ms:
        if circuit.reset:
            return replace(circuit, reset=False)
        return circuit
    failed = cfg.p_reset > 0 and rng.random() < cfg.p_reset
    rebuilt = new_circuit(circuit.params, now, rng, cfg, circuit.generation + 1)
    return replace(rebuilt, reset=failed)


def anon_token(*parts) -> str:
    digest = hashlib.blake2b(repr(parts).encode(), digest_size=8).hexdigest()
    return f"anon:{digest}"


def _rng_for(seed: int, *labels) -> np.random.Generator:
    h = hashlib.blake2b(repr((seed,) + labels).encode(), digest_size=16).digest()
    return np.random.default_rng(int.from_bytes(h, "big"))


# -- overlay ------------------------------------------------------------------

class _Link:
    """One direction of an emulated connection."""

    def __init__(self, overlay: "EmuOverlay", rng: np.random.Generator, params: LatencyParams):
        self.overlay = overlay
        self.rng = rng
        self.circuit = new_circuit(params, 0.0, rng, overlay.cfg)
        self.vclock = 0.0
        self.last_due = 0.0
        self.epoch = 0
        self.lock = threading.Lock()
        self.emissions = 0
        self.failures = 0
        self.rebuilds = 0
        self.latency_ms = 0.0

    def transmit(self, wire: bytes, deliver: Callable[[bytes], None]) -> None:
        ov = self.overlay
        with self.lock:
            self.emissions += 1
            now_v = self.vclock if ov.ledger else ov.now_ms()
            gen = self.circuit.generation
            self.circuit = emu_advance(self.circuit, now_v, self.rng, ov.cfg)
            if self.circuit.generation != gen:
                self.rebuilds += 1
            if self.circuit.reset:
                # transient failure: whatever is in flight is gone
                self.failures += 1
                self.epoch += 1
                return
            d = emu_sample_delay(self.circuit, self.rng)
            self.latency_ms += d
            real_now = time.monotonic()
            if ov.ledger:
                self.vclock += d
                due = real_now
            else:
                due = real_now + d * ov.cfg.time_scale / 1000.0
            due = max(due, self.last_due)
            self.last_due = due
            epoch = self.epoch

        def fire():
            if self.epoch == epoch:
                deliver(wire)

        ov.schedule(due, fire)

    def after_inflight(self, fn: Callable[[], None]) -> None:
        with self.lock:
            due = max(time.monotonic(), self.last_due)
        self.overlay.schedule(due, fn)


class EmuChannel(Channel):
    def __init__(self, overlay: "EmuOverlay", label: str, rel_kwargs=None):
        super().__init__()
        self.overlay = overlay
        self.label = label
        self.rel = ReliableEndpoint(**(rel_kwargs or {}))
        self.peer: Optional[EmuChannel] = None
        self.out_link: Optional[_Link] = None
        self._state = threading.Condition()
        self._closing = False
        self._failed: Optional[Exception] = None

    def _now(self) -> float:
        return self.overlay.now_ms()

    def send(self, msg) -> None:
        frame = encode_frame(msg)
        with self._state:
            if self._closing:
                raise ChannelClosed(f"{self.label}: send on closed channel")
            while not self.rel.can_send():
                if self._failed is not None:
                    raise ChannelFailed(f"{self.label}: {self._failed}")
                self._state.wait(0.05)
            emissions = self.rel.send(frame, self._now())
            self.frames_sent += 1
        for w in emissions:
            self.out_link.transmit(w, self.peer._on_wire)

    def _on_wire(self, wire: bytes) -> None:
        with self._state:
            delivered, emissions = self.rel.on_receive(wire, self._now())
            self._state.notify_all()
            closing = self._closing
        for w in emissions:
            self.out_link.transmit(w, self.peer._on_wire)
        if closing:
            return
        for frame in delivered:
            try:
                res = decode_frame(frame)
            except WireError as exc:
                self._deliver(Failed(exc))
                continue
            if res is None:
                self._deliver(Failed(WireError("truncated frame")))
            else:
                self._deliver(res[0])

    def _tick(self) -> None:
        with self._state:
            if self._failed is not None:
                return
            try:
                emissions = self.rel.tick(self._now())
            except ChannelFailed as exc:
                self._failed = exc
                self._state.notify_all()
                if not self._closing:
                    self._deliver(Failed(exc))
                return
        for w in emissions:
            self.out_link.transmit(w, self.peer._on_wire)

    def close(self, linger_s: float = 10.0) -> None:
        """Stop accepting sends, wait for outstanding frames to be acked,
        then signal the peer.  The endpoint keeps acking afterwards so a
        peer that lost an ack can still finish."""
        with self._state:
            if self._closing:
                return
            self._closing = True
            deadline = time.monotonic() + linger_s
            while not self.rel.idle and self._failed is None:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    log.debug("%s: closing with %d unacked frames", self.label, len(self.rel.unacked))
                    break
                self._state.wait(min(remaining, 0.05))
        peer = self.peer
        self.out_link.after_inflight(lambda: peer._deliver(Closed("peer closed")))

    def link_stats(self) -> Dict[str, float]:
        lk = self.out_link
        return {"emissions": lk.emissions, "failures": lk.failures, "rebuilds": lk.rebuilds,
                "latency_ms": lk.latency_ms, "retransmissions": self.rel.retransmissions}


class EmuListener(Listener):
    def __init__(self, overlay: "EmuOverlay", endpoint: Endpoint):
        self.overlay = overlay
        self.endpoint = endpoint
        self._pending: List[EmuChannel] = []
        self._cond = threading.Condition()
        self.closed = False

    def _enqueue(self, chan: EmuChannel) -> None:
        with self._cond:
            self._pending.append(chan)
            self._cond.notify_all()

    def accept(self, timeout: float | None = None) -> Channel:
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            while not self._pending:
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    raise TimeoutError(f"no inbound connection within {timeout}s")
                self._cond.wait(remaining)
            return self._pending.pop(0)

    def close(self) -> None:
        self.closed = True
        self.overlay._unregister(self.endpoint)


class EmuOverlay:
    """Shared medium for all emulated endpoints in one process."""

    def __init__(self, cfg: EmuConfig | None = None, seed: int = 0, rel_kwargs=None):
        self.cfg = cfg or EmuConfig()
        self.seed = seed
        self.ledger = self.cfg.mode == "ledger"
        self.rel_kwargs = rel_kwargs or {}
        self._t0 = time.monotonic()
        self._listeners: Dict[Tuple[str, int], EmuListener] = {}
        self._reg_lock = threading.Lock()
        self._heap: list = []
        self._heap_cond = threading.Condition()
        self._counter = itertools.count()
        self._channels: List[EmuChannel] = []
        self._stopped = False
        self._thread = threading.Thread(target=self._run, name="emu-scheduler", daemon=True)
        self._thread.start()

    def now_ms(self) -> float:
        elapsed = (time.monotonic() - self._t0) * 1000.0
        return elapsed if self.ledger else elapsed / self.cfg.time_scale

    # scheduling
    def schedule(self, due: float, fn: Callable[[], None]) -> None:
        with self._heap_cond:
            heapq.heappush(self._heap, (due, next(self._counter), fn))
            self._heap_cond.notify()

    def _run(self) -> None:
        tick_s = self.cfg.tick_ms / 1000.0
        next_tick = time.monotonic() + tick_s
        while True:
            with self._heap_cond:
                while True:
                    if self._stopped:
                        return
                    now = time.monotonic()
                    if self._heap and self._heap[0][0] <= now:
                        _, _, fn = heapq.heappop(self._heap)
                        break
                    if now >= next_tick:
                        fn = None
                        next_tick = now + tick_s
                        break
                    wake = next_tick if not self._heap else min(next_tick, self._heap[0][0])
                    self._heap_cond.wait(max(0.0, wake - now))
            if fn is None:
                for chan in list(self._channels):
                    chan._tick()
                continue
            try:
                fn()
            except Exception:
                log.exception("emu delivery callback failed")

    def stop(self) -> None:
        with self._heap_cond:
            self._stopped = True
            self._heap_cond.notify_all()
        self._thread.join(timeout=2.0)

    # registry
    def listen(self, ep: Endpoint) -> EmuListener:
        key = (ep.host, ep.port)
        with self._reg_lock:
            if key in self._listeners:
                raise EmuError(f"address in use: {ep}")
            lst = EmuListener(self, ep)
            self._listeners[key] = lst
        return lst

    def _unregister(self, ep: Endpoint) -> None:
        with self._reg_lock:
            self._listeners.pop((ep.host, ep.port), None)

    def connect(self, src: str, dest: Endpoint, params: LatencyParams | None = None) -> EmuChannel:
        with self._reg_lock:
            lst = self._listeners.get((dest.host, dest.port))
        if lst is None or lst.closed:
            raise ConnectFailed("no hidden service at address", dest)
        params = params or self.cfg.params
        client = EmuChannel(self, f"{src}->{dest.host}", self.rel_kwargs)
        server = EmuChannel(self, f"{dest.host}<-{src}", self.rel_kwargs)
        client.peer, server.peer = server, client
        client.out_link = _Link(self, _rng_for(self.seed, src, str(dest), "up"), params)
        server.out_link = _Link(self, _rng_for(self.seed, src, str(dest), "down"), params)
        with self._heap_cond:
            self._channels.extend((client, server))
        lst._enqueue(server)
        return client

    def has_listener(self, dest: Endpoint) -> bool:
        with self._reg_lock:
            return (dest.host, dest.port) in self._listeners


class EmuTransport:
    scheme = "emu"
    default_port = 9001

    def __init__(self, overlay: EmuOverlay, name: str = "client"):
        self.overlay = overlay
        self.name = name
        self._probe: Dict[Endpoint, Tuple[CircuitState, np.random.Generator]] = {}

    def listen(self, ep: Endpoint | None = None) -> EmuListener:
        if ep is None:
            ep = Endpoint("emu", anon_token(self.overlay.seed, self.name), self.default_port)
        lst = self.overlay.listen(ep)
        return lst

    def connect(self, ep: Endpoint) -> EmuChannel:
        return self.overlay.connect(self.name, ep)

    def probe_rtt(self, dest: Endpoint, now_v: float) -> Optional[float]:
        """Connection-setup RTT at virtual time ``now_v``; None when the
        probe hits a transient circuit failure."""
        if not self.overlay.has_listener(dest):
            raise ConnectFailed("no hidden service at address", dest)
        cfg = self.overlay.cfg
        if dest not in self._probe:
            rng = _rng_for(self.overlay.seed, self.name, str(dest), "probe")
            self._probe[dest] = (new_circuit(cfg.params, now_v, rng, cfg), rng)
        circuit, rng = self._probe[dest]
        circuit = emu_advance(circuit, now_v, rng, cfg)
        self._probe[dest] = (circuit, rng)
        if circuit.reset:
            return None
        return emu_sample_rtt(circuit, rng)
