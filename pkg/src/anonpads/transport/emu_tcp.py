"""Emulated-overlay latency between separate processes.

:class:`EmuOverlay` lives inside one process.  When the coordinator and the
LPs run as separate programs (the ``anonpads sima`` / ``anonpads lp``
commands), this transport carries frames over loopback TCP and holds each
inbound frame back by a one-way delay drawn from the same circuit model.
TCP already gives exactly-once ordered delivery, so a transient circuit
failure is charged as the retransmission-timeout wait the reliability
layer would have paid instead of actually dropping anything.  Only sleep
mode makes sense here.
"""

from __future__ import annotations

import dataclasses
import socket
import threading
import time

from ..wire import Endpoint
from .base import Closed, ConnectFailed, Failed
from .direct import TcpChannel, TcpListener
from .emu import EmuConfig, EmuOverlay, _rng_for, emu_advance, emu_sample_delay, new_circuit
from .reliability import ReliableEndpoint

RESET_PENALTY_MS = ReliableEndpoint().initial_rto_ms


class DelayedTcpChannel(TcpChannel):
    def __init__(self, sock: socket.socket, label: str, clock: EmuOverlay, seed: int):
        self.clock = clock
        cfg = clock.cfg
        self._rng = _rng_for(seed, label, "rx")
        self._circuit = new_circuit(cfg.params, clock.now_ms(), self._rng, cfg)
        self._last_due = 0.0
        self._due_lock = threading.Lock()
        self.failures = 0
        super().__init__(sock, label)

    def _deliver(self, item) -> None:
        cfg = self.clock.cfg
        with self._due_lock:
            if isinstance(item, (Closed, Failed)):
                delay = 0.0
            else:
                self._circuit = emu_advance(self._circuit, self.clock.now_ms(), self._rng, cfg)
                delay = emu_sample_delay(self._circuit, self._rng)
                if self._circuit.reset:
                    self.failures += 1
                    delay += RESET_PENALTY_MS
            due = max(time.monotonic() + delay * cfg.time_scale / 1000.0, self._last_due)
            self._last_due = due
        deliver = super()._deliver
        self.clock.schedule(due, lambda: deliver(item))


class EmuTcpTransport:
    """``emu://host:port`` endpoints backed by real sockets."""

    scheme = "emu"

    def __init__(self, cfg: EmuConfig | None = None, seed: int = 0, name: str = "node",
                 connect_retries: int = 1, retry_delay_s: float = 0.2):
        cfg = dataclasses.replace(cfg or EmuConfig(), mode="sleep")
        self.clock = EmuOverlay(cfg, seed=seed)
        self.seed = seed
        self.name = name
        self.connect_retries = connect_retries
        self.retry_delay_s = retry_delay_s
        self._count = 0

    def _wrap(self, sock, label):
        return DelayedTcpChannel(sock, f"{self.name}:{label}", self.clock, self.seed)

    def listen(self, ep: Endpoint | None = None) -> TcpListener:
        host, port = ("127.0.0.1", 0) if ep is None else (ep.host, ep.port)
        lst = TcpListener(host, port, wrap=self._wrap)
        lst.endpoint = Endpoint("emu", host, lst.bound_port)
        return lst

    def connect(self, ep: Endpoint) -> DelayedTcpChannel:
        last = None
        for attempt in range(1, self.connect_retries + 1):
            try:
                sock = socket.create_connection((ep.host, ep.port), timeout=10.0)
            except OSError as exc:
                last = exc
                if attempt < self.connect_retries:
                    time.sleep(self.retry_delay_s)
                continue
            self._count += 1
            return self._wrap(sock, f"out{self._count}@{ep}")
        raise ConnectFailed(f"connect failed: {last}", ep, self.connect_retries)

    def stop(self) -> None:
        self.clock.stop()
