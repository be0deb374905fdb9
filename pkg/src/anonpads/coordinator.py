"""Bootstrap coordinator (SIMA).

Collects one ``Register`` per LP, hands out pseudonym ids in arrival
order, and once everyone has arrived broadcasts the roster and exits.  It
only ever sees the endpoints the LPs report about themselves.
"""

from __future__ import annotations

import logging
import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

from .transport.base import Closed, Failed
from .wire import Endpoint, LpIdentity, Register, RegisterAck, Roster

log = logging.getLogger(__name__)

COLLECTING = "collecting"
BROADCAST_DONE = "broadcast_done"


class RegistrationRejected(Exception):
    pass


class SimaTimeout(Exception):
    pass


@dataclass
class SimaState:
    expected_lps: int
    registered: Dict[int, LpIdentity] = field(default_factory=dict)
    phase: str = COLLECTING
    sinks: Dict[int, Callable] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.expected_lps < 1:
            raise ValueError("expected_lps must be >= 1")

    def roster(self) -> Roster:
        return Roster(tuple(self.registered[i] for i in sorted(self.registered)))


def handle_register(state: SimaState, msg: Register, reply: Callable) -> SimaState:
    """Assign the next id, ack it, and broadcast the roster once full.

    ``reply`` sends a message back to the registering LP and is kept so the
    roster can reach it later.
    """
    if state.phase != COLLECTING:
        raise RegistrationRejected("registration after roster broadcast")
    if any(ident.endpoint == msg.listen_endpoint for ident in state.registered.values()):
        raise RegistrationRejected(f"endpoint already registered: {msg.listen_endpoint}")
    lp_id = len(state.registered)
    state.registered[lp_id] = LpIdentity(lp_id, msg.listen_endpoint)
    state.sinks[lp_id] = reply
    log.info("registered lp %d (%d/%d)", lp_id, len(state.registered), state.expected_lps)
    reply(RegisterAck(lp_id, state.expected_lps))
    if len(state.registered) == state.expected_lps:
        roster = state.roster()
        for i in sorted(state.sinks):
            state.sinks[i](roster)
        state.phase = BROADCAST_DONE
        log.info("roster of %d broadcast", len(roster.entries))
    return state


@dataclass
class ExitReport:
    entries: List[LpIdentity]
    rejected: int = 0
    duration_s: float = 0.0

    def lines(self) -> List[str]:
        return [f"lp {e.lp_id}\t{e.endpoint}" for e in self.entries]


class Sima:
    def __init__(self, transport, expected_lps: int, listen_ep: Endpoint | None = None,
                 timeout_s: float = 300.0, listener=None):
        self.transport = transport
        self.state = SimaState(expected_lps)
        self.timeout_s = timeout_s
        self.listener = listener if listener is not None else transport.listen(listen_ep)
        self._inbox: "queue.Queue" = queue.Queue()
        self._channels: list = []
        self._stop = threading.Event()

    @property
    def endpoint(self) -> Endpoint:
        return self.listener.endpoint

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                chan = self.listener.accept(timeout=0.1)
            except TimeoutError:
                continue
            except OSError:
                return
            self._channels.append(chan)
            chan.set_sink(lambda ch, item: self._inbox.put((ch, item)))

    def serve(self) -> ExitReport:
        t0 = time.monotonic()
        deadline = t0 + self.timeout_s
        acceptor = threading.Thread(target=self._accept_loop, name="sima-accept", daemon=True)
        acceptor.start()
        rejected = 0
        registered_on: Dict[int, object] = {}
        try:
            while self.state.phase == COLLECTING:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise SimaTimeout(f"only {len(self.state.registered)} of "
                                      f"{self.state.expected_lps} LPs registered in {self.timeout_s}s")
                try:
                    chan, item = self._inbox.get(timeout=min(remaining, 0.5))
                except queue.Empty:
                    continue
                if isinstance(item, (Closed, Failed)):
                    continue
                if not isinstance(item, Register) or chan in registered_on.values():
                    log.warning("unexpected %s during registration; dropping connection",
                                type(item).__name__)
                    chan.close()
                    continue
                try:
                    handle_register(self.state, item, chan.send)
                    registered_on[len(self.state.registered) - 1] = chan
                except RegistrationRejected as exc:
                    rejected += 1
                    log.warning("rejected registration: %s", exc)
                    chan.close()
        finally:
            self._stop.set()
            acceptor.join(timeout=1.0)
            self.listener.close()
            for chan in self._channels:
                try:
                    chan.close()
                except Exception:
                    pass
        return ExitReport(list(self.state.registered.values()), rejected, time.monotonic() - t0)


def run_sima(listen_ep: Endpoint | None, expected_lps: int, transport,
             timeout_s: float = 300.0) -> ExitReport:
    return Sima(transport, expected_lps, listen_ep, timeout_s).serve()
