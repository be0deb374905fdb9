from __future__ import annotations

import threading
import time
from collections import deque
from typing import Callable, Optional


class TransportError(Exception):
    def __init__(self, message: str, endpoint=None):
        super().__init__(message if endpoint is None else f"{message} [{endpoint}]")
        self.endpoint = endpoint


class ConnectFailed(TransportError):
    def __init__(self, message: str, endpoint=None, attempts: int = 1):
        super().__init__(f"{message} after {attempts} attempt(s)", endpoint)
        self.attempts = attempts


class ChannelClosed(TransportError):
    pass


class ChannelFailed(TransportError):
    pass


class Closed:
    """Delivered in place of a message when the peer closed the channel."""

    def __init__(self, reason: str = "closed"):
        self.reason = reason

    def __repr__(self):
        return f"Closed({self.reason!r})"


class Failed:
    """Delivered in place of a message when the channel broke."""

    def __init__(self, error: Exception):
        self.error = error

    def __repr__(self):
        return f"Failed({self.error!r})"


Sink = Callable[["Channel", object], None]


class Channel:
    """Bidirectional, ordered message channel to one peer.

    Inbound items (messages, or :class:`Closed` / :class:`Failed` markers)
    are buffered until a sink is installed with :meth:`set_sink`, or
    pulled one at a time with :meth:`recv`.
    """

    label = "channel"

    def __init__(self):
        self._cond = threading.Condition()
        self._inbox: deque = deque()
        self._sink: Optional[Sink] = None
        self.frames_sent = 0
        self.frames_received = 0

    def _deliver(self, item) -> None:
        with self._cond:
            if not isinstance(item, (Closed, Failed)):
                self.frames_received += 1
            if self._sink is not None:
                self._sink(self, item)
            else:
                self._inbox.append(item)
                self._cond.notify_all()

    def set_sink(self, sink: Optional[Sink]) -> None:
        with self._cond:
            self._sink = sink
            if sink is not None:
                while self._inbox:
                    sink(self, self._inbox.popleft())

    def recv(self, timeout: float | None = None):
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            while not self._inbox:
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    raise TimeoutError(f"no message from {self.label} within {timeout}s")
                self._cond.wait(remaining)
            item = self._inbox.popleft()
        if isinstance(item, Closed):
            raise ChannelClosed(f"{self.label}: {item.reason}")
        if isinstance(item, Failed):
            raise ChannelFailed(f"{self.label}: {item.error}")
        return item

    def send(self, msg) -> None:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError


class Listener:
    endpoint = None

    def accept(self, timeout: float | None = None) -> Channel:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError
