"""Plain TCP channels."""

from __future__ import annotations

import logging
import socket
import threading
import time

from ..wire import Endpoint, FrameDecoder, WireError, encode_frame
from .base import Channel, ChannelClosed, Closed, ConnectFailed, Failed, Listener, TransportError

log = logging.getLogger(__name__)


class TcpChannel(Channel):
    """Frames over a connected stream socket, read by a daemon thread."""

    def __init__(self, sock: socket.socket, label: str = "tcp"):
        super().__init__()
        self.label = label
        self.sock = sock
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.sock.settimeout(None)
        self._send_lock = threading.Lock()
        self._closing = False
        self._reader = threading.Thread(target=self._read_loop, name=f"rx-{label}", daemon=True)
        self._reader.start()

    def _read_loop(self):
        decoder = FrameDecoder()
        try:
            while True:
                chunk = self.sock.recv(65536)
                if not chunk:
                    self._deliver(Closed("peer closed"))
                    return
                for msg in decoder.feed(chunk):
                    self._deliver(msg)
        except WireError as exc:
            self._deliver(Failed(exc))
        except OSError as exc:
            self._deliver(Closed("local close") if self._closing else Failed(exc))
        finally:
            if self._closing:
                self.sock.close()

    def send(self, msg) -> None:
        data = encode_frame(msg)
        with self._send_lock:
            if self._closing:
                raise ChannelClosed(f"{self.label}: send on closed channel")
            try:
                self.sock.sendall(data)
            except OSError as exc:
                raise TransportError(f"{self.label}: send failed: {exc}") from exc
            self.frames_sent += 1

    def close(self) -> None:
        with self._send_lock:
            if self._closing:
                return
            self._closing = True
        try:
            # half-close; the reader closes the socket once the peer is done
            self.sock.shutdown(socket.SHUT_WR)
        except OSError:
            self.sock.close()
        if not self._reader.is_alive():
            self.sock.close()

    def abort(self) -> None:
        self._closing = True
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class TcpListener(Listener):
    def __init__(self, bind_host: str, port: int, advertised: Endpoint | None = None,
                 wrap=TcpChannel):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self.sock.bind((bind_host, port))
        except OSError as exc:
            self.sock.close()
            raise TransportError(f"cannot bind {bind_host}:{port}: {exc}") from exc
        self.sock.listen(64)
        self.bound_port = self.sock.getsockname()[1]
        if advertised is None:
            advertised = Endpoint("direct", bind_host, self.bound_port)
        elif advertised.port != self.bound_port:
            advertised = advertised.with_port(self.bound_port)
        self.endpoint = advertised
        self._wrap = wrap
        self._count = 0

    def accept(self, timeout: float | None = None) -> Channel:
        self.sock.settimeout(timeout)
        try:
            conn, _ = self.sock.accept()
        except socket.timeout:
            raise TimeoutError(f"no inbound connection within {timeout}s") from None
        self._count += 1
        return self._wrap(conn, label=f"in{self._count}@{self.endpoint}")

    def close(self) -> None:
        self.sock.close()


def connect_direct(ep: Endpoint, timeout: float = 10.0) -> TcpChannel:
    try:
        sock = socket.create_connection((ep.host, ep.port), timeout=timeout)
    except OSError as exc:
        raise ConnectFailed(f"connect failed: {exc}", ep) from exc
    return TcpChannel(sock, label=f"out@{ep}")


class DirectTransport:
    scheme = "direct"

    def __init__(self, connect_retries: int = 1, retry_delay_s: float = 0.2):
        self.connect_retries = connect_retries
        self.retry_delay_s = retry_delay_s

    def listen(self, ep: Endpoint | None = None) -> TcpListener:
        """Bind ``ep``, or an ephemeral loopback port when ``ep`` is None."""
        if ep is None:
            return TcpListener("127.0.0.1", 0)
        return TcpListener(ep.host, ep.port)

    def connect(self, ep: Endpoint) -> Channel:
        last = None
        for attempt in range(1, self.connect_retries + 1):
            try:
                return connect_direct(ep)
            except ConnectFailed as exc:
                last = exc
                if attempt < self.connect_retries:
                    time.sleep(self.retry_delay_s)
        raise ConnectFailed("direct connect failed", ep, self.connect_retries) from last
