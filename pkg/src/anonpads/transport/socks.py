"""RFC 1928 SOCKS5 client (no-auth, CONNECT by domain name).

Works against a local Tor daemon, which resolves ``.onion`` names for the
caller; the client never resolves destination names itself.
"""

from __future__ import annotations

import logging
import os
import socket
import struct
import time
from dataclasses import dataclass

from ..wire import Endpoint
from .base import ConnectFailed, TransportError
from .direct import TcpChannel, TcpListener

log = logging.getLogger(__name__)

SOCKS_VERSION = 0x05
METHOD_NOAUTH = 0x00
CMD_CONNECT = 0x01
ATYP_IPV4 = 0x01
ATYP_DOMAIN = 0x03
ATYP_IPV6 = 0x04

REPLY_TEXT = {
    0x00: "succeeded",
    0x01: "general SOCKS server failure",
    0x02: "connection not allowed by ruleset",
    0x03: "network unreachable",
    0x04: "host unreachable",
    0x05: "connection refused",
    0x06: "TTL expired",
    0x07: "command not supported",
    0x08: "address type not supported",
}

ENV_PROXY = "ANONPADS_SOCKS_PROXY"


class SocksError(TransportError):
    def __init__(self, message, reply: int | None = None):
        super().__init__(message)
        self.reply = reply


@dataclass
class SocksConfig:
    proxy_host: str = "127.0.0.1"
    proxy_port: int = 9050
    connect_retries: int = 10
    initial_backoff_ms: int = 2000
    max_backoff_ms: int = 30000
    timeout_s: float = 120.0

    def __post_init__(self):
        if self.connect_retries < 1:
            raise ValueError("connect_retries must be >= 1")

    @classmethod
    def from_env(cls, base: "SocksConfig | None" = None) -> "SocksConfig":
        cfg = base or cls()
        value = os.environ.get(ENV_PROXY)
        if value:
            host, _, port = value.rpartition(":")
            cfg = SocksConfig(host or cfg.proxy_host, int(port), cfg.connect_retries,
                              cfg.initial_backoff_ms, cfg.max_backoff_ms, cfg.timeout_s)
        return cfg

    def backoff_ms(self, attempt: int) -> int:
        """Delay before retry number ``attempt`` (1-based)."""
        return min(self.initial_backoff_ms * 2 ** (attempt - 1), self.max_backoff_ms)


def greeting() -> bytes:
    return bytes([SOCKS_VERSION, 1, METHOD_NOAUTH])


def connect_request(dest: Endpoint) -> bytes:
    host = dest.host.encode("idna" if not dest.host.isascii() else "ascii")
    if len(host) > 255:
        raise SocksError("destination host exceeds 255 bytes")
    return (bytes([SOCKS_VERSION, CMD_CONNECT, 0x00, ATYP_DOMAIN, len(host)]) + host
            + struct.pack(">H", dest.port))


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise SocksError("proxy closed the connection mid-handshake")
        buf.extend(chunk)
    return bytes(buf)


def handshake(sock: socket.socket, dest: Endpoint) -> None:
    sock.sendall(greeting())
    ver, method = _recv_exact(sock, 2)
    if ver != SOCKS_VERSION or method != METHOD_NOAUTH:
        raise SocksError(f"proxy refused no-auth method (ver={ver}, method={method:#x})")
    sock.sendall(connect_request(dest))
    ver, rep = _recv_exact(sock, 2)
    if ver != SOCKS_VERSION:
        raise SocksError(f"bad reply version {ver}")
    if rep != 0x00:
        raise SocksError(f"CONNECT rejected: {REPLY_TEXT.get(rep, hex(rep))}", rep)
    _, atyp = _recv_exact(sock, 2)
    if atyp == ATYP_IPV4:
        _recv_exact(sock, 4 + 2)
    elif atyp == ATYP_IPV6:
        _recv_exact(sock, 16 + 2)
    elif atyp == ATYP_DOMAIN:
        n = _recv_exact(sock, 1)[0]
        _recv_exact(sock, n + 2)
    else:
        raise SocksError(f"bad bound address type {atyp}")


def socks_open(cfg: SocksConfig, dest: Endpoint, sleep=time.sleep):
    """Tunnel a TCP stream to ``dest``; returns ``(socket, attempts)``."""
    last: Exception | None = None
    for attempt in range(1, cfg.connect_retries + 1):
        sock = None
        try:
            sock = socket.create_connection((cfg.proxy_host, cfg.proxy_port), timeout=cfg.timeout_s)
            handshake(sock, dest)
            sock.settimeout(None)
            return sock, attempt
        except (OSError, SocksError) as exc:
            last = exc
            if sock is not None:
                sock.close()
            log.debug("socks attempt %d to %s failed: %s", attempt, dest, exc)
            if attempt < cfg.connect_retries:
                sleep(cfg.backoff_ms(attempt) / 1000.0)
    raise ConnectFailed(f"SOCKS connect failed: {last}", dest, cfg.connect_retries)


def socks_connect(cfg: SocksConfig, dest: Endpoint, sleep=time.sleep) -> TcpChannel:
    sock, attempts = socks_open(cfg, dest, sleep)
    chan = TcpChannel(sock, label=f"socks@{dest}")
    chan.attempts = attempts
    return chan


class SocksTransport:
    """Outbound through the proxy; inbound on a local port that the hidden
    service (or a test proxy) forwards to.

    ``listen(ep)`` binds ``bind_host:ep.port`` and advertises ``ep`` itself,
    typically an onion name.
    """

    scheme = "socks"

    def __init__(self, cfg: SocksConfig | None = None, bind_host: str = "127.0.0.1",
                 sleep=time.sleep):
        self.cfg = SocksConfig.from_env(cfg)
        self.bind_host = bind_host
        self.sleep = sleep

    def listen(self, ep: Endpoint | None = None, bind_port: int | None = None) -> TcpListener:
        """``bind_port=0`` binds an ephemeral port and advertises it."""
        if ep is None:
            lst = TcpListener(self.bind_host, bind_port or 0)
            lst.endpoint = Endpoint("socks", self.bind_host, lst.bound_port)
            return lst
        return TcpListener(self.bind_host, ep.port if bind_port is None else bind_port,
                           advertised=ep)

    def connect(self, ep: Endpoint) -> TcpChannel:
        return socks_connect(self.cfg, ep, self.sleep)
