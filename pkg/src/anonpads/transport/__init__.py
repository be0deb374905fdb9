"""Pluggable channel layer: direct TCP, SOCKS5 tunnels, emulated overlay."""

from .base import (Channel, ChannelClosed, ChannelFailed, Closed, ConnectFailed, Failed,
                   Listener, TransportError)
from .direct import DirectTransport, TcpChannel, TcpListener, connect_direct
from .emu import (CircuitState, EmuChannel, EmuConfig, EmuOverlay, EmuTransport, LatencyParams,
                  emu_advance, emu_sample_delay, emu_sample_rtt, moment_match, new_circuit)
from .emu_tcp import EmuTcpTransport
from .reliability import ReliableEndpoint, WindowFull, on_receive, send_reliable
from .socks import SocksConfig, SocksTransport, socks_connect

__all__ = [
    "Channel", "ChannelClosed", "ChannelFailed", "Closed", "ConnectFailed", "Failed",
    "Listener", "TransportError", "DirectTransport", "TcpChannel", "TcpListener",
    "connect_direct", "CircuitState", "EmuChannel", "EmuConfig", "EmuOverlay",
    "EmuTransport", "EmuTcpTransport", "LatencyParams", "emu_advance", "emu_sample_delay", "emu_sample_rtt",
    "moment_match", "new_circuit", "ReliableEndpoint", "WindowFull", "on_receive",
    "send_reliable", "SocksConfig", "SocksTransport", "socks_connect",
]
