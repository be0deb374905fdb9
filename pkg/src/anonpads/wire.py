"""Binary framing shared by every process.

Frame layout (all integers big-endian)::

    magic (A5 51) | version (01) | msg_type (u8) | body_len (u32) | body

Bodies are fixed per message type; lists carry a u32 count and are
capped at 2**16 entries.  Endpoints are encoded as
``scheme (u8) | host_len (u8) | host | port (u16)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import ClassVar, Iterator, List, Optional, Tuple

MAGIC = b"\xa5\x51"
VERSION = 1
HEADER = struct.Struct(">2sBBI")
HEADER_LEN = HEADER.size
MAX_BODY = 16 * 1024 * 1024
MAX_LIST = 1 << 16

SCHEMES = ("direct", "socks", "emu")


class WireError(Exception):
    """Base class for framing errors."""


class EncodeError(WireError):
    pass


class MalformedFrame(WireError):
    pass


@dataclass(frozen=True)
class Endpoint:
    scheme: str
    host: str
    port: int

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not self.host or len(self.host.encode("utf-8")) > 255:
            raise ValueError("host must be 1..255 bytes")
        if not 0 < self.port <= 0xFFFF:
            raise ValueError(f"port out of range: {self.port}")

    @classmethod
    def parse(cls, text: str, default_scheme: str = "direct") -> "Endpoint":
        """Parse ``scheme://host:port`` (the scheme prefix is optional)."""
        scheme = default_scheme
        if "://" in text:
            scheme, text = text.split("://", 1)
        host, sep, port = text.rpartition(":")
        if not sep:
            raise ValueError(f"missing port in endpoint {text!r}")
        return cls(scheme, host, int(port))

    def with_port(self, port: int) -> "Endpoint":
        return Endpoint(self.scheme, self.host, port)

    def __str__(self):
        return f"{self.scheme}://{self.host}:{self.port}"


@dataclass(frozen=True)
class LpIdentity:
    lp_id: int
    endpoint: Endpoint


# -- messages ---------------------------------------------------------------

@dataclass(frozen=True)
class Register:
    msg_type: ClassVar[int] = 0x01
    listen_endpoint: Endpoint


@dataclass(frozen=True)
class RegisterAck:
    msg_type: ClassVar[int] = 0x02
    lp_id: int
    total_lps: int


@dataclass(frozen=True)
class Roster:
    msg_type: ClassVar[int] = 0x03
    entries: Tuple[LpIdentity, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))


@dataclass(frozen=True)
class Hello:
    msg_type: ClassVar[int] = 0x04
    lp_id: int


@dataclass(frozen=True)
class PositionDigest:
    msg_type: ClassVar[int] = 0x05
    step: int
    entries: Tuple[Tuple[int, float, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(tuple(e) for e in self.entries))


@dataclass(frozen=True)
class PingBatch:
    msg_type: ClassVar[int] = 0x06
    step: int
    pairs: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(tuple(p) for p in self.pairs))


@dataclass(frozen=True)
class StepEnd:
    msg_type: ClassVar[int] = 0x07
    step: int
    lp_id: int
    sent_count: int


@dataclass(frozen=True)
class Migrate:
    msg_type: ClassVar[int] = 0x08
    step: int
    entity_blob: bytes

    def __post_init__(self):
        object.__setattr__(self, "entity_blob", bytes(self.entity_blob))


@dataclass(frozen=True)
class MigrateNotice:
    msg_type: ClassVar[int] = 0x09
    step: int
    entity_id: int
    new_lp: int


@dataclass(frozen=True)
class Ack:
    msg_type: ClassVar[int] = 0x0A
    cumulative_seq: int


MESSAGE_TYPES = {
    cls.msg_type: cls
    for cls in (Register, RegisterAck, Roster, Hello, PositionDigest, PingBatch,
                StepEnd, Migrate, MigrateNotice, Ack)
}

_U8 = struct.Struct(">B")
_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")
_DIGEST_ENTRY = struct.Struct(">Idd")
_PAIR = struct.Struct(">II")
_STEP_END = struct.Struct(">QII")
_NOTICE = struct.Struct(">QII")


def _pack(fmt: struct.Struct, *values) -> bytes:
    try:
        return fmt.pack(*values)
    except struct.error as exc:
        raise EncodeError(str(exc)) from None


def _check_list(items) -> int:
    if len(items) > MAX_LIST:
        raise EncodeError(f"list of {len(items)} entries exceeds {MAX_LIST}")
    return len(items)


def _encode_endpoint(ep: Endpoint) -> bytes:
    host = ep.host.encode("utf-8")
    return (_pack(_U8, SCHEMES.index(ep.scheme)) + _pack(_U8, len(host))
            + host + _pack(_U16, ep.port))


def _encode_body(msg) -> bytes:
    if isinstance(msg, Register):
        return _encode_endpoint(msg.listen_endpoint)
    if isinstance(msg, RegisterAck):
        return _pack(_U32, msg.lp_id) + _pack(_U32, msg.total_lps)
    if isinstance(msg, Roster):
        parts = [_pack(_U32, _check_list(msg.entries))]
        for ident in msg.entries:
            parts.append(_pack(_U32, ident.lp_id))
            parts.append(_encode_endpoint(ident.endpoint))
        return b"".join(parts)
    if isinstance(msg, Hello):
        return _pack(_U32, msg.lp_id)
    if isinstance(msg, PositionDigest):
        parts = [_pack(_U64, msg.step), _pack(_U32, _check_list(msg.entries))]
        parts.extend(_pack(_DIGEST_ENTRY, *e) for e in msg.entries)
        return b"".join(parts)
    if isinstance(msg, PingBatch):
        parts = [_pack(_U64, msg.step), _pack(_U32, _check_list(msg.pairs))]
        parts.extend(_pack(_PAIR, *p) for p in msg.pairs)
        return b"".join(parts)
    if isinstance(msg, StepEnd):
        return _pack(_STEP_END, msg.step, msg.lp_id, msg.sent_count)
    if isinstance(msg, Migrate):
        blob = bytes(msg.entity_blob)
        return _pack(_U64, msg.step) + _pack(_U32, len(blob)) + blob
    if isinstance(msg, MigrateNotice):
        return _pack(_NOTICE, msg.step, msg.entity_id, msg.new_lp)
    if isinstance(msg, Ack):
        return _pack(_U32, msg.cumulative_seq)
    raise EncodeError(f"not a wire message: {msg!r}")


def encode_frame(msg) -> bytes:
    body = _encode_body(msg)
    if len(body) > MAX_BODY:
        raise EncodeError(f"body of {len(body)} bytes exceeds frame cap")
    return HEADER.pack(MAGIC, VERSION, msg.msg_type, len(body)) + body


class _Reader:
    """Cursor over a frame body; any overrun is a malformed frame."""

    def __init__(self, data: memoryview):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise MalformedFrame("body shorter than its contents")
        out = bytes(self.data[self.pos:self.pos + n])
        self.pos += n
        return out

    def unpack(self, fmt: struct.Struct):
        return fmt.unpack(self.take(fmt.size))

    def u32(self) -> int:
        return self.unpack(_U32)[0]

    def u64(self) -> int:
        return self.unpack(_U64)[0]

    def count(self) -> int:
        n = self.u32()
        if n > MAX_LIST:
            raise MalformedFrame(f"list count {n} exceeds {MAX_LIST}")
        return n

    def endpoint(self) -> Endpoint:
        scheme, = self.unpack(_U8)
        hlen, = self.unpack(_U8)
        try:
            host = self.take(hlen).decode("utf-8")
            port, = self.unpack(_U16)
            return Endpoint(SCHEMES[scheme], host, port)
        except (IndexError, ValueError) as exc:
            raise MalformedFrame(f"bad endpoint: {exc}") from None

    def done(self):
        if self.pos != len(self.data):
            raise MalformedFrame("trailing bytes in body")


def _decode_body(msg_type: int, body: memoryview):
    r = _Reader(body)
    if msg_type == Register.msg_type:
        msg = Register(r.endpoint())
    elif msg_type == RegisterAck.msg_type:
        msg = RegisterAck(r.u32(), r.u32())
    elif msg_type == Roster.msg_type:
        n = r.count()
        msg = Roster(tuple(LpIdentity(r.u32(), r.endpoint()) for _ in range(n)))
    elif msg_type == Hello.msg_type:
        msg = Hello(r.u32())
    elif msg_type == PositionDigest.msg_type:
        step = r.u64()
        n = r.count()
        msg = PositionDigest(step, tuple(r.unpack(_DIGEST_ENTRY) for _ in range(n)))
    elif msg_type == PingBatch.msg_type:
        step = r.u64()
        n = r.count()
        msg = PingBatch(step, tuple(r.unpack(_PAIR) for _ in range(n)))
    elif msg_type == StepEnd.msg_type:
        msg = StepEnd(*r.unpack(_STEP_END))
    elif msg_type == Migrate.msg_type:
        step = r.u64()
        msg = Migrate(step, r.take(r.u32()))
    elif msg_type == MigrateNotice.msg_type:
        msg = MigrateNotice(*r.unpack(_NOTICE))
    elif msg_type == Ack.msg_type:
        msg = Ack(r.u32())
    else:
        raise MalformedFrame(f"unknown msg_type 0x{msg_type:02x}")
    r.done()
    return msg


def decode_frame(data) -> Optional[Tuple[object, int]]:
    """Decode one frame from the front of ``data``.

    Returns ``(message, bytes_consumed)``, or ``None`` when more bytes are
    needed.  Raises :class:`MalformedFrame` on invalid input.
    """
    view = memoryview(data)
    # validate the prefix as soon as it is visible so garbage fails fast
    if len(view) >= 2 and bytes(view[:2]) != MAGIC:
        raise MalformedFrame("bad magic")
    if len(view) >= 3 and view[2] != VERSION:
        raise MalformedFrame(f"unsupported version {view[2]}")
    if len(view) >= 4 and view[3] not in MESSAGE_TYPES:
        raise MalformedFrame(f"unknown msg_type 0x{view[3]:02x}")
    if len(view) < HEADER_LEN:
        return None
    _, _, msg_type, body_len = HEADER.unpack(view[:HEADER_LEN])
    if body_len > MAX_BODY:
        raise MalformedFrame(f"body_len {body_len} exceeds frame cap")
    end = HEADER_LEN + body_len
    if len(view) < end:
        return None
    return _decode_body(msg_type, view[HEADER_LEN:end]), end


class FrameDecoder:
    """Incremental decoder for a byte stream carrying concatenated frames."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, chunk: bytes) -> List[object]:
        self._buf.extend(chunk)
        out = []
        while True:
            res = decode_frame(self._buf)
            if res is None:
                return out
            msg, used = res
            del self._buf[:used]
            out.append(msg)

    @property
    def pending(self) -> int:
        return len(self._buf)


def iter_frames(data: bytes) -> Iterator[object]:
    dec = FrameDecoder()
    yield from dec.feed(data)
    if dec.pending:
        raise MalformedFrame("truncated trailing frame")
