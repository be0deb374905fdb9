"""Exactly-once, in-order delivery over a link that drops, duplicates,
reorders and resets.

Sliding window with cumulative acks.  The state machine is single-owner
and clock-free: callers pass ``now`` (ms) and drive retransmission through
:meth:`ReliableEndpoint.tick`.

Retransmission follows TCP: one timer guards the oldest unacked frame and
restarts whenever an ack makes progress; on expiry only that frame is
resent and the timeout doubles.  Three duplicate acks resend it early.
Frames behind a hole are not resent, since the receiver buffers them and
the cumulative ack covers them once the hole is filled.  A duplicate data
frame is answered with two acks, which also breaks lockstep loss patterns
that would otherwise eat every ack.

Wire emissions::

    data: 0x00 | seq (u32) | frame
    ack:  0x01 | encode_frame(Ack(next_expected_seq))
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from ..wire import Ack, WireError, decode_frame, encode_frame
from .base import ChannelFailed

KIND_DATA = 0x00
KIND_ACK = 0x01
_SEQ = struct.Struct(">I")
MAX_BACKOFF_SHIFT = 6
DUP_ACK_THRESHOLD = 3


class WindowFull(Exception):
    pass


@dataclass
class _Pending:
    frame: bytes
    first_sent: float
    last_sent: float
    retries: int = 0


def data_emission(seq: int, frame: bytes) -> bytes:
    return bytes([KIND_DATA]) + _SEQ.pack(seq) + frame


_ACK_PREFIX = bytes([KIND_ACK]) + encode_frame(Ack(0))[:-_SEQ.size]
_ACK_LEN = len(_ACK_PREFIX) + _SEQ.size


def ack_emission(cumulative_seq: int) -> bytes:
    # same bytes as KIND_ACK + encode_frame(Ack(seq)), without the generic codec
    return _ACK_PREFIX + _SEQ.pack(cumulative_seq)


def _parse_ack(wire: bytes) -> Optional[int]:
    if len(wire) == _ACK_LEN and wire.startswith(_ACK_PREFIX):
        return _SEQ.unpack_from(wire, len(_ACK_PREFIX))[0]
    try:
        res = decode_frame(wire[1:])
    except WireError:
        return None
    if res is not None and isinstance(res[0], Ack):
        return res[0].cumulative_seq
    return None


class ReliableEndpoint:
    def __init__(self, window: int = 64, min_rto_ms: float = 200.0,
                 initial_rto_ms: float = 3000.0, rto_factor: float = 4.0,
                 max_retries: int = 20, max_rto_ms: float = 60_000.0):
        self.window = window
        self.min_rto_ms = min_rto_ms
        self.initial_rto_ms = initial_rto_ms
        self.rto_factor = rto_factor
        self.max_retries = max_retries
        self.max_rto_ms = max_rto_ms

        self.next_send_seq = 0
        self.unacked: "OrderedDict[int, _Pending]" = OrderedDict()
        self.recv_next_expected = 0
        self._recv_buffer: Dict[int, bytes] = {}
        self.srtt_ms: Optional[float] = None
        self._timer: Optional[float] = None
        self._last_ack = 0
        self._dup_acks = 0

        self.retransmissions = 0
        self.fast_retransmissions = 0
        self.duplicates_dropped = 0
        self.acks_sent = 0

    @property
    def rto_ms(self) -> float:
        if self.srtt_ms is None:
            return self.initial_rto_ms
        return min(self.max_rto_ms, max(self.min_rto_ms, self.rto_factor * self.srtt_ms))

    def can_send(self) -> bool:
        return len(self.unacked) < self.window

    def _restart_timer(self, now: float) -> None:
        if not self.unacked:
            self._timer = None
            return
        head = next(iter(self.unacked.values()))
        backoff = self.rto_ms * (1 << min(head.retries, MAX_BACKOFF_SHIFT))
        self._timer = now + min(backoff, self.max_rto_ms)

    def send(self, frame: bytes, now: float) -> List[bytes]:
        if not self.can_send():
            raise WindowFull(f"{len(self.unacked)} frames unacknowledged")
        seq = self.next_send_seq
        self.next_send_seq = (seq + 1) & 0xFFFFFFFF
        self.unacked[seq] = _Pending(bytes(frame), now, now)
        if self._timer is None:
            self._restart_timer(now)
        return [data_emission(seq, frame)]

    def on_receive(self, wire: bytes, now: float) -> Tuple[List[bytes], List[bytes]]:
        """Returns ``(delivered_frames, emissions)``; corrupt input is ignored."""
        if not wire:
            return [], []
        kind = wire[0]
        if kind == KIND_ACK:
            cumulative = _parse_ack(wire)
            if cumulative is None:
                return [], []
            return [], self._on_ack(cumulative, now)
        if kind != KIND_DATA or len(wire) < 1 + _SEQ.size:
            return [], []
        seq, = _SEQ.unpack_from(wire, 1)
        delivered: List[bytes] = []
        offset = seq - self.recv_next_expected
        copies = 1
        if offset < 0 or seq in self._recv_buffer:
            self.duplicates_dropped += 1
            # a resent frame means our ack went missing: send it twice
            copies = 2
        elif offset < self.window:
            self._recv_buffer[seq] = bytes(wire[1 + _SEQ.size:])
            while self.recv_next_expected in self._recv_buffer:
                delivered.append(self._recv_buffer.pop(self.recv_next_expected))
                self.recv_next_expected += 1
        self.acks_sent += copies
        return delivered, [ack_emission(self.recv_next_expected)] * copies

    def _resend_head(self, now: float) -> List[bytes]:
        seq, head = next(iter(self.unacked.items()))
        head.retries += 1
        head.last_sent = now
        self.retransmissions += 1
        self._restart_timer(now)
        return [data_emission(seq, head.frame)]

    def _on_ack(self, cumulative: int, now: float) -> List[bytes]:
        clean = True
        newest = None
        while self.unacked:
            seq, pending = next(iter(self.unacked.items()))
            if seq >= cumulative:
                break
            del self.unacked[seq]
            clean = clean and pending.retries == 0
            newest = pending
        if newest is not None:
            self._last_ack = cumulative
            self._dup_acks = 0
            # Karn: only time acks that no resent frame contributed to
            if clean:
                sample = now - newest.first_sent
                self.srtt_ms = sample if self.srtt_ms is None else 0.875 * self.srtt_ms + 0.125 * sample
            self._restart_timer(now)
            return []
        if cumulative != self._last_ack or cumulative not in self.unacked:
            return []
        self._dup_acks += 1
        if self._dup_acks != DUP_ACK_THRESHOLD or self.unacked[cumulative].retries >= self.max_retries:
            return []
        self.fast_retransmissions += 1
        return self._resend_head(now)

    def next_deadline(self) -> Optional[float]:
        return self._timer

    def tick(self, now: float) -> List[bytes]:
        if self._timer is None or now < self._timer:
            return []
        seq, head = next(iter(self.unacked.items()))
        if head.retries >= self.max_retries:
            raise ChannelFailed(f"frame {seq} unacknowledged after {head.retries} retries")
        return self._resend_head(now)

    @property
    def idle(self) -> bool:
        return not self.unacked


def send_reliable(state: ReliableEndpoint, frame: bytes, now: float = 0.0):
    return state, state.send(frame, now)


def on_receive(state: ReliableEndpoint, wire: bytes, now: float = 0.0):
    delivered, emissions = state.on_receive(wire, now)
    return state, delivered, emissions
