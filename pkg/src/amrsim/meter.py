"""Meter node: pulse-counting state machine with a non-volatile register image.

One node models the retrofit module clamped onto an electromechanical
meter: each disk revolution arrives as a pulse event, the pulse count
accumulates in a 32-bit register (wrapping), and every Nth pulse the
register is copied to a non-volatile image so a power loss costs at most
N-1 pulses. The node answers polls addressed to it and is otherwise
silent ("sleeping").

Reverse rotation is never subtracted from the register -- it sets a
tamper flag instead, so tampering can only ever be revealed, not
rewarded.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum, IntEnum, IntFlag
from fractions import Fraction
from typing import Iterable, Optional

from .protocol import (
    BROADCAST,
    Frame,
    FrameDecodeError,
    FrameType,
    encode_frame,
    decode_frame,
    make_reading,
    poll_target,
)

_WRAP = 1 << 32


class StatusFlags(IntFlag):
    NONE = 0
    TAMPER_COVER = 0x01  # reserved: cover-open sensing is not modelled
    TAMPER_REVERSE = 0x02
    NV_MISMATCH = 0x04  # reserved: image ahead of live register (corruption)


class Mode(IntEnum):
    SLEEP = 0
    AWAKE = 1


class Direction(Enum):
    FORWARD = "F"
    REVERSE = "R"


@dataclass(frozen=True)
class PulseEvent:
    meter_address: int
    sim_time: float
    direction: Direction


class PulseAddressError(Exception):
    """A pulse was routed to the wrong node -- a harness bug, not a
    protocol condition."""


class MeterNode:
    """State machine for one meter. Owned by a single simulation shard;
    never accessed concurrently."""

    __slots__ = (
        "address",
        "pulse_register",
        "nv_image",
        "meter_constant_k",
        "persist_interval",
        "status_flags",
        "mode",
        "last_seq_seen",
        "malformed_count",
        "wake_count",
        "_since_persist",
        "decode_errors",
        "medium",  # set by Medium.add_station
    )

    def __init__(self, address: int, meter_constant_k: int = 600,
                 persist_interval: int = 1):
        if meter_constant_k <= 0:
            raise ValueError("meter_constant_k must be positive")
        if persist_interval <= 0:
            raise ValueError("persist_interval must be positive")
        self.address = address
        self.pulse_register = 0
        self.nv_image = 0
        self.meter_constant_k = meter_constant_k
        self.persist_interval = persist_interval
        self.status_flags = 0
        self.mode = Mode.SLEEP
        self.last_seq_seen = 0
        self.malformed_count = 0
        self.wake_count = 0
        self._since_persist = 0
        self.decode_errors = None  # lazily created dict kind -> count
        self.medium = None

    def on_disk_pulse(self, ev: PulseEvent) -> None:
        if ev.meter_address != self.address:
            raise PulseAddressError(
                f"pulse for {ev.meter_address:#010x} delivered to {self.address:#010x}"
            )
        self.apply_pulse(ev.direction)

    def apply_pulse(self, direction: Direction) -> None:
        """Count one disk revolution. Forward increments (mod 2^32) and
        persists every persist_interval-th pulse; reverse only flags."""
        if direction is Direction.FORWARD:
            self.pulse_register = (self.pulse_register + 1) & 0xFFFFFFFF
            self._since_persist += 1
            if self._since_persist >= self.persist_interval:
                self.nv_image = self.pulse_register
                self._since_persist = 0
        else:
            self.status_flags |= StatusFlags.TAMPER_REVERSE

    def register_kwh(self) -> Fraction:
        """Energy indicated by the register, as an exact rational."""
        return Fraction(self.pulse_register, self.meter_constant_k)

    def power_cycle(self) -> None:
        """Lose unpersisted pulses and restart asleep. Losing up to
        persist_interval-1 pulses is expected, so no flag is raised;
        tamper flags are treated as non-volatile and survive."""
        self.pulse_register = self.nv_image
        self._since_persist = 0
        self.mode = Mode.SLEEP

    def handle_frame(self, f: Frame, sim_time: float) -> Optional[Frame]:
        """Answer a POLL that selects this node; stay silent otherwise.

        The caller guarantees f passed CRC validation. Returns the
        READING response, or None. The node wakes to answer and is
        asleep again once the response is handed to the radio.
        """
        if f.ftype != FrameType.POLL:
            return None
        if f.dst == BROADCAST:
            if len(f.payload) != 4:
                self.malformed_count += 1
                return None
            if poll_target(f) != self.address:
                return None
        elif f.dst != self.address:
            return None
        self.mode = Mode.AWAKE
        self.wake_count += 1
        self.last_seq_seen = f.seq
        response = make_reading(
            self.address, f.src, f.seq,
            self.pulse_register, int(sim_time) & 0xFFFFFFFF, self.status_flags,
        )
        self.mode = Mode.SLEEP
        return response

    def on_bytes(self, data: bytes, now: float):
        """Radio delivery entry point: decode, act, hand back any
        response as (encoded bytes, reactive destination)."""
        try:
            f = decode_frame(data)
        except FrameDecodeError as e:
            if self.decode_errors is None:
                self.decode_errors = {}
            k = e.kind.value
            self.decode_errors[k] = self.decode_errors.get(k, 0) + 1
            return None
        r = self.handle_frame(f, now)
        if r is None:
            return None
        return encode_frame(r), r.dst


class TraceError(Exception):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def parse_pulse_trace(lines: Iterable[str]) -> list[PulseEvent]:
    """Parse the line-oriented pulse trace format:

        <sim_time> <address-hex> <F|R>

    Blank lines and '#' comments are ignored. Times for one meter must be
    strictly increasing.
    """
    events: list[PulseEvent] = []
    last_time: dict[int, float] = {}
    for line_no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise TraceError(line_no, f"expected 3 fields, got {len(parts)}")
        try:
            t = float(parts[0])
        except ValueError:
            raise TraceError(line_no, f"bad time {parts[0]!r}") from None
        if t < 0:
            raise TraceError(line_no, "time must be non-negative")
        try:
            addr = int(parts[1], 16)
        except ValueError:
            raise TraceError(line_no, f"bad address {parts[1]!r}") from None
        try:
            direction = Direction(parts[2].upper())
        except ValueError:
            raise TraceError(line_no, f"direction must be F or R, got {parts[2]!r}") from None
        if addr in last_time and t <= last_time[addr]:
            raise TraceError(line_no, f"times for {parts[1]} must be strictly increasing")
        last_time[addr] = t
        events.append(PulseEvent(addr, t, direction))
    return events
