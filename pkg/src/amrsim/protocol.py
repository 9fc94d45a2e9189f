"""Binary frame codec for meter <-> head-end traffic.

Wire layout (big-endian throughout, 15 + len bytes total):

    offset 0   0xA5          sync
    offset 1   0x5A          sync
    offset 2   ver<<4|type   version fixed at 1; type in {1..4}
    offset 3   src           u32, station address (head-end is 0)
    offset 7   dst           u32, 0xFFFFFFFF = broadcast
    offset 11  seq           u8, echoed by responses
    offset 12  len           u8, payload byte count
    offset 13  payload       len bytes
    last 2     crc           CRC-16/CCITT-FALSE over offsets 2..13+len

CRC parameters: poly 0x1021, init 0xFFFF, no reflection, no final xor
(check value: crc16(b"123456789") == 0x29B1).

Payload shapes by type:

    POLL     0 bytes when dst is unicast; 4 bytes (u32 target address)
             when dst is broadcast -- every radio hears the poll, the one
             whose address matches answers.
    READING  9 bytes: register (u32), timestamp seconds (u32), flags (u8)
    ACK      0 bytes
    TAMPER   9 bytes, same shape as READING (spontaneous report snapshot;
             reserved, unused by the sequential poll protocol)
"""

from __future__ import annotations

import binascii
import struct
from enum import Enum, IntEnum

SYNC = b"\xa5\x5a"
VERSION = 1
BROADCAST = 0xFFFFFFFF
HEADER_LEN = 13  # sync(2) + ver/type(1) + src(4) + dst(4) + seq(1) + len(1)
MIN_FRAME_LEN = 15
MAX_FRAME_LEN = 15 + 255

_HEADER = struct.Struct(">BIIBB")  # ver/type, src, dst, seq, len
_READING_PAYLOAD = struct.Struct(">IIB")
_U32 = struct.Struct(">I")
_U16 = struct.Struct(">H")


class FrameType(IntEnum):
    POLL = 0x1
    READING = 0x2
    ACK = 0x3
    TAMPER = 0x4


class DecodeErrorKind(Enum):
    BAD_SYNC = "BAD_SYNC"
    TRUNCATED = "TRUNCATED"  # also: declared length != actual length
    BAD_CRC = "BAD_CRC"
    BAD_TYPE = "BAD_TYPE"  # unknown type/version, or payload shape wrong for type


class FrameError(Exception):
    pass


class FrameEncodeError(FrameError):
    pass


class FrameDecodeError(FrameError):
    def __init__(self, kind: DecodeErrorKind, message: str):
        super().__init__(message)
        self.kind = kind


def crc16(data: bytes) -> int:
    """CRC-16/CCITT-FALSE. binascii.crc_hqx is this exact polynomial;
    tests hold an independent bitwise long-division oracle against it."""
    return binascii.crc_hqx(data, 0xFFFF)


class Frame:
    """One protocol frame. Treat instances as immutable. (A plain
    slotted class: frames are built four times per poll round trip, so
    construction cost matters at sweep scale.)"""

    __slots__ = ("ftype", "src", "dst", "seq", "payload", "version")

    def __init__(self, ftype: FrameType, src: int, dst: int, seq: int,
                 payload: bytes = b"", version: int = VERSION):
        self.ftype = ftype
        self.src = src
        self.dst = dst
        self.seq = seq
        self.payload = payload
        self.version = version

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return (self.ftype == other.ftype and self.src == other.src
                and self.dst == other.dst and self.seq == other.seq
                and self.payload == other.payload
                and self.version == other.version)

    def __hash__(self):
        return hash((self.ftype, self.src, self.dst, self.seq,
                     self.payload, self.version))

    def __repr__(self):
        return (f"Frame({FrameType(self.ftype).name}, src={self.src:#x},"
                f" dst={self.dst:#x}, seq={self.seq},"
                f" payload={self.payload.hex()})")


def _check_payload_shape(ftype: FrameType, dst: int, payload: bytes) -> str | None:
    if ftype == FrameType.POLL:
        expect = 4 if dst == BROADCAST else 0
        if len(payload) != expect:
            return f"POLL payload must be {expect} bytes, got {len(payload)}"
    elif ftype in (FrameType.READING, FrameType.TAMPER):
        if len(payload) != 9:
            return f"{ftype.name} payload must be 9 bytes, got {len(payload)}"
    elif ftype == FrameType.ACK:
        if payload:
            return f"ACK payload must be empty, got {len(payload)} bytes"
    return None


def encode_frame(f: Frame) -> bytes:
    """Serialize a frame, computing its CRC. Raises FrameEncodeError when
    the payload shape is inconsistent with the frame type."""
    problem = _check_payload_shape(f.ftype, f.dst, f.payload)
    if problem is not None:
        raise FrameEncodeError(problem)
    if not 0 <= f.src <= 0xFFFFFFFF or not 0 <= f.dst <= 0xFFFFFFFF:
        raise FrameEncodeError("src/dst must fit in 32 bits")
    if not 0 <= f.seq <= 0xFF:
        raise FrameEncodeError("seq must fit in 8 bits")
    if f.version != VERSION:
        raise FrameEncodeError(f"unsupported version {f.version}")
    body = _HEADER.pack(
        (f.version << 4) | f.ftype, f.src, f.dst, f.seq, len(f.payload)
    ) + f.payload
    return SYNC + body + _U16.pack(binascii.crc_hqx(body, 0xFFFF))


_TYPE_BY_CODE = {t.value: t for t in FrameType}


def decode_frame(data: bytes) -> Frame:
    """Parse one complete frame. Checks run in order: sync, declared
    length, CRC, then type/payload shape; each failure raises a
    FrameDecodeError whose kind the caller can count."""
    n = len(data)
    if n >= 2 and (data[0] != 0xA5 or data[1] != 0x5A):
        raise FrameDecodeError(DecodeErrorKind.BAD_SYNC, "sync bytes missing")
    if n < MIN_FRAME_LEN:
        raise FrameDecodeError(
            DecodeErrorKind.TRUNCATED, f"need >= {MIN_FRAME_LEN} bytes, got {n}"
        )
    vt, src, dst, seq, plen = _HEADER.unpack_from(data, 2)
    if n != MIN_FRAME_LEN + plen:
        raise FrameDecodeError(
            DecodeErrorKind.TRUNCATED,
            f"declared {MIN_FRAME_LEN + plen} bytes, got {n}",
        )
    body_end = HEADER_LEN + plen
    view = memoryview(data)
    if binascii.crc_hqx(view[2:body_end], 0xFFFF) != _U16.unpack_from(data, body_end)[0]:
        raise FrameDecodeError(DecodeErrorKind.BAD_CRC, "CRC mismatch")
    ftype = _TYPE_BY_CODE.get(vt & 0x0F)
    if vt >> 4 != VERSION:
        raise FrameDecodeError(DecodeErrorKind.BAD_TYPE,
                               f"unknown version {vt >> 4}")
    if ftype is None:
        raise FrameDecodeError(DecodeErrorKind.BAD_TYPE,
                               f"unknown type {vt & 0x0F:#x}")
    payload = data[HEADER_LEN:body_end]
    problem = _check_payload_shape(ftype, dst, payload)
    if problem is not None:
        raise FrameDecodeError(DecodeErrorKind.BAD_TYPE, problem)
    return Frame(ftype, src, dst, seq, payload)


def make_poll(src: int, target: int, seq: int, unicast: bool = False) -> Frame:
    if unicast:
        return Frame(FrameType.POLL, src, target, seq)
    return Frame(FrameType.POLL, src, BROADCAST, seq, _U32.pack(target))


def poll_target(f: Frame) -> int:
    """The address a POLL selects: dst when unicast, payload when broadcast."""
    if f.dst == BROADCAST:
        return _U32.unpack(f.payload)[0]
    return f.dst


def make_reading(src: int, dst: int, seq: int, register: int, timestamp: int,
                 flags: int) -> Frame:
    # Wire timestamp is whole seconds; callers truncate sub-second sim time.
    return Frame(FrameType.READING, src, dst, seq,
                 _READING_PAYLOAD.pack(register, timestamp, flags))


def parse_reading(payload: bytes) -> tuple[int, int, int]:
    """(register, timestamp_seconds, status_flags) from a READING payload."""
    return _READING_PAYLOAD.unpack(payload)


def hexdump(data: bytes) -> str:
    """Annotated hex dump of one encoded frame, for debugging."""
    lines = [" ".join(f"{b:02X}" for b in data)]
    if len(data) >= MIN_FRAME_LEN:
        vt = data[2]
        plen = data[12]
        try:
            tname = FrameType(vt & 0x0F).name
        except ValueError:
            tname = f"type?{vt & 0x0F:#x}"
        lines.append(
            f"  sync={data[0]:02X}{data[1]:02X} ver={vt >> 4} {tname}"
            f" src={int.from_bytes(data[3:7], 'big'):#010x}"
            f" dst={int.from_bytes(data[7:11], 'big'):#010x}"
            f" seq={data[11]} len={plen}"
        )
        if len(data) == MIN_FRAME_LEN + plen:
            payload = data[13:13 + plen]
            if payload:
                lines.append("  payload " + " ".join(f"{b:02X}" for b in payload))
            lines.append(f"  crc={int.from_bytes(data[-2:], 'big'):#06x}")
    return "\n".join(lines)
