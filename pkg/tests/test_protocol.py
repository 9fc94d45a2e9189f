import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amrsim.protocol import (
    BROADCAST,
    DecodeErrorKind,
    Frame,
    FrameDecodeError,
    FrameEncodeError,
    FrameType,
    crc16,
    decode_frame,
    encode_frame,
    hexdump,
    make_poll,
    make_reading,
    parse_reading,
    poll_target,
)
from oracles import crc16_bitwise

# Frozen with the bitwise long-division oracle in tests/oracles.py.
POLL_0_TO_7 = bytes.fromhex("a55a1100000000000000070000dceb")
READING_600_1000 = bytes.fromhex("00000258000003e800")


def test_crc_check_value():
    assert crc16(b"123456789") == 0x29B1
    assert crc16_bitwise(b"123456789") == 0x29B1


def test_crc_empty_is_init():
    assert crc16(b"") == 0xFFFF


@given(st.binary(max_size=64))
def test_crc_matches_bitwise_oracle(data):
    assert crc16(data) == crc16_bitwise(data)


def test_crc_single_bit_sensitivity():
    # no single-bit flip in a 32-byte message leaves the CRC unchanged
    x = bytes(range(32))
    base = crc16(x)
    for byte_i in range(len(x)):
        for bit in range(8):
            flipped = bytearray(x)
            flipped[byte_i] ^= 1 << bit
            assert crc16(bytes(flipped)) != base


def test_unicast_poll_layout():
    data = encode_frame(make_poll(0, 7, 0, unicast=True))
    assert data == POLL_0_TO_7
    assert len(data) == 15
    assert data[:13] == bytes.fromhex("a55a1100000000000000070000")


def test_reading_layout():
    f = make_reading(src=7, dst=0, seq=0, register=600, timestamp=1000, flags=0)
    data = encode_frame(f)
    assert data[12] == 0x09  # len byte
    assert data[13:22] == READING_600_1000
    assert len(data) == 24
    assert parse_reading(f.payload) == (600, 1000, 0)


def test_roundtrip_simple():
    f = make_poll(0, 0x2A, 17)
    assert decode_frame(encode_frame(f)) == f


def _random_frame(draw):
    ftype = draw(st.sampled_from(list(FrameType)))
    src = draw(st.integers(0, 0xFFFFFFFF))
    seq = draw(st.integers(0, 0xFF))
    if ftype == FrameType.POLL:
        if draw(st.booleans()):
            dst = BROADCAST
            payload = draw(st.integers(0, 0xFFFFFFFF)).to_bytes(4, "big")
        else:
            dst = draw(st.integers(0, 0xFFFFFFFE))
            payload = b""
    elif ftype in (FrameType.READING, FrameType.TAMPER):
        dst = draw(st.integers(0, 0xFFFFFFFF))
        payload = draw(st.binary(min_size=9, max_size=9))
    else:
        dst = draw(st.integers(0, 0xFFFFFFFF))
        payload = b""
    return Frame(ftype, src, dst, seq, payload)


valid_frames = st.composite(_random_frame)()


@given(valid_frames)
@settings(max_examples=300)
def test_roundtrip_random_frames(f):
    data = encode_frame(f)
    assert 15 <= len(data) <= 270
    assert decode_frame(data) == f


@given(valid_frames)
@settings(max_examples=50)
def test_prefix_never_decodes_to_wrong_frame(f):
    data = encode_frame(f)
    for cut in range(len(data)):
        with pytest.raises(FrameDecodeError) as ei:
            decode_frame(data[:cut])
        assert ei.value.kind == DecodeErrorKind.TRUNCATED


def test_empty_input_truncated():
    with pytest.raises(FrameDecodeError) as ei:
        decode_frame(b"")
    assert ei.value.kind == DecodeErrorKind.TRUNCATED


def test_bad_sync():
    data = bytearray(POLL_0_TO_7)
    data[0] ^= 0xFF
    with pytest.raises(FrameDecodeError) as ei:
        decode_frame(bytes(data))
    assert ei.value.kind == DecodeErrorKind.BAD_SYNC


def test_single_bit_flips_all_rejected():
    """Every single-bit corruption of an encoded READING frame is
    rejected: CRC catches every flip in the protected region, the sync
    and length bytes fail their own checks first."""
    data = encode_frame(make_reading(7, 0, 3, 600, 1000, 0))
    kinds = {DecodeErrorKind.BAD_SYNC: 0, DecodeErrorKind.TRUNCATED: 0,
             DecodeErrorKind.BAD_CRC: 0}
    for byte_i in range(len(data)):
        for bit in range(8):
            mutated = bytearray(data)
            mutated[byte_i] ^= 1 << bit
            with pytest.raises(FrameDecodeError) as ei:
                decode_frame(bytes(mutated))
            kinds[ei.value.kind] += 1
            if byte_i in (0, 1):
                assert ei.value.kind == DecodeErrorKind.BAD_SYNC
            elif byte_i == 12:  # length byte: size check fires before CRC
                assert ei.value.kind == DecodeErrorKind.TRUNCATED
            else:
                assert ei.value.kind == DecodeErrorKind.BAD_CRC
    assert kinds[DecodeErrorKind.BAD_CRC] == (len(data) - 3) * 8


def test_bad_type_nibble():
    # hand-build a CRC-valid frame with type nibble 0x5
    body = bytes([0x15]) + (0).to_bytes(4, "big") + (1).to_bytes(4, "big") + bytes([0, 0])
    data = b"\xa5\x5a" + body + crc16_bitwise(body).to_bytes(2, "big")
    with pytest.raises(FrameDecodeError) as ei:
        decode_frame(data)
    assert ei.value.kind == DecodeErrorKind.BAD_TYPE


def test_bad_version_nibble():
    body = bytes([0x21]) + (0).to_bytes(4, "big") + (1).to_bytes(4, "big") + bytes([0, 0])
    data = b"\xa5\x5a" + body + crc16_bitwise(body).to_bytes(2, "big")
    with pytest.raises(FrameDecodeError) as ei:
        decode_frame(data)
    assert ei.value.kind == DecodeErrorKind.BAD_TYPE


def test_payload_shape_checked_on_decode():
    # CRC-valid ACK carrying a payload is not a valid frame
    body = bytes([0x13]) + (0).to_bytes(4, "big") + (1).to_bytes(4, "big") + bytes([0, 2, 0xAA, 0xBB])
    data = b"\xa5\x5a" + body + crc16_bitwise(body).to_bytes(2, "big")
    with pytest.raises(FrameDecodeError) as ei:
        decode_frame(data)
    assert ei.value.kind == DecodeErrorKind.BAD_TYPE


@pytest.mark.parametrize("frame", [
    Frame(FrameType.POLL, 0, 7, 0, b"\x00\x00\x00\x07"),  # unicast poll with payload
    Frame(FrameType.POLL, 0, BROADCAST, 0, b""),  # broadcast poll without target
    Frame(FrameType.READING, 7, 0, 0, b"\x00" * 8),  # short reading
    Frame(FrameType.ACK, 7, 0, 0, b"\x01"),  # ack with payload
])
def test_encode_rejects_inconsistent_payload(frame):
    with pytest.raises(FrameEncodeError):
        encode_frame(frame)


def test_encode_rejects_out_of_range_fields():
    with pytest.raises(FrameEncodeError):
        encode_frame(Frame(FrameType.ACK, 0, 0, 256))
    with pytest.raises(FrameEncodeError):
        encode_frame(Frame(FrameType.ACK, 1 << 32, 0, 0))


def test_poll_target():
    assert poll_target(make_poll(0, 0x2A, 1)) == 0x2A
    assert poll_target(make_poll(0, 0x2A, 1, unicast=True)) == 0x2A


def test_hexdump_annotates_fields():
    text = hexdump(POLL_0_TO_7)
    assert "A5 5A" in text
    assert "POLL" in text
    assert "dst=0x00000007" in text
