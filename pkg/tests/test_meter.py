from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amrsim.meter import (
    Direction,
    MeterNode,
    Mode,
    PulseAddressError,
    PulseEvent,
    StatusFlags,
    TraceError,
    parse_pulse_trace,
)
from amrsim.protocol import (
    BROADCAST,
    Frame,
    FrameType,
    decode_frame,
    encode_frame,
    make_poll,
    parse_reading,
)
from oracles import ScalarMeterReplay


def fwd(addr=1, t=0.0):
    return PulseEvent(addr, t, Direction.FORWARD)


def rev(addr=1, t=0.0):
    return PulseEvent(addr, t, Direction.REVERSE)


def test_forward_pulse_increments():
    node = MeterNode(1)
    node.on_disk_pulse(fwd())
    assert node.pulse_register == 1
    assert node.status_flags == 0


def test_register_wraps_at_32_bits():
    node = MeterNode(1)
    node.pulse_register = 0xFFFFFFFF
    node.on_disk_pulse(fwd())
    assert node.pulse_register == 0
    assert node.status_flags == 0


def test_reverse_pulse_never_decrements():
    node = MeterNode(1)
    for _ in range(100):
        node.apply_pulse(Direction.FORWARD)
    node.on_disk_pulse(rev())
    assert node.pulse_register == 100
    assert node.status_flags & StatusFlags.TAMPER_REVERSE


def test_wrong_address_pulse_rejected():
    node = MeterNode(1)
    with pytest.raises(PulseAddressError):
        node.on_disk_pulse(fwd(addr=2))


def test_register_kwh_exact():
    node = MeterNode(1, meter_constant_k=600)
    assert node.register_kwh() == 0
    node.pulse_register = 600
    assert node.register_kwh() == 1
    node.pulse_register = 1500
    assert node.register_kwh() == Fraction(5, 2)  # 2.500 kWh


def test_meter_constant_must_be_positive():
    with pytest.raises(ValueError):
        MeterNode(1, meter_constant_k=0)


# -- persistence -------------------------------------------------------


def test_power_cycle_restores_image():
    node = MeterNode(1, persist_interval=10)
    for _ in range(105):
        node.apply_pulse(Direction.FORWARD)
    assert node.pulse_register == 105
    assert node.nv_image == 100
    node.power_cycle()
    assert node.pulse_register == 100
    assert node.mode == Mode.SLEEP
    assert node.status_flags & StatusFlags.NV_MISMATCH == 0


def test_power_cycle_fixed_point():
    node = MeterNode(1)
    for _ in range(100):
        node.apply_pulse(Direction.FORWARD)
    node.power_cycle()
    assert node.pulse_register == 100  # persist_interval=1 loses nothing


def test_power_cycle_after_995_of_1000_pulses():
    # replay oracle keeps an explicit persistence log alongside
    node = MeterNode(1, persist_interval=10)
    oracle = ScalarMeterReplay(persist_interval=10)
    for i in range(1, 1001):
        if i == 996:
            node.power_cycle()
            oracle.power_cycle()
        node.apply_pulse(Direction.FORWARD)
        oracle.pulse(True)
    node.power_cycle()
    oracle.power_cycle()
    assert oracle.count == 990
    assert node.pulse_register == 990


def test_persist_every_pulse_by_default():
    node = MeterNode(1)
    node.apply_pulse(Direction.FORWARD)
    assert node.nv_image == 1


@given(st.integers(1, 20), st.lists(st.sampled_from("FRP"), max_size=300))
@settings(max_examples=200)
def test_replay_matches_scalar_oracle(persist_interval, ops):
    node = MeterNode(1, persist_interval=persist_interval)
    oracle = ScalarMeterReplay(persist_interval=persist_interval)
    for op in ops:
        if op == "P":
            node.power_cycle()
            oracle.power_cycle()
        else:
            node.apply_pulse(Direction.FORWARD if op == "F" else Direction.REVERSE)
            oracle.pulse(op == "F")
    assert node.pulse_register == oracle.count
    assert node.nv_image == oracle.image
    assert bool(node.status_flags & StatusFlags.TAMPER_REVERSE) == oracle.reverse_seen


@given(st.lists(st.sampled_from("FX"), max_size=200))
def test_conservation_under_interleaved_polls(ops):
    # F = forward pulse, X = a poll; polls never change the register
    node = MeterNode(1)
    forwards = 0
    for op in ops:
        if op == "F":
            node.apply_pulse(Direction.FORWARD)
            forwards += 1
        else:
            node.handle_frame(make_poll(0, 1, 5), sim_time=1.0)
    assert node.pulse_register == forwards % (1 << 32)


def test_lost_pulses_bounded_by_persist_interval():
    for cut in (1, 7, 123, 999):
        node = MeterNode(1, persist_interval=10)
        for _ in range(cut):
            node.apply_pulse(Direction.FORWARD)
        node.power_cycle()
        assert cut - node.pulse_register < 10


def test_kwh_monotone_without_wrap():
    node = MeterNode(1, meter_constant_k=7)
    last = node.register_kwh()
    for _ in range(50):
        node.apply_pulse(Direction.FORWARD)
        now = node.register_kwh()
        assert now >= last
        last = now


# -- frame handling ----------------------------------------------------


def test_poll_answered_with_reading():
    node = MeterNode(7)
    node.pulse_register = 600
    resp = node.handle_frame(make_poll(0, 7, seq=7), sim_time=1000.0)
    assert resp is not None
    assert resp.ftype == FrameType.READING
    assert resp.src == 7
    assert resp.dst == 0
    assert resp.seq == 7
    assert parse_reading(resp.payload) == (600, 1000, 0)
    assert node.mode == Mode.SLEEP  # back asleep once the response is sent


def test_unicast_poll_answered():
    node = MeterNode(7)
    resp = node.handle_frame(make_poll(0, 7, seq=1, unicast=True), 0.0)
    assert resp is not None and resp.src == 7


def test_poll_for_other_address_is_silence():
    node = MeterNode(7)
    assert node.handle_frame(make_poll(0, 8, seq=1), 0.0) is None
    assert node.handle_frame(make_poll(0, 8, seq=1, unicast=True), 0.0) is None
    assert node.mode == Mode.SLEEP
    assert node.wake_count == 0


def test_retried_poll_is_idempotent():
    node = MeterNode(7)
    node.pulse_register = 42
    r1 = node.handle_frame(make_poll(0, 7, seq=9), sim_time=10.0)
    r2 = node.handle_frame(make_poll(0, 7, seq=9), sim_time=11.0)
    assert parse_reading(r1.payload)[0] == parse_reading(r2.payload)[0] == 42
    # identical apart from the timestamp field
    assert r1.seq == r2.seq and r1.src == r2.src and r1.dst == r2.dst
    assert parse_reading(r1.payload)[1] == 10
    assert parse_reading(r2.payload)[1] == 11


def test_non_poll_frames_ignored():
    node = MeterNode(7)
    reading = Frame(FrameType.READING, 3, 7, 1, bytes(9))
    assert node.handle_frame(reading, 0.0) is None
    ack = Frame(FrameType.ACK, 3, 7, 1, b"")
    assert node.handle_frame(ack, 0.0) is None


def test_malformed_broadcast_poll_counted():
    node = MeterNode(7)
    bad = Frame(FrameType.POLL, 0, BROADCAST, 1, b"\x01")  # not a 4-byte target
    assert node.handle_frame(bad, 0.0) is None
    assert node.malformed_count == 1


def test_silence_only_matching_polls_answered():
    node = MeterNode(7)
    frames = [
        make_poll(0, 6, 1), make_poll(0, 8, 2),
        Frame(FrameType.READING, 1, 7, 3, bytes(9)),
        Frame(FrameType.TAMPER, 1, BROADCAST, 4, bytes(9)),
        make_poll(0, 7, 5),
    ]
    responses = [node.handle_frame(f, 0.0) for f in frames]
    assert [r is not None for r in responses] == [False, False, False, False, True]


def test_on_bytes_decodes_and_responds():
    node = MeterNode(7)
    node.pulse_register = 9
    out = node.on_bytes(encode_frame(make_poll(0, 7, 3)), 2.5)
    assert out is not None
    data, reactive_dst = out
    assert reactive_dst == 0
    f = decode_frame(data)
    assert parse_reading(f.payload) == (9, 2, 0)


def test_on_bytes_counts_decode_errors():
    node = MeterNode(7)
    good = encode_frame(make_poll(0, 7, 3))
    corrupted = bytearray(good)
    corrupted[5] ^= 0x01
    assert node.on_bytes(bytes(corrupted), 0.0) is None
    assert node.decode_errors == {"BAD_CRC": 1}


# -- pulse traces -------------------------------------------------------


def test_parse_trace():
    events = parse_pulse_trace([
        "# a comment",
        "0.5 1f F",
        "1.5 1f R",
        "0.25 20 F  # inline comment",
        "",
    ])
    assert events == [
        PulseEvent(0x1F, 0.5, Direction.FORWARD),
        PulseEvent(0x1F, 1.5, Direction.REVERSE),
        PulseEvent(0x20, 0.25, Direction.FORWARD),
    ]


@pytest.mark.parametrize("line,fragment", [
    ("bogus", "3 fields"),
    ("x 1f F", "bad time"),
    ("-1 1f F", "non-negative"),
    ("1.0 zz F", "bad address"),
    ("1.0 1f Q", "F or R"),
])
def test_trace_errors_carry_line_numbers(line, fragment):
    with pytest.raises(TraceError) as ei:
        parse_pulse_trace(["1 1f F", line])
    assert ei.value.line_no == 2
    assert fragment in str(ei.value)


def test_trace_times_strictly_increasing_per_meter():
    with pytest.raises(TraceError) as ei:
        parse_pulse_trace(["1.0 1f F", "1.0 1f F"])
    assert ei.value.line_no == 2
    # different meters may interleave freely
    parse_pulse_trace(["1.0 1f F", "1.0 20 F"])
