"""Head-end collector: the single polling master.

Issues on-demand and sweep polls over the medium, applies
timeout/retry, persists ReadingRecords, and flags anomalies
(decreasing readings, tamper bits, unreachable meters). Strictly one
POLL is outstanding at any simulated instant; concurrent requests
queue behind it.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Optional

from .billing import kwh_str
from .protocol import (
    FrameDecodeError,
    FrameType,
    decode_frame,
    encode_frame,
    make_poll,
    parse_reading,
)

HEADEND_ADDRESS = 0

TAMPER_MASK = 0x03  # cover-open | reverse-rotation bits

ANOMALY_READING_DECREASED = "READING_DECREASED"
ANOMALY_TAMPER_FLAGGED = "TAMPER_FLAGGED"
ANOMALY_UNREACHABLE = "UNREACHABLE"

_WRAP = 1 << 32
_HALF = 1 << 31


def wrap_delta(prev_register: int, curr_register: int) -> int:
    """Signed pulse delta between two 32-bit registers. Raw modular
    deltas above 2^31 are read as negative (a genuine wrap of the
    counter looks like a small positive delta instead)."""
    d = (curr_register - prev_register) & 0xFFFFFFFF
    return d - _WRAP if d > _HALF else d


class NotRegisteredError(Exception):
    def __init__(self, address: int):
        super().__init__(f"meter {address:#010x} is not registered")
        self.address = address


@dataclass(frozen=True)
class PollPolicy:
    timeout: float = 0.05  # sim seconds; generous vs microsecond RTTs
    max_attempts: int = 4

    def __post_init__(self):
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


class ReadingRecord:
    """One stored fact: meter register as read, plus context."""

    __slots__ = ("address", "register", "meter_constant_k", "sim_time",
                 "status_flags", "attempt_count")

    def __init__(self, address: int, register: int, meter_constant_k: int,
                 sim_time: float, status_flags: int, attempt_count: int):
        self.address = address
        self.register = register
        self.meter_constant_k = meter_constant_k
        self.sim_time = sim_time
        self.status_flags = status_flags
        self.attempt_count = attempt_count

    @property
    def energy_kwh(self) -> Fraction:
        return Fraction(self.register, self.meter_constant_k)

    def to_dict(self) -> dict:
        return {
            "address": self.address,
            "register": self.register,
            "meter_constant_k": self.meter_constant_k,
            "sim_time": self.sim_time,
            "status_flags": self.status_flags,
            "attempt_count": self.attempt_count,
            "energy_kwh": kwh_str(self.energy_kwh),
        }

    def __repr__(self):
        return (f"ReadingRecord(addr={self.address:#x} reg={self.register}"
                f" t={self.sim_time} flags={self.status_flags}"
                f" attempts={self.attempt_count})")


@dataclass(frozen=True)
class AnomalyEvent:
    address: int
    kind: str
    detail: str
    sim_time: float

    def to_dict(self) -> dict:
        return {"address": self.address, "kind": self.kind,
                "detail": self.detail, "sim_time": self.sim_time}


@dataclass
class SweepReport:
    attempted: int = 0
    read_count: int = 0
    unreachable: list = None
    t_start: float = 0.0
    t_end: float = 0.0

    def __post_init__(self):
        if self.unreachable is None:
            self.unreachable = []

    @property
    def elapsed(self) -> float:
        return self.t_end - self.t_start

    def to_dict(self) -> dict:
        return {
            "attempted": self.attempted,
            "read_count": self.read_count,
            "unreachable": list(self.unreachable),
            "t_start": self.t_start,
            "t_end": self.t_end,
            "elapsed": self.elapsed,
        }


class MeterRegistry:
    """Known meters and their pulse constants. A contiguous address
    range with one shared constant is stored arithmetically so
    multi-million populations need no per-meter dict entry."""

    def __init__(self):
        self._base = None
        self._count = 0
        self._k = None
        self._map: dict[int, int] | None = None

    @classmethod
    def dense(cls, base: int, count: int, meter_constant_k: int) -> "MeterRegistry":
        reg = cls()
        reg._base, reg._count, reg._k = base, count, meter_constant_k
        return reg

    def add(self, address: int, meter_constant_k: int) -> None:
        if self._map is None:
            if self._base is None and self._count == 0:
                self._base, self._count, self._k = address, 1, meter_constant_k
                return
            if (self._k == meter_constant_k
                    and address == self._base + self._count):
                self._count += 1
                return
            self._map = {self._base + i: self._k for i in range(self._count)}
            self._base = None
        self._map[address] = meter_constant_k

    def __contains__(self, address: int) -> bool:
        if self._map is not None:
            return address in self._map
        return self._base is not None and 0 <= address - self._base < self._count

    def k_of(self, address: int) -> int:
        if self._map is not None:
            return self._map[address]
        if address in self:
            return self._k
        raise KeyError(address)

    def __iter__(self):
        if self._map is not None:
            return iter(self._map)
        return iter(range(self._base, self._base + self._count)) if self._count else iter(())

    def __len__(self) -> int:
        return len(self._map) if self._map is not None else self._count


class ReadingStore:
    """Append-only record/anomaly/bill store with an optional JSONL
    sink (see docs/formats.md). I/O errors propagate to the caller."""

    def __init__(self, sink=None):
        self._by_addr: dict[int, list[ReadingRecord]] = {}
        self._all: list[ReadingRecord] = []
        self.anomalies: list[AnomalyEvent] = []
        self.bills: list = []
        self._sink = sink

    def add_record(self, rec: ReadingRecord) -> None:
        bucket = self._by_addr.get(rec.address)
        if bucket is None:
            bucket = self._by_addr[rec.address] = []
        bucket.append(rec)
        self._all.append(rec)
        if self._sink is not None:
            self._sink.append({"kind": "reading", **rec.to_dict()})

    def add_anomaly(self, ev: AnomalyEvent) -> None:
        self.anomalies.append(ev)
        if self._sink is not None:
            self._sink.append({"kind": "anomaly", "anomaly": ev.kind,
                               "address": ev.address, "detail": ev.detail,
                               "sim_time": ev.sim_time})

    def add_bill(self, bill) -> None:
        self.bills.append(bill)
        if self._sink is not None:
            self._sink.append({"kind": "bill", **bill.to_dict()})

    def last_record(self, address: int) -> Optional[ReadingRecord]:
        bucket = self._by_addr.get(address)
        return bucket[-1] if bucket else None

    def query_history(self, address: int, t_start: float | None = None,
                      t_end: float | None = None) -> list[ReadingRecord]:
        """Records for one meter ordered by sim_time, optionally
        restricted to t_start <= sim_time <= t_end."""
        bucket = self._by_addr.get(address, [])
        if t_start is None and t_end is None:
            return list(bucket)
        lo = t_start if t_start is not None else float("-inf")
        hi = t_end if t_end is not None else float("inf")
        return [r for r in bucket if lo <= r.sim_time <= hi]

    def latest_at_or_before(self, address: int, t: float) -> Optional[ReadingRecord]:
        best = None
        for r in self._by_addr.get(address, []):
            if r.sim_time <= t:
                best = r
        return best

    def record_count(self) -> int:
        return len(self._all)

    def all_records(self) -> list[ReadingRecord]:
        return list(self._all)

    def export_csv(self, fileobj) -> int:
        """`address,sim_time,register,energy_kwh,flags` rows in store order."""
        fileobj.write("address,sim_time,register,energy_kwh,flags\n")
        n = 0
        for r in self._all:
            fileobj.write(
                f"{r.address},{r.sim_time!r},{r.register},"
                f"{kwh_str(r.energy_kwh)},{r.status_flags}\n"
            )
            n += 1
        return n

    def flush(self) -> None:
        if self._sink is not None:
            self._sink.flush()

    def save_snapshot(self, path: str) -> None:
        """Compact one-document JSON copy of the whole store (operator
        export; the JSONL log remains the durable format)."""
        doc = {
            "records": [r.to_dict() for r in self._all],
            "anomalies": [a.to_dict() for a in self.anomalies],
            "bills": [b.to_dict() if hasattr(b, "to_dict") else b
                      for b in self.bills],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")


class JsonlSink:
    """Durable append-only store file: one JSON object per line, of
    kind reading | anomaly | bill. Flushed every flush_every appends
    and on close; OSErrors propagate (no silent loss)."""

    def __init__(self, path: str, flush_every: int = 1000):
        self.path = path
        self._fh = open(path, "a", encoding="utf-8")
        self._since_flush = 0
        self._flush_every = flush_every

    def append(self, obj: dict) -> None:
        self._fh.write(json.dumps(obj, separators=(",", ":")) + "\n")
        self._since_flush += 1
        if self._since_flush >= self._flush_every:
            self.flush()

    def flush(self) -> None:
        self._fh.flush()
        self._since_flush = 0

    def close(self) -> None:
        self._fh.flush()
        self._fh.close()


def load_store(path: str, sink: JsonlSink | None = None) -> ReadingStore:
    """Rebuild a store from its JSONL log. Bills come back as plain
    dicts (their exact stored rendering)."""
    store = ReadingStore()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            kind = obj.pop("kind", None)
            if kind == "reading":
                store.add_record(ReadingRecord(
                    obj["address"], obj["register"], obj["meter_constant_k"],
                    obj["sim_time"], obj["status_flags"], obj["attempt_count"]))
            elif kind == "anomaly":
                store.add_anomaly(AnomalyEvent(
                    obj["address"], obj["anomaly"], obj["detail"], obj["sim_time"]))
            elif kind == "bill":
                store.bills.append(obj)
    store._sink = sink
    return store


_UNSET = object()


class Headend:
    """Polling master at address 0. Asynchronous primitive:
    start_read(addr, cb); cb(addr, record_or_None) fires on completion.
    Synchronous wrappers drive the simulation loop directly."""

    address = HEADEND_ADDRESS

    def __init__(self, sim, registry: MeterRegistry,
                 policy: PollPolicy = PollPolicy(),
                 store: ReadingStore | None = None,
                 inter_poll_gap: float = 0.0,
                 on_event: Callable[[dict], None] | None = None):
        self.sim = sim
        self.medium = None  # attached by Medium.add_station
        self.registry = registry
        self.policy = policy
        self.store = store if store is not None else ReadingStore()
        self.inter_poll_gap = inter_poll_gap
        self.on_event = on_event
        self.decode_errors: dict[str, int] = {}
        self._seq = 0
        self._busy = False
        self._ctx = 0
        self._cur_addr = 0
        self._cur_seq = 0
        self._cur_attempt = 0
        self._cur_cb = None
        self._pending: deque = deque()
        self._sweep = None
        self._timer_cb = self._on_poll_timer
        # meters whose last poll exhausted its retries (cleared on success)
        self.unreachable_marks: dict[int, float] = {}

    # -- poll engine ----------------------------------------------------

    def start_read(self, address: int, done_cb) -> None:
        """Queue one on-demand read. done_cb(address, record) gets the
        stored ReadingRecord, or None when the meter was unreachable."""
        if address not in self.registry:
            raise NotRegisteredError(address)
        if self._busy:
            self._pending.append((address, done_cb))
            return
        self._begin(address, done_cb)

    def _begin(self, address: int, done_cb) -> None:
        self._busy = True
        self._ctx += 1
        self._cur_addr = address
        self._cur_cb = done_cb
        self._cur_attempt = 1
        self._seq = (self._seq + 1) & 0xFF
        self._cur_seq = self._seq
        self._send_poll()

    def _send_poll(self) -> None:
        data = encode_frame(make_poll(self.address, self._cur_addr, self._cur_seq))
        self.medium.transmit(self.address, data, self._cur_addr)
        self.sim.schedule_timer(
            self.sim.now + self.policy.timeout, self._timer_cb,
            (self._ctx, self._cur_attempt), tag="poll-timeout",
        )

    def _on_poll_timer(self, now: float, arg) -> None:
        ctx, attempt = arg
        if not self._busy or ctx != self._ctx or attempt != self._cur_attempt:
            return  # stale: the poll completed or moved on
        if self._cur_attempt >= self.policy.max_attempts:
            addr = self._cur_addr
            attempts = self._cur_attempt
            self.unreachable_marks[addr] = now
            self._emit_anomaly(AnomalyEvent(
                addr, ANOMALY_UNREACHABLE,
                f"no response after {attempts} attempts", now))
            self._complete(addr, None)
            return
        self._cur_attempt += 1
        self._send_poll()  # retry reuses the same seq

    def on_bytes(self, data: bytes, now: float):
        try:
            f = decode_frame(data)
        except FrameDecodeError as e:
            k = e.kind.value
            self.decode_errors[k] = self.decode_errors.get(k, 0) + 1
            return None
        if (f.ftype == FrameType.READING and self._busy
                and f.src == self._cur_addr and f.seq == self._cur_seq
                and f.dst == self.address):
            register, _wire_ts, flags = parse_reading(f.payload)
            rec = ReadingRecord(f.src, register, self.registry.k_of(f.src),
                                now, flags, self._cur_attempt)
            self.unreachable_marks.pop(f.src, None)
            self.record_reading(rec)
            self._complete(f.src, rec)
        # anything else: duplicate, late, or foreign frame -- ignored
        return None

    def _complete(self, address: int, outcome) -> None:
        cb = self._cur_cb
        self._busy = False
        self._cur_cb = None
        # queued on-demand reads go first, so a long sweep (whose callback
        # immediately re-issues start_read) cannot starve them
        if self._pending:
            self._begin(*self._pending.popleft())
        if cb is not None:
            cb(address, outcome)

    # -- sweep ------------------------------------------------------------

    def start_sweep(self, addresses: Iterable[int] | None = None,
                    done_cb=None) -> None:
        """Poll every address sequentially; done_cb(SweepReport) at the
        end. Addresses default to the whole registry."""
        if self._sweep is not None:
            raise RuntimeError("a sweep is already running")
        if addresses is not None:
            addresses = list(addresses)
            if not addresses:
                raise ValueError("sweep address list is empty")
            if len(set(addresses)) != len(addresses):
                raise ValueError("sweep address list has duplicates")
            for a in addresses:
                if a not in self.registry:
                    raise NotRegisteredError(a)
            it = iter(addresses)
        else:
            if len(self.registry) == 0:
                raise ValueError("no meters registered")
            it = iter(self.registry)
        report = SweepReport(t_start=self.sim.now)
        self._sweep = (it, report, done_cb)
        self._emit_event({"type": "sweep_started", "sim_time": self.sim.now})
        self._sweep_advance()

    def _sweep_advance(self) -> None:
        it, report, done_cb = self._sweep
        addr = next(it, _UNSET)
        if addr is _UNSET:
            report.t_end = self.sim.now
            self._sweep = None
            self._emit_event({"type": "sweep_done", **report.to_dict()})
            if done_cb is not None:
                done_cb(report)
            return
        self.start_read(addr, self._sweep_read_done)

    def _sweep_read_done(self, address: int, outcome) -> None:
        _, report, _ = self._sweep
        report.attempted += 1
        if outcome is not None:
            report.read_count += 1
        else:
            report.unreachable.append(address)
        gap = self.inter_poll_gap
        if gap > 0.0:
            self.sim.schedule_timer(self.sim.now + gap,
                                    lambda _t, _a: self._sweep_advance(),
                                    tag="sweep-gap")
        else:
            self._sweep_advance()

    # -- synchronous wrappers (embedded mode) -----------------------------

    def read_now(self, address: int):
        """Blocking on-demand read: drives the event loop until this
        read completes. Returns the record, or None if unreachable."""
        result = [_UNSET]

        def cb(_addr, outcome):
            result[0] = outcome

        self.start_read(address, cb)
        sim = self.sim
        while result[0] is _UNSET and sim.step():
            pass
        if result[0] is _UNSET:
            raise RuntimeError("event queue drained before poll completed")
        return result[0]

    def sweep_now(self, addresses: Iterable[int] | None = None) -> SweepReport:
        result = [_UNSET]

        def cb(report):
            result[0] = report

        self.start_sweep(addresses, cb)
        sim = self.sim
        while result[0] is _UNSET and sim.step():
            pass
        if result[0] is _UNSET:
            raise RuntimeError("event queue drained before sweep completed")
        return result[0]

    # -- store + anomaly detection ----------------------------------------

    def record_reading(self, rec: ReadingRecord) -> None:
        """Append a record, comparing against the previous one for the
        same meter to flag decreases and fresh tamper bits."""
        prev = self.store.last_record(rec.address)
        self.store.add_record(rec)
        if self.on_event is not None:
            self._emit_event({"type": "reading", **rec.to_dict()})
        prev_flags = prev.status_flags if prev is not None else 0
        new_tamper = (rec.status_flags & ~prev_flags) & TAMPER_MASK
        if new_tamper:
            self._emit_anomaly(AnomalyEvent(
                rec.address, ANOMALY_TAMPER_FLAGGED,
                f"status flags {rec.status_flags:#04x} (new bits {new_tamper:#04x})",
                rec.sim_time))
        if prev is not None:
            d = wrap_delta(prev.register, rec.register)
            if d < 0:
                self._emit_anomaly(AnomalyEvent(
                    rec.address, ANOMALY_READING_DECREASED,
                    f"register {prev.register} -> {rec.register} (delta {d})",
                    rec.sim_time))

    def _emit_anomaly(self, ev: AnomalyEvent) -> None:
        self.store.add_anomaly(ev)
        if self.on_event is not None:
            self._emit_event({"type": "anomaly", **ev.to_dict()})
        if self.sim.event_log is not None:
            self.sim.log_line(ev.sim_time, f"ANOMALY {ev.kind} addr={ev.address:08x}")

    def _emit_event(self, payload: dict) -> None:
        if self.on_event is not None:
            self.on_event(payload)


def validate_policy_against_link(policy: PollPolicy, link,
                                 poll_bytes: int = 19,
                                 reading_bytes: int = 24) -> None:
    """The retry timeout must exceed the worst-case round trip, or
    retries would race their own responses."""
    worst = ((poll_bytes + reading_bytes) * 8.0 / link.data_rate
             + 2.0 * link.range_m / link.propagation_speed)
    if policy.timeout <= worst:
        raise ValueError(
            f"poll timeout {policy.timeout}s must exceed worst-case "
            f"round-trip {worst}s for this link")
