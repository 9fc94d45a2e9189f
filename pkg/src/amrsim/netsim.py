"""Deterministic discrete-event radio medium.

Everything a scenario does -- pulse arrivals, frame deliveries, timers --
is an event on one priority queue ordered by (time, kind priority,
insertion counter), so two runs of the same scenario produce identical
event logs byte for byte.

Delivery timing for a frame of L bytes from a station at distance d:

    deliver_at = send_time + (L * 8.0 / data_rate + d / propagation_speed)

computed in exactly that float operation order (documented in
docs/rng.md and docs/formats.md so logs are reproducible).

Per-receiver loss is an independent Bernoulli draw keyed by
(seed, frame uid, receiver address) -- see rng.keyed_uniform -- which
makes outcomes independent of receiver enumeration order. That allows a
"reactive" fan-out mode for very large populations: deliveries are
scheduled only for the one station that can act on the frame (the
polled meter, or the head-end), since a delivery to any other station
is a behavioural no-op. Outcomes are identical in both modes; only the
no-op DELIVER log lines differ.
"""

from __future__ import annotations

import math
from array import array
from dataclasses import dataclass
from heapq import heappop, heappush

from .rng import SplitMix64, keyed_uniform

K_TIMER = 0
K_PULSE = 1
K_DELIVER = 2

_KIND_NAMES = ("TIMER", "PULSE", "DELIVER")


@dataclass(frozen=True)
class LinkModel:
    """Backhaul parameters: bits/second, hard-cutoff range, Bernoulli
    loss probability, propagation speed."""

    data_rate: float
    range_m: float
    loss_prob: float = 0.0
    propagation_speed: float = 3.0e8

    def __post_init__(self):
        if not self.data_rate > 0:
            raise ValueError("data_rate must be positive")
        if not self.range_m > 0:
            raise ValueError("range_m must be positive")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss_prob must be in [0, 1]")
        if not self.propagation_speed > 0:
            raise ValueError("propagation_speed must be positive")


# Per-connection data rates and ranges of the candidate backhauls. PLC
# range varies per deployment and must be supplied explicitly.
PRESET_DATA_RATES = {"wimax": 75e6, "uhf": 9.5e6, "plc": 3.0e6}
PRESET_RANGES_M = {"wimax": 50_000.0, "uhf": 10_000.0, "plc": None}


def link_preset(name: str, *, range_m: float | None = None,
                loss_prob: float = 0.0) -> LinkModel:
    key = name.lower()
    if key not in PRESET_DATA_RATES:
        raise ValueError(f"unknown link preset {name!r} (wimax, uhf, plc)")
    rng_m = range_m if range_m is not None else PRESET_RANGES_M[key]
    if rng_m is None:
        raise ValueError("plc preset needs an explicit range_m")
    return LinkModel(data_rate=PRESET_DATA_RATES[key], range_m=rng_m,
                     loss_prob=loss_prob)


def serialization_delay(n_bytes: int, link: LinkModel) -> float:
    return n_bytes * 8.0 / link.data_rate


class SimulationError(Exception):
    """An event handler raised; the offending event is identified."""


class Simulation:
    """Single-threaded event loop with a monotonic clock."""

    __slots__ = ("now", "_heap", "_counter", "_log_seq", "event_log")

    def __init__(self, log_enabled: bool = False):
        self.now = 0.0
        self._heap: list = []
        self._counter = 0
        self._log_seq = 0
        self.event_log: list[str] | None = [] if log_enabled else None

    # -- scheduling ----------------------------------------------------

    def _push(self, t: float, kind: int, payload) -> None:
        self._counter += 1
        heappush(self._heap, (t, kind, self._counter, payload))

    def schedule_timer(self, t: float, fn, arg=None, tag: str = "") -> None:
        self._push(t, K_TIMER, (fn, arg, tag))

    def schedule_pulse(self, t: float, fn, arg, addr: int, dir_char: str) -> None:
        self._push(t, K_PULSE, (fn, arg, addr, dir_char))

    def schedule_deliver(self, t: float, station, data: bytes) -> None:
        self._push(t, K_DELIVER, (station, data))

    def log_line(self, t: float, text: str) -> None:
        log = self.event_log
        if log is not None:
            self._log_seq += 1
            log.append(f"{self._log_seq} {t!r} {text}")

    # -- running -------------------------------------------------------

    def pending(self) -> int:
        return len(self._heap)

    def step(self) -> bool:
        """Process the single earliest event. False when queue is empty."""
        heap = self._heap
        if not heap:
            return False
        t, kind, n, payload = heappop(heap)
        self.now = t
        log = self.event_log
        try:
            if kind == K_DELIVER:
                station, data = payload
                if log is not None:
                    self.log_line(t, f"DELIVER rx={station.address:08x} {_frame_summary(data)}")
                resp = station.on_bytes(data, t)
                if resp is not None:
                    station.medium.transmit(station.address, resp[0], resp[1])
            elif kind == K_PULSE:
                fn, arg, addr, dir_char = payload
                if log is not None:
                    self.log_line(t, f"PULSE addr={addr:08x} dir={dir_char}")
                fn(t, arg)
            else:
                fn, arg, tag = payload
                if log is not None:
                    self.log_line(t, f"TIMER tag={tag}")
                fn(t, arg)
        except Exception as e:
            raise SimulationError(
                f"handler failed for event #{n} ({_KIND_NAMES[kind]}) at t={t!r}: {e}"
            ) from e
        return True

    def run_until(self, t_end: float) -> list[str]:
        """Process every event with time <= t_end (inclusive); the clock
        ends at t_end. Returns the log lines emitted by this call
        (empty when logging is disabled)."""
        if t_end < self.now:
            raise ValueError(f"t_end {t_end} is before current time {self.now}")
        log = self.event_log
        mark = len(log) if log is not None else 0
        heap = self._heap
        while heap and heap[0][0] <= t_end:
            self.step()
        self.now = t_end
        return log[mark:] if log is not None else []

    def run_until_idle(self, max_events: int | None = None) -> int:
        n = 0
        while self.step():
            n += 1
            if max_events is not None and n >= max_events:
                break
        return n


def _frame_summary(data: bytes) -> str:
    if len(data) < 13:
        return f"len={len(data)} (short)"
    vt = data[2]
    src = int.from_bytes(data[3:7], "big")
    dst = int.from_bytes(data[7:11], "big")
    return (f"type={vt & 0x0F} src={src:08x} dst={dst:08x} "
            f"seq={data[11]} len={len(data)}")


# -- placement ---------------------------------------------------------


class Placement:
    """Station coordinates: the head-end plus one (x, y) per meter,
    stored flat so multi-million populations stay cheap."""

    def __init__(self, headend_xy: tuple[float, float] = (0.0, 0.0)):
        self.headend_xy = headend_xy
        self.xs = array("d")
        self.ys = array("d")

    def add(self, x: float, y: float) -> int:
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ValueError("positions must be finite")
        self.xs.append(x)
        self.ys.append(y)
        return len(self.xs) - 1

    def __len__(self) -> int:
        return len(self.xs)


def grid_placement(n: int, spacing: float,
                   headend_xy: tuple[float, float] = (0.0, 0.0)) -> Placement:
    """Row-major square grid anchored at the head-end position."""
    p = Placement(headend_xy)
    side = max(1, math.isqrt(n - 1) + 1) if n else 1
    hx, hy = headend_xy
    for i in range(n):
        p.add(hx + (i % side) * spacing, hy + (i // side) * spacing)
    return p


def uniform_placement(n: int, radius: float, rng: SplitMix64,
                      headend_xy: tuple[float, float] = (0.0, 0.0)) -> Placement:
    """Uniform over a disk, by rejection from the bounding square --
    no transcendentals, so draws are bit-portable."""
    p = Placement(headend_xy)
    hx, hy = headend_xy
    r2 = radius * radius
    while len(p) < n:
        x = rng.uniform(-radius, radius)
        y = rng.uniform(-radius, radius)
        if x * x + y * y <= r2:
            p.add(hx + x, hy + y)
    return p


# -- medium ------------------------------------------------------------

FANOUT_FULL = "full"
FANOUT_REACTIVE = "reactive"


class Medium:
    """Broadcast radio: every in-range station hears every transmission.

    Stations are objects with .address, .medium and
    .on_bytes(data, now) -> None | (response_bytes, reactive_dst).
    """

    def __init__(self, sim: Simulation, link: LinkModel, seed: int,
                 fanout: str = FANOUT_FULL,
                 headend_xy: tuple[float, float] = (0.0, 0.0)):
        if fanout not in (FANOUT_FULL, FANOUT_REACTIVE):
            raise ValueError(f"unknown fanout mode {fanout!r}")
        self.sim = sim
        self.link = link
        self.seed = seed
        self.fanout = fanout
        self._stations: list = []
        self._xs = array("d")
        self._ys = array("d")
        # address -> index: arithmetic while addresses stay base..base+k,
        # falling back to a dict for sparse address plans
        self._dense_base: int | None = None
        self._addr_to_idx: dict[int, int] | None = None
        self._tx_uid = 0
        self.headend_xy = headend_xy

    def add_station(self, station, x: float, y: float) -> None:
        idx = len(self._stations)
        addr = station.address
        station.medium = self
        self._stations.append(station)
        self._xs.append(x)
        self._ys.append(y)
        if self._addr_to_idx is not None:
            self._addr_to_idx[addr] = idx
        elif idx == 0:
            self._dense_base = addr
        elif addr != self._dense_base + idx:
            self._addr_to_idx = {
                self._dense_base + i: i for i in range(idx)
            }
            self._addr_to_idx[addr] = idx
            self._dense_base = None

    def station_index(self, addr: int) -> int | None:
        if self._addr_to_idx is not None:
            return self._addr_to_idx.get(addr)
        base = self._dense_base
        if base is None:
            return None
        idx = addr - base
        return idx if 0 <= idx < len(self._stations) else None

    def station_count(self) -> int:
        return len(self._stations)

    def transmit(self, src_addr: int, data: bytes, reactive_dst: int) -> None:
        """Schedule deliveries for one transmission at the current sim
        time. reactive_dst names the only station whose state can change
        on receipt (POLL: the selected meter; responses: the poller)."""
        sim = self.sim
        link = self.link
        t = sim.now
        uid = self._tx_uid
        self._tx_uid = uid + 1
        src_idx = self.station_index(src_addr)
        if src_idx is None:
            raise ValueError(f"transmit from unregistered address {src_addr:#010x}")
        if sim.event_log is not None:
            sim.log_line(t, f"TX uid={uid} {_frame_summary(data)}")
        ser = len(data) * 8.0 / link.data_rate
        if self.fanout == FANOUT_REACTIVE:
            ridx = self.station_index(reactive_dst)
            indices = () if ridx is None or ridx == src_idx else (ridx,)
        else:
            indices = range(len(self._stations))
        xs, ys = self._xs, self._ys
        sx, sy = xs[src_idx], ys[src_idx]
        max_range = link.range_m
        p_loss = link.loss_prob
        speed = link.propagation_speed
        seed = self.seed
        stations = self._stations
        for idx in indices:
            if idx == src_idx:
                continue
            dx = xs[idx] - sx
            dy = ys[idx] - sy
            d = math.sqrt(dx * dx + dy * dy)
            if d > max_range:
                continue
            rx = stations[idx]
            if p_loss > 0.0 and keyed_uniform(seed, uid, rx.address) < p_loss:
                if sim.event_log is not None:
                    sim.log_line(t, f"DROP uid={uid} rx={rx.address:08x}")
                continue
            sim.schedule_deliver(t + (ser + d / speed), rx, data)
