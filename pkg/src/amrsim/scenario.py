"""Scenario files: one `key = value` per line, '#' comments.

Schema (full reference in docs/formats.md):

    seed = 42
    link = wimax              # wimax | uhf | plc | custom
    data_rate = 75e6          # bits/s, required for link = custom
    range = 50000             # meters; overrides preset (required for plc)
    loss = 0.0                # per-receiver Bernoulli loss probability
    meters = 10
    meter_constant = 600      # pulses per kWh
    persist_interval = 1      # pulses between register persists
    initial_register = 0
    placement = grid          # grid | uniform | explicit
    spacing = 50              # grid pitch, meters
    radius = 5000             # uniform disk radius, meters
    placement_file = path     # explicit: "<addr-hex> <x> <y>" lines
    workload = none           # none | constant | trace
    pulse_rate = 1.0          # pulses/s per meter (constant)
    trace_file = path
    duration = 60             # sim seconds of workload before final sweep
    timeout = 0.05            # poll retry timeout, sim seconds
    max_attempts = 4
    inter_poll_gap = 0.0      # sim seconds between sweep polls
    sweep_every = 0           # extra periodic sweeps (0 = final only)
    fanout = auto             # auto | full | reactive
    reverse_at = 12.5 1f     # inject a reverse pulse (repeatable)
    power_cycle_at = 20 1f    # inject a power loss (repeatable)

Invalid input is reported with its line number.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .headend import (
    Headend,
    MeterRegistry,
    PollPolicy,
    ReadingStore,
    validate_policy_against_link,
)
from .meter import Direction, MeterNode, PulseEvent, parse_pulse_trace
from .netsim import (
    FANOUT_FULL,
    FANOUT_REACTIVE,
    LinkModel,
    Medium,
    PRESET_DATA_RATES,
    PRESET_RANGES_M,
    Simulation,
    grid_placement,
    uniform_placement,
)
from .rng import SplitMix64

# above this population, polls stop fanning out to no-op receivers
AUTO_REACTIVE_THRESHOLD = 1000


class ScenarioError(Exception):
    def __init__(self, message: str, line_no: int | None = None,
                 source: str = "<scenario>"):
        where = f"{source}:{line_no}: " if line_no is not None else f"{source}: "
        super().__init__(where + message)
        self.line_no = line_no
        self.source = source


@dataclass
class ScenarioConfig:
    seed: int = 1
    link: str = "wimax"
    data_rate: float | None = None
    range_m: float | None = None
    loss: float = 0.0
    meters: int = 10
    meter_constant: int = 600
    persist_interval: int = 1
    initial_register: int = 0
    placement: str = "grid"
    spacing: float = 50.0
    radius: float = 5000.0
    placement_file: str | None = None
    workload: str = "none"
    pulse_rate: float = 1.0
    trace_file: str | None = None
    duration: float = 0.0
    timeout: float = 0.05
    max_attempts: int = 4
    inter_poll_gap: float = 0.0
    sweep_every: float = 0.0
    fanout: str = "auto"
    reverse_at: list = field(default_factory=list)  # (time, address)
    power_cycle_at: list = field(default_factory=list)
    source: str = "<scenario>"

    def link_model(self) -> LinkModel:
        if self.link == "custom":
            if self.data_rate is None or self.range_m is None:
                raise ScenarioError("custom link needs data_rate and range",
                                    source=self.source)
            return LinkModel(self.data_rate, self.range_m, self.loss)
        rate = PRESET_DATA_RATES[self.link]
        rng_m = self.range_m if self.range_m is not None else PRESET_RANGES_M[self.link]
        if rng_m is None:
            raise ScenarioError("plc link needs an explicit range",
                                source=self.source)
        return LinkModel(rate, rng_m, self.loss)

    def resolved_fanout(self) -> str:
        if self.fanout != "auto":
            return self.fanout
        return FANOUT_REACTIVE if self.meters > AUTO_REACTIVE_THRESHOLD else FANOUT_FULL


def _parse_value(key: str, value: str, cfg: ScenarioConfig, line_no: int,
                 source: str) -> None:
    def bad(msg):
        return ScenarioError(msg, line_no, source)

    def as_float(v):
        try:
            return float(v)
        except ValueError:
            raise bad(f"{key}: expected a number, got {v!r}") from None

    def as_int(v):
        try:
            return int(v)
        except ValueError:
            raise bad(f"{key}: expected an integer, got {v!r}") from None

    if key == "seed":
        cfg.seed = as_int(value)
    elif key == "link":
        v = value.lower()
        if v not in ("wimax", "uhf", "plc", "custom"):
            raise bad(f"link must be wimax|uhf|plc|custom, got {value!r}")
        cfg.link = v
    elif key == "data_rate":
        cfg.data_rate = as_float(value)
    elif key == "range":
        cfg.range_m = as_float(value)
    elif key == "loss":
        cfg.loss = as_float(value)
        if not 0.0 <= cfg.loss <= 1.0:
            raise bad("loss must be in [0, 1]")
    elif key == "meters":
        cfg.meters = as_int(value)
        if cfg.meters < 1:
            raise bad("meters must be >= 1")
    elif key == "meter_constant":
        cfg.meter_constant = as_int(value)
        if cfg.meter_constant < 1:
            raise bad("meter_constant must be >= 1")
    elif key == "persist_interval":
        cfg.persist_interval = as_int(value)
        if cfg.persist_interval < 1:
            raise bad("persist_interval must be >= 1")
    elif key == "initial_register":
        cfg.initial_register = as_int(value)
        if not 0 <= cfg.initial_register <= 0xFFFFFFFF:
            raise bad("initial_register must fit in 32 bits")
    elif key == "placement":
        if value not in ("grid", "uniform", "explicit"):
            raise bad(f"placement must be grid|uniform|explicit, got {value!r}")
        cfg.placement = value
    elif key == "spacing":
        cfg.spacing = as_float(value)
    elif key == "radius":
        cfg.radius = as_float(value)
    elif key == "placement_file":
        cfg.placement_file = value
    elif key == "workload":
        if value not in ("none", "constant", "trace"):
            raise bad(f"workload must be none|constant|trace, got {value!r}")
        cfg.workload = value
    elif key == "pulse_rate":
        cfg.pulse_rate = as_float(value)
        if cfg.pulse_rate <= 0:
            raise bad("pulse_rate must be positive")
    elif key == "trace_file":
        cfg.trace_file = value
    elif key == "duration":
        cfg.duration = as_float(value)
        if cfg.duration < 0:
            raise bad("duration must be >= 0")
    elif key == "timeout":
        cfg.timeout = as_float(value)
        if cfg.timeout <= 0:
            raise bad("timeout must be positive")
    elif key == "max_attempts":
        cfg.max_attempts = as_int(value)
        if cfg.max_attempts < 1:
            raise bad("max_attempts must be >= 1")
    elif key == "inter_poll_gap":
        cfg.inter_poll_gap = as_float(value)
        if cfg.inter_poll_gap < 0:
            raise bad("inter_poll_gap must be >= 0")
    elif key == "sweep_every":
        cfg.sweep_every = as_float(value)
        if cfg.sweep_every < 0:
            raise bad("sweep_every must be >= 0")
    elif key == "fanout":
        if value not in ("auto", FANOUT_FULL, FANOUT_REACTIVE):
            raise bad(f"fanout must be auto|full|reactive, got {value!r}")
        cfg.fanout = value
    elif key in ("reverse_at", "power_cycle_at"):
        parts = value.split()
        if len(parts) != 2:
            raise bad(f"{key} needs '<time> <address-hex>'")
        t = as_float(parts[0])
        try:
            addr = int(parts[1], 16)
        except ValueError:
            raise bad(f"bad address {parts[1]!r}") from None
        getattr(cfg, key).append((t, addr))
    else:
        raise bad(f"unknown key {key!r}")


def parse_scenario(lines, source: str = "<scenario>") -> ScenarioConfig:
    cfg = ScenarioConfig(source=source)
    for line_no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError("expected 'key = value'", line_no, source)
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not value:
            raise ScenarioError(f"{key}: empty value", line_no, source)
        _parse_value(key, value, cfg, line_no, source)
    _cross_validate(cfg)
    return cfg


def _cross_validate(cfg: ScenarioConfig) -> None:
    if cfg.placement == "explicit" and cfg.placement_file is None:
        raise ScenarioError("placement = explicit needs placement_file",
                            source=cfg.source)
    if cfg.workload == "trace" and cfg.trace_file is None:
        raise ScenarioError("workload = trace needs trace_file", source=cfg.source)
    cfg.link_model()  # raises on inconsistent link settings


def load_scenario(path: str) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        cfg = parse_scenario(fh, source=path)
    base = os.path.dirname(os.path.abspath(path))
    if cfg.placement_file and not os.path.isabs(cfg.placement_file):
        cfg.placement_file = os.path.join(base, cfg.placement_file)
    if cfg.trace_file and not os.path.isabs(cfg.trace_file):
        cfg.trace_file = os.path.join(base, cfg.trace_file)
    return cfg


def _parse_placement_file(path: str) -> list[tuple[int, float, float]]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ScenarioError("expected '<addr-hex> <x> <y>'",
                                    line_no, path)
            try:
                out.append((int(parts[0], 16), float(parts[1]), float(parts[2])))
            except ValueError:
                raise ScenarioError(f"bad placement line {line!r}",
                                    line_no, path) from None
    if not out:
        raise ScenarioError("placement file is empty", source=path)
    return out


class World:
    """A built scenario: simulation, medium, head-end, and nodes."""

    def __init__(self, cfg: ScenarioConfig, sim: Simulation, medium: Medium,
                 headend: Headend, nodes: dict[int, MeterNode] | list):
        self.cfg = cfg
        self.sim = sim
        self.medium = medium
        self.headend = headend
        self._nodes = nodes  # list for dense address plans, else dict
        self.sweep_reports: list = []

    def node_of(self, address: int) -> MeterNode:
        if isinstance(self._nodes, list):
            idx = address - 1
            if not 0 <= idx < len(self._nodes):
                raise KeyError(address)
            return self._nodes[idx]
        return self._nodes[address]

    def addresses(self):
        return iter(self.headend.registry)

    def run_workload(self) -> None:
        """Advance through the configured workload window."""
        if self.cfg.duration > 0:
            self.sim.run_until(self.cfg.duration)

    def final_sweep(self):
        report = self.headend.sweep_now()
        self.sweep_reports.append(report)
        return report


def build_world(cfg: ScenarioConfig, *, log_enabled: bool = False,
                store: ReadingStore | None = None, on_event=None) -> World:
    link = cfg.link_model()
    policy = PollPolicy(timeout=cfg.timeout, max_attempts=cfg.max_attempts)
    validate_policy_against_link(policy, link)

    sim = Simulation(log_enabled=log_enabled)
    medium = Medium(sim, link, cfg.seed, fanout=cfg.resolved_fanout())
    rng = SplitMix64(cfg.seed)

    k, pi, init_reg = cfg.meter_constant, cfg.persist_interval, cfg.initial_register

    if cfg.placement == "explicit":
        entries = _parse_placement_file(cfg.placement_file)
        if len({a for a, _, _ in entries}) != len(entries):
            raise ScenarioError("duplicate address in placement file",
                                source=cfg.placement_file)
        cfg.meters = len(entries)
        registry = MeterRegistry()
        nodes: list | dict = {}
        headend = Headend(sim, registry, policy, store=store,
                          inter_poll_gap=cfg.inter_poll_gap, on_event=on_event)
        medium.add_station(headend, 0.0, 0.0)
        for addr, x, y in entries:
            node = MeterNode(addr, k, pi)
            if init_reg:
                node.pulse_register = node.nv_image = init_reg
            medium.add_station(node, x, y)
            registry.add(addr, k)
            nodes[addr] = node
    else:
        # dense address plan 1..meters; coordinates stay in flat arrays
        if cfg.placement == "grid":
            p = grid_placement(cfg.meters, cfg.spacing)
        else:
            p = uniform_placement(cfg.meters, cfg.radius, rng)
        registry = MeterRegistry.dense(1, cfg.meters, k)
        nodes = []
        headend = Headend(sim, registry, policy, store=store,
                          inter_poll_gap=cfg.inter_poll_gap, on_event=on_event)
        medium.add_station(headend, 0.0, 0.0)
        xs, ys = p.xs, p.ys
        append = nodes.append
        add_station = medium.add_station
        for i in range(cfg.meters):
            node = MeterNode(i + 1, k, pi)
            if init_reg:
                node.pulse_register = node.nv_image = init_reg
            add_station(node, xs[i], ys[i])
            append(node)

    world = World(cfg, sim, medium, headend, nodes)
    _schedule_workload(world, rng)
    _schedule_injections(world)
    _schedule_periodic_sweeps(world)
    return world


def _schedule_workload(world: World, rng: SplitMix64) -> None:
    cfg = world.cfg
    if cfg.workload == "constant":
        period = 1.0 / cfg.pulse_rate
        horizon = cfg.duration

        def fire(t: float, node: MeterNode) -> None:
            node.apply_pulse(Direction.FORWARD)
            nxt = t + period
            if nxt <= horizon:
                world.sim.schedule_pulse(nxt, fire, node, node.address, "F")

        # per-meter phase in registry iteration order, from the scenario stream
        for addr in world.addresses():
            first = rng.random() * period
            if first <= horizon:
                world.sim.schedule_pulse(first, fire, world.node_of(addr),
                                         addr, "F")
    elif cfg.workload == "trace":
        with open(cfg.trace_file, "r", encoding="utf-8") as fh:
            events = parse_pulse_trace(fh)

        def deliver(t: float, ev: PulseEvent) -> None:
            world.node_of(ev.meter_address).on_disk_pulse(ev)

        for ev in events:
            if ev.meter_address not in world.headend.registry:
                raise ScenarioError(
                    f"trace addresses unknown meter {ev.meter_address:#x}",
                    source=cfg.trace_file)
            world.sim.schedule_pulse(ev.sim_time, deliver, ev,
                                     ev.meter_address, ev.direction.value)


def _schedule_injections(world: World) -> None:
    for t, addr in world.cfg.reverse_at:
        node = world.node_of(addr)
        world.sim.schedule_pulse(
            t, lambda _t, n: n.apply_pulse(Direction.REVERSE), node, addr, "R")
    for t, addr in world.cfg.power_cycle_at:
        node = world.node_of(addr)
        world.sim.schedule_timer(
            t, lambda _t, n: n.power_cycle(), node, tag="power-cycle")


def _schedule_periodic_sweeps(world: World) -> None:
    every = world.cfg.sweep_every
    if every <= 0:
        return

    def kick(t: float, _arg) -> None:
        if world.headend._sweep is None:  # skip if the previous pass is still going
            world.headend.start_sweep(done_cb=world.sweep_reports.append)
        nxt = t + every
        if nxt <= world.cfg.duration:
            world.sim.schedule_timer(nxt, kick, tag="periodic-sweep")

    if every <= world.cfg.duration:
        world.sim.schedule_timer(every, kick, tag="periodic-sweep")
