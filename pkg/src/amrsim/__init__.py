"""amrsim: a deterministic desk-scale automatic-meter-reading system.

Simulated meter nodes answer a sequential poll/response radio protocol
run by a head-end collector, whose stored readings feed a slab-tariff
billing engine. Everything runs on one seeded discrete-event loop, so
scenarios replay byte-identically.
"""

from .billing import (
    Bill,
    BillingAnomalyError,
    NoBaselineError,
    Tariff,
    TariffSlab,
    bill_period,
    compute_bill,
    consumption_kwh,
    flat_tariff,
    load_tariff,
    parse_tariff,
)
from .headend import (
    AnomalyEvent,
    Headend,
    MeterRegistry,
    NotRegisteredError,
    PollPolicy,
    ReadingRecord,
    ReadingStore,
    SweepReport,
)
from .meter import Direction, MeterNode, Mode, PulseEvent, StatusFlags
from .netsim import LinkModel, Medium, Simulation, link_preset
from .protocol import (
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
)
from .rng import SplitMix64, keyed_uniform
from .scenario import ScenarioConfig, ScenarioError, build_world, load_scenario

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
