"""Slab-tariff billing over stored readings.

All energy quantities are exact rationals (pulse deltas divided by the
meter constant) and all money is Decimal; binary floats never touch a
billing path. Rounding happens exactly once, half-up to 2 decimals, at
the line-item level -- so consumptions over adjacent periods telescope
exactly, and recomputing any stored bill reproduces it bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from typing import Iterable

_WRAP = 1 << 32
_HALF = 1 << 31


class BillingAnomalyError(Exception):
    """Wrap-adjusted consumption came out negative; never bill it."""


class NoBaselineError(Exception):
    def __init__(self, address: int, endpoint: str, t: float):
        super().__init__(
            f"no reading at or before {endpoint} boundary t={t} "
            f"for meter {address:#010x}")
        self.endpoint = endpoint


class TariffError(Exception):
    """Invalid tariff configuration; raised at load time, never at bill time."""


def kwh_str(value: Fraction, min_digits: int = 3, max_digits: int = 9) -> str:
    """Decimal rendering of an exact kWh amount: at least min_digits
    fractional digits, exact when the expansion terminates, otherwise
    rounded half-up at max_digits (display only -- arithmetic always
    uses the exact rational)."""
    sign = "-" if value < 0 else ""
    v = -value if value < 0 else value
    scaled = v * 10**max_digits
    n, rem = divmod(scaled.numerator, scaled.denominator)
    if rem * 2 >= scaled.denominator:
        n += 1
    digits = f"{n:0{max_digits + 1}d}"
    whole, frac = digits[:-max_digits], digits[-max_digits:]
    frac = frac.rstrip("0")
    frac = frac.ljust(min_digits, "0")
    return f"{sign}{whole}.{frac}"


def round_half_up_2dp(value: Fraction) -> Decimal:
    """Exact rational -> currency amount with 2 decimals, ties away
    from zero. Integer arithmetic only."""
    scaled = value * 100
    n, rem = divmod(abs(scaled.numerator), scaled.denominator)
    if rem * 2 >= scaled.denominator:
        n += 1
    if scaled.numerator < 0:
        n = -n
    return Decimal(n).scaleb(-2)


UNBOUNDED = None


@dataclass(frozen=True)
class TariffSlab:
    upper_kwh: Fraction | None  # None = unbounded final slab
    rate: Decimal  # currency per kWh


@dataclass(frozen=True)
class Tariff:
    slabs: tuple[TariffSlab, ...]
    fixed_charge: Decimal
    currency: str = "BDT"

    def __post_init__(self):
        if not self.slabs:
            raise TariffError("tariff needs at least one slab")
        if self.slabs[-1].upper_kwh is not UNBOUNDED:
            raise TariffError("last slab must be unbounded")
        prev = Fraction(0)
        for i, slab in enumerate(self.slabs):
            if slab.rate < 0:
                raise TariffError(f"slab {i}: rate must be >= 0")
            if slab.upper_kwh is UNBOUNDED:
                if i != len(self.slabs) - 1:
                    raise TariffError("only the last slab may be unbounded")
            else:
                if slab.upper_kwh <= prev:
                    raise TariffError(
                        f"slab {i}: bound {slab.upper_kwh} must exceed {prev}")
                prev = slab.upper_kwh
        if self.fixed_charge < 0:
            raise TariffError("fixed_charge must be >= 0")


def flat_tariff(rate: str = "1.00", fixed: str = "0.00",
                currency: str = "BDT") -> Tariff:
    return Tariff((TariffSlab(UNBOUNDED, Decimal(rate)),),
                  Decimal(fixed), currency)


@dataclass(frozen=True)
class BillLine:
    upper_kwh: Fraction | None
    rate: Decimal
    kwh: Fraction
    amount: Decimal

    def to_dict(self) -> dict:
        return {
            "upper_kwh": None if self.upper_kwh is None else kwh_str(self.upper_kwh),
            "rate": str(self.rate),
            "kwh": kwh_str(self.kwh),
            "amount": str(self.amount),
        }


@dataclass(frozen=True)
class Bill:
    address: int
    t_start: float
    t_end: float
    consumption_kwh: Fraction
    lines: tuple[BillLine, ...]
    fixed_charge: Decimal
    total: Decimal
    currency: str

    def to_dict(self) -> dict:
        return {
            "address": self.address,
            "t_start": self.t_start,
            "t_end": self.t_end,
            "consumption_kwh": kwh_str(self.consumption_kwh),
            "lines": [ln.to_dict() for ln in self.lines],
            "fixed_charge": str(self.fixed_charge),
            "total": str(self.total),
            "currency": self.currency,
        }


def wrap_adjusted_pulses(prev_register: int, curr_register: int) -> int:
    d = (curr_register - prev_register) & 0xFFFFFFFF
    return d - _WRAP if d > _HALF else d


def consumption_kwh(prev, curr) -> Fraction:
    """Exact energy between two readings of one meter. prev/curr are
    ReadingRecords (duck-typed: address, register, meter_constant_k,
    sim_time)."""
    if prev.address != curr.address:
        raise ValueError("readings are for different meters")
    if not prev.sim_time < curr.sim_time:
        raise ValueError("prev reading must be strictly earlier")
    if prev.meter_constant_k != curr.meter_constant_k:
        raise ValueError("meter constant changed between readings")
    pulses = wrap_adjusted_pulses(prev.register, curr.register)
    if pulses < 0:
        raise BillingAnomalyError(
            f"consumption for {curr.address:#010x} is negative "
            f"({pulses} pulses): registers {prev.register} -> {curr.register}")
    return Fraction(pulses, curr.meter_constant_k)


def compute_bill(consumption: Fraction, tariff: Tariff, *, address: int = 0,
                 t_start: float = 0.0, t_end: float = 0.0) -> Bill:
    """Fill slabs in order; every slab appears as a line (zero-kWh
    lines included) so bills for different consumptions align."""
    if consumption < 0:
        raise BillingAnomalyError("cannot bill negative consumption")
    lines = []
    total = tariff.fixed_charge
    prev_bound = Fraction(0)
    for slab in tariff.slabs:
        if slab.upper_kwh is UNBOUNDED:
            in_slab = max(consumption - prev_bound, Fraction(0))
        else:
            width = slab.upper_kwh - prev_bound
            used = min(consumption, slab.upper_kwh) - prev_bound
            in_slab = min(max(used, Fraction(0)), width)
            prev_bound = slab.upper_kwh
        amount = round_half_up_2dp(in_slab * Fraction(slab.rate))
        lines.append(BillLine(slab.upper_kwh, slab.rate, in_slab, amount))
        total += amount
    return Bill(address, t_start, t_end, consumption, tuple(lines),
                tariff.fixed_charge, total, tariff.currency)


def bill_period(store, address: int, t_start: float, t_end: float,
                tariff: Tariff) -> Bill:
    """Bill a period using metered boundary values: the latest reading
    at or before each endpoint. No interpolation, no estimation."""
    if not t_start < t_end:
        raise ValueError("t_start must be before t_end")
    base = store.latest_at_or_before(address, t_start)
    if base is None:
        raise NoBaselineError(address, "start", t_start)
    end = store.latest_at_or_before(address, t_end)
    if end is None:
        raise NoBaselineError(address, "end", t_end)
    if end.sim_time > base.sim_time:
        consumption = consumption_kwh(base, end)
    else:
        consumption = Fraction(0)  # no reading inside the period
    return compute_bill(consumption, tariff, address=address,
                        t_start=t_start, t_end=t_end)


# -- tariff file -------------------------------------------------------


def parse_tariff(lines: Iterable[str], source: str = "<tariff>") -> Tariff:
    """Line-oriented tariff schema (see docs/formats.md):

        currency = BDT
        fixed_charge = 10.00
        slab = 75 3.00       # up to 75 kWh at 3.00/kWh
        slab = 200 4.00
        slab = * 5.00        # remainder

    Raises TariffError with the offending line number.
    """
    currency = "BDT"
    fixed = Decimal("0.00")
    slabs: list[TariffSlab] = []
    for line_no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise TariffError(f"{source}:{line_no}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key == "currency":
            currency = value
        elif key == "fixed_charge":
            try:
                fixed = Decimal(value)
            except ArithmeticError:
                raise TariffError(f"{source}:{line_no}: bad amount {value!r}") from None
        elif key == "slab":
            parts = value.split()
            if len(parts) != 2:
                raise TariffError(
                    f"{source}:{line_no}: slab needs '<upper-kwh|*> <rate>'")
            try:
                upper = UNBOUNDED if parts[0] == "*" else Fraction(parts[0])
                rate = Decimal(parts[1])
            except (ValueError, ZeroDivisionError, ArithmeticError):
                raise TariffError(f"{source}:{line_no}: bad slab {value!r}") from None
            slabs.append(TariffSlab(upper, rate))
        else:
            raise TariffError(f"{source}:{line_no}: unknown key {key!r}")
    try:
        return Tariff(tuple(slabs), fixed, currency)
    except TariffError as e:
        raise TariffError(f"{source}: {e}") from None


def load_tariff(path: str) -> Tariff:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_tariff(fh, source=path)


def bills_to_csv(bills, fileobj) -> int:
    """Summary CSV, one row per bill (line items stay in the
    structured form):

        address,t_start,t_end,consumption_kwh,fixed_charge,total,currency
    """
    fileobj.write("address,t_start,t_end,consumption_kwh,fixed_charge,total,currency\n")
    n = 0
    for b in bills:
        d = b.to_dict() if hasattr(b, "to_dict") else b
        fileobj.write(
            f"{d['address']},{d['t_start']!r},{d['t_end']!r},"
            f"{d['consumption_kwh']},{d['fixed_charge']},{d['total']},"
            f"{d['currency']}\n")
        n += 1
    return n
