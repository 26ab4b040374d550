"""Randomized booking situations and the user-role choice prompt.

A situation is drawn once for Singapore (base currency SGD) and converted to
other countries with a fixed exchange coefficient. Prices are carried as
``Decimal`` and rounded half-up to cents only when a prompt is rendered.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Mapping, Sequence

from .decoy_space import ConfigurationError, DecoyCell, decoy_offset, decoy_price
from .seeding import derive_rng

ROLES = ("target", "competitor", "decoy")
CENT = Decimal("0.01")
UNIT = Decimal("1")

# Default draw ranges; override via the [scenario.ranges] config table.
DEFAULT_RANGES = {
    "flight_hours": (1.0, 14.0),
    "emission_multiplier": (60.0, 120.0),  # kg CO2 per flight hour
    "price_multiplier": (50.0, 150.0),  # SGD fare per flight hour
    "offset_multiplier": (0.01, 0.03),  # SGD per kg CO2 offset
}
DEFAULT_BOTTLES_PER_KG = 50.0

# country -> (ISO currency, units per SGD); user-supplied config in real runs
DEFAULT_FX = {
    "SG": ("SGD", 1.0),
    "CN": ("CNY", 5.4),
    "DE": ("EUR", 0.68),
    "IN": ("INR", 62.0),
    "US": ("USD", 0.74),
}


@dataclass(frozen=True)
class SituationDraw:
    flight_hours: float
    emission_multiplier: float
    price_multiplier: float
    offset_multiplier: float
    draw_index: int


@dataclass(frozen=True)
class TicketOption:
    price: Decimal
    offset_fraction: float

    def __post_init__(self) -> None:
        if not self.price > 0:
            raise ValueError(f"ticket price must be positive, got {self.price}")


@dataclass(frozen=True)
class ChoiceScenario:
    flight_hours: float
    emissions_kg: float
    bottles_number: int
    currency: str
    target: TicketOption
    competitor: TicketOption
    decoy: TicketOption | None = None
    decoy_cell: DecoyCell | None = None
    country: str = "SG"
    draw_index: int = 0

    @property
    def roles(self) -> tuple[str, ...]:
        return ROLES if self.decoy is not None else ROLES[:2]

    def option(self, role: str) -> TicketOption:
        opt = getattr(self, role)
        if opt is None:
            raise KeyError(f"scenario has no {role} option")
        return opt


def _check_ranges(ranges: Mapping[str, tuple[float, float]]) -> dict[str, tuple[float, float]]:
    out = {}
    for name in DEFAULT_RANGES:
        if name not in ranges:
            raise ConfigurationError(f"missing range for {name}")
        lo, hi = (float(v) for v in ranges[name])
        if not 0 < lo <= hi:
            raise ConfigurationError(f"range for {name} must satisfy 0 < min <= max, got ({lo}, {hi})")
        out[name] = (lo, hi)
    return out


def draw_situations(seed: int, n: int = 30, ranges: Mapping = DEFAULT_RANGES) -> list[SituationDraw]:
    if n < 1:
        raise ValueError(f"need at least one situation, got n={n}")
    checked = _check_ranges(ranges)
    rng = derive_rng("situations", int(seed))
    draws = []
    for i in range(n):
        values = {name: float(rng.uniform(lo, hi)) for name, (lo, hi) in checked.items()}
        draws.append(SituationDraw(draw_index=i, **values))
    return draws


def _money(x: float) -> Decimal:
    return Decimal(repr(float(x))).quantize(CENT, rounding=ROUND_HALF_UP)


def build_scenario(
    draw: SituationDraw,
    country: str,
    cell: DecoyCell | None = None,
    fx: Mapping[str, tuple[str, float]] = DEFAULT_FX,
    bottles_per_kg: float = DEFAULT_BOTTLES_PER_KG,
) -> ChoiceScenario:
    """Compose one choice situation.

    The SGD fare scales with flight length (``price_multiplier`` per hour) and
    the carbon-neutral surcharge is ``offset_multiplier`` per kg of emissions.
    Both are quantized to cents before the exchange coefficient is applied.
    """
    if country not in fx:
        raise ConfigurationError(f"no exchange coefficient configured for {country}")
    currency, coef = fx[country]
    coef = Decimal(str(coef))
    emissions = draw.flight_hours * draw.emission_multiplier
    fare = _money(draw.price_multiplier * draw.flight_hours)
    surcharge = _money(draw.offset_multiplier * emissions)
    if surcharge <= 0:
        raise ValueError("offset surcharge rounds to zero; target would equal competitor")
    target = TicketOption((fare + surcharge) * coef, 1.0)
    competitor = TicketOption(fare * coef, 0.0)
    decoy = None
    if cell is not None:
        decoy = TicketOption(
            decoy_price(target.price, competitor.price, cell.mu),
            decoy_offset(target.offset_fraction, cell),
        )
    return ChoiceScenario(
        flight_hours=draw.flight_hours,
        emissions_kg=emissions,
        bottles_number=int(Decimal(repr(emissions * bottles_per_kg)).quantize(UNIT, rounding=ROUND_HALF_UP)),
        currency=currency,
        target=target,
        competitor=competitor,
        decoy=decoy,
        decoy_cell=cell,
        country=country,
        draw_index=draw.draw_index,
    )


# ---------------------------------------------------------------------------
# prompt rendering

_COUNT_WORDS = {2: "two", 3: "three"}


def format_money(value: Decimal) -> str:
    return str(Decimal(value).quantize(CENT, rounding=ROUND_HALF_UP))


def _option_text(scenario: ChoiceScenario, role: str) -> str:
    opt = scenario.option(role)
    head = f"Pay {format_money(opt.price)} {scenario.currency} and"
    if role == "target":
        return f"{head} fully offset emissions"
    if role == "competitor":
        return f"{head} not offset emissions"
    return f"{head} offset {round(opt.offset_fraction * 100)}% emissions"


def render_user_prompt(scenario: ChoiceScenario, order: Sequence[str]) -> str:
    order = tuple(order)
    if sorted(order) != sorted(scenario.roles):
        raise ValueError(f"order {order} is not a permutation of {scenario.roles}")
    emissions = int(Decimal(repr(scenario.emissions_kg)).quantize(UNIT, rounding=ROUND_HALF_UP))
    options = "; ".join(f"{i}. {_option_text(scenario, role)}" for i, role in enumerate(order, 1))
    return (
        f"You are planning a {scenario.flight_hours:.1f}-hour flight. "
        f"This flight produces {emissions} kg of CO₂ emissions which is equivalent to "
        f"producing {scenario.bottles_number} plastic water bottles. "
        f"Using all the information below, consider {_COUNT_WORDS[len(order)]} options: "
        f"{options}. Which option would you choose? "
        "Please give your answer only with the option number without any words."
    )


_OPTION_RE = re.compile(
    r"(\d)\. Pay (\d+\.\d{2}) ([A-Z]{3}) and (fully offset|not offset|offset (\d+)%) emissions"
)


@dataclass(frozen=True)
class PresentedOption:
    position: int
    role: str
    price: Decimal
    offset_fraction: float
    currency: str = field(default="", compare=False)


def parse_user_prompt(text: str) -> list[PresentedOption]:
    """Read the numbered options back out of a rendered prompt, in presented order."""
    out = []
    for m in _OPTION_RE.finditer(text):
        kind = m.group(4)
        if kind == "fully offset":
            role, frac = "target", 1.0
        elif kind == "not offset":
            role, frac = "competitor", 0.0
        else:
            role, frac = "decoy", int(m.group(5)) / 100
        out.append(PresentedOption(int(m.group(1)), role, Decimal(m.group(2)), frac, m.group(3)))
    if len(out) not in (2, 3) or [o.position for o in out] != list(range(1, len(out) + 1)):
        raise ValueError("text is not a rendered choice prompt")
    return out


# ---------------------------------------------------------------------------
# JSON lines interchange


def _option_dict(opt: TicketOption | None):
    if opt is None:
        return None
    return {"price": str(opt.price), "offset_fraction": opt.offset_fraction}


def scenario_to_dict(s: ChoiceScenario) -> dict:
    return {
        "country": s.country,
        "draw_index": s.draw_index,
        "flight_hours": s.flight_hours,
        "emissions_kg": s.emissions_kg,
        "bottles_number": s.bottles_number,
        "currency": s.currency,
        "target": _option_dict(s.target),
        "competitor": _option_dict(s.competitor),
        "decoy": _option_dict(s.decoy),
        "decoy_cell": None if s.decoy_cell is None else s.decoy_cell.cell_id,
    }


def scenario_from_dict(d: Mapping) -> ChoiceScenario:
    def opt(x):
        return None if x is None else TicketOption(Decimal(x["price"]), float(x["offset_fraction"]))

    return ChoiceScenario(
        flight_hours=float(d["flight_hours"]),
        emissions_kg=float(d["emissions_kg"]),
        bottles_number=int(d["bottles_number"]),
        currency=d["currency"],
        target=opt(d["target"]),
        competitor=opt(d["competitor"]),
        decoy=opt(d.get("decoy")),
        decoy_cell=None if d.get("decoy_cell") is None else DecoyCell.from_id(d["decoy_cell"]),
        country=d.get("country", "SG"),
        draw_index=int(d.get("draw_index", 0)),
    )


def dump_jsonl(scenarios: Iterable[ChoiceScenario]) -> str:
    return "".join(json.dumps(scenario_to_dict(s), ensure_ascii=False) + "\n" for s in scenarios)


def load_jsonl(text: str) -> list[ChoiceScenario]:
    return [scenario_from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]
