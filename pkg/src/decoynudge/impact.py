"""Annual aviation CO2 and the share a decoy could additionally offset."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from .config import load_toml
from .personas import COUNTRY_NAMES

GRAMS_PER_MEGATONNE = 1e12


class ImpactInputError(ValueError):
    pass


@dataclass(frozen=True)
class CountryImpactInputs:
    country: str
    flights_per_person: float
    population: float
    sceptic_share: float
    mean_distance: float
    emission_factor: float
    uplift: float = 0.0

    def __post_init__(self) -> None:
        for name in ("flights_per_person", "population", "mean_distance", "emission_factor"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                raise ImpactInputError(f"{self.country}: {name} must be a non-negative number, got {v!r}")
        for name in ("sceptic_share", "uplift"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and 0 <= v <= 1):
                raise ImpactInputError(f"{self.country}: {name} must lie in [0, 1], got {v!r}")


def country_emissions(inputs: CountryImpactInputs) -> float:
    """Total annual emissions in Mt CO2."""
    grams = inputs.flights_per_person * inputs.population * inputs.mean_distance * inputs.emission_factor
    return grams / GRAMS_PER_MEGATONNE


def sceptic_emissions(total: float, share: float) -> float:
    if not 0 <= share <= 1:
        raise ImpactInputError(f"share must lie in [0, 1], got {share}")
    return total * share


def decoy_reduction(sceptic: float, uplift: float) -> float:
    if not 0 <= uplift <= 1:
        raise ImpactInputError(f"uplift must lie in [0, 1], got {uplift}")
    return sceptic * uplift


@dataclass(frozen=True)
class ImpactRow:
    inputs: CountryImpactInputs
    sceptic_travellers: float  # persons
    total_mt: float
    sceptic_mt: float
    reduction_mt: float


@dataclass
class ImpactTable:
    rows: list[ImpactRow]
    sources: dict[str, str] = field(default_factory=dict)

    @property
    def total_mt(self) -> float:
        return math.fsum(r.total_mt for r in self.rows)

    @property
    def sceptic_mt(self) -> float:
        return math.fsum(r.sceptic_mt for r in self.rows)

    @property
    def reduction_mt(self) -> float:
        return math.fsum(r.reduction_mt for r in self.rows)

    def row(self, country: str) -> ImpactRow:
        for r in self.rows:
            if r.inputs.country == country:
                return r
        raise KeyError(country)


def compute_impact(inputs: Sequence[CountryImpactInputs], sources: Mapping[str, str] | None = None) -> ImpactTable:
    rows = []
    for inp in inputs:
        total = country_emissions(inp)
        sceptic = sceptic_emissions(total, inp.sceptic_share)
        rows.append(ImpactRow(inp, inp.population * inp.sceptic_share, total, sceptic,
                              decoy_reduction(sceptic, inp.uplift)))
    return ImpactTable(rows, dict(sources or {}))


def default_inputs_path() -> Path:
    return Path(str(resources.files("decoynudge") / "data" / "impact_inputs.toml"))


def parse_impact_inputs(doc: Mapping) -> tuple[list[CountryImpactInputs], dict[str, str]]:
    """Per-country values may override the global distance and emission factor."""
    countries = doc.get("countries")
    if not countries:
        raise ImpactInputError("impact inputs define no countries")
    out = []
    for cc, spec in countries.items():
        missing = [k for k in ("flights_per_person", "population", "sceptic_share") if k not in spec]
        if missing:
            raise ImpactInputError(f"{cc}: missing {', '.join(missing)}")
        try:
            distance = float(spec.get("mean_distance_km", doc["mean_distance_km"]))
            factor = float(spec.get("emission_factor_g_per_km", doc["emission_factor_g_per_km"]))
        except KeyError as exc:
            raise ImpactInputError(f"{cc}: no value for {exc.args[0]}") from None
        out.append(CountryImpactInputs(
            country=cc,
            flights_per_person=float(spec["flights_per_person"]),
            population=float(spec["population"]),
            sceptic_share=float(spec["sceptic_share"]),
            mean_distance=distance,
            emission_factor=factor,
            uplift=float(spec.get("uplift", 0.0)),
        ))
    return out, {str(k): str(v) for k, v in doc.get("sources", {}).items()}


def load_impact_inputs(path: str | Path | None = None) -> tuple[list[CountryImpactInputs], dict[str, str]]:
    p = Path(path) if path is not None else default_inputs_path()
    if not p.is_file():
        raise FileNotFoundError(f"impact inputs not found: {p}")
    return parse_impact_inputs(load_toml(p))


IMPACT_COLUMNS = [
    "country", "flights_per_person", "population_millions", "sceptic_travellers_millions", "sceptic_share",
    "mean_distance_km", "emission_factor_g_per_km", "total_co2_mt", "sceptic_co2_mt", "decoy_reduction_mt",
    "uplift",
]


def _r(x: float, nd: int = 3) -> str:
    return f"{x:.{nd}f}"


def impact_csv(table: ImpactTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(IMPACT_COLUMNS)
    for r in table.rows:
        i = r.inputs
        w.writerow([
            COUNTRY_NAMES.get(i.country, i.country), i.flights_per_person, _r(i.population / 1e6, 1),
            _r(r.sceptic_travellers / 1e6, 1), i.sceptic_share, i.mean_distance, i.emission_factor,
            _r(r.total_mt), _r(r.sceptic_mt), _r(r.reduction_mt) if i.uplift > 0 else "", i.uplift,
        ])
    w.writerow(["Total", "", "", "", "", "", "", _r(table.total_mt), _r(table.sceptic_mt), _r(table.reduction_mt), ""])
    return buf.getvalue()
