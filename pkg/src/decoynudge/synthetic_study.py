"""Synthetic respondent data with known effects, for fixtures and tests."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .personas import COUNTRIES, Segment, enumerate_segments
from .seeding import derive_rng, derive_uniform
from .study import (
    CONDITIONS,
    COUNTRY_NON_OPTIMAL,
    COUNTRY_OPTIMAL,
    COUNTRY_UNIVERSAL,
    N_CONTROLS,
    NO_DECOY,
    PERSONALIZED,
    RespondentRecord,
)

FLIGHT_TYPES = ("short", "medium", "long")


@dataclass
class FixtureEffects:
    """Target-share model. Shifts are on the probability scale, added to the baseline."""

    intercept: float = -0.4
    trust: float = 1.3
    concern: float = 0.9
    offset_group: float = 0.8
    decoy_share: float = 0.06
    shifts_responsive: dict[str, float] = field(default_factory=lambda: {
        COUNTRY_OPTIMAL: 0.06, COUNTRY_NON_OPTIMAL: -0.40, COUNTRY_UNIVERSAL: 0.0, PERSONALIZED: 0.25,
    })
    shifts_other: dict[str, float] = field(default_factory=lambda: {
        COUNTRY_OPTIMAL: -0.02, COUNTRY_NON_OPTIMAL: -0.30, COUNTRY_UNIVERSAL: 0.0, PERSONALIZED: 0.0,
    })
    attention_fail_rate: float = 0.05


def synthetic_groups(seed: int = 0, responsive_share: float = 0.4,
                     segments: Sequence[Segment] | None = None) -> dict[str, dict[str, int]]:
    """Predicted groups without running a sweep: full offsetters trust and are concerned."""
    out = {}
    for seg in segments or enumerate_segments():
        full = seg.trust == "trusts" and seg.concern == "concerned"
        responsive = derive_uniform("fixture-groups", seed, seg.key) < responsive_share
        out[seg.key] = {"offset_group": 1 if full else 2, "decoy_group": 1 if responsive else 2}
    return out


def baseline_share(effects: FixtureEffects, seg: Segment, groups: Mapping[str, int]) -> float:
    eta = (effects.intercept
           + effects.trust * (seg.trust == "trusts")
           + effects.concern * (seg.concern == "concerned")
           + effects.offset_group * (groups["offset_group"] == 1))
    return 1.0 / (1.0 + math.exp(-eta))


def condition_probabilities(effects: FixtureEffects, seg: Segment, groups: Mapping[str, int],
                            condition: str) -> dict[str, float]:
    base = baseline_share(effects, seg, groups)
    if condition == NO_DECOY:
        return {"target": base, "competitor": 1.0 - base, "decoy": 0.0}
    shifts = effects.shifts_responsive if groups["decoy_group"] == 1 else effects.shifts_other
    share = min(0.99, max(0.01, base + shifts[condition]))
    rest = 1.0 - effects.decoy_share
    return {"target": rest * share, "competitor": rest * (1 - share), "decoy": effects.decoy_share}


def generate_respondents(groups: Mapping[str, Mapping[str, int]], n_per_country: int = 150, seed: int = 0,
                         effects: FixtureEffects | None = None, countries: Sequence[str] = COUNTRIES,
                         scenarios_per_condition: int = 1) -> list[RespondentRecord]:
    effects = effects or FixtureEffects()
    segs = enumerate_segments()
    # per-control failure chance giving the requested overall failure rate
    q = 1.0 - (1.0 - effects.attention_fail_rate) ** (1.0 / N_CONTROLS)
    out = []
    for cc in countries:
        pool = [s for s in segs if s.country == cc and s.key in groups]
        if not pool:
            raise ValueError(f"no predicted groups for country {cc}")
        for i in range(n_per_country):
            rng = derive_rng("fixture-respondent", seed, cc, i)
            seg = pool[int(rng.integers(len(pool)))]
            rec = RespondentRecord(f"{cc}-{i:04d}", seg)
            for k in range(1, N_CONTROLS + 1):
                rec.controls[k] = "dominated" if rng.random() < q else "dominant"
            for cond in CONDITIONS:
                probs = condition_probabilities(effects, seg, groups[seg.key], cond)
                roles = list(probs)
                weights = [probs[r] for r in roles]
                rec.choices[cond] = [roles[int(rng.choice(3, p=weights))] for _ in range(scenarios_per_condition)]
                rec.flight_types[cond] = [FLIGHT_TYPES[int(rng.integers(3))] for _ in range(scenarios_per_condition)]
            out.append(rec)
    return out
