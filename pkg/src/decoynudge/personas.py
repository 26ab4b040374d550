"""Air-traveller segments and their persona system prompts."""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, fields

COUNTRIES = ("CN", "DE", "IN", "SG", "US")
GENDERS = ("man", "woman")
AGES = ("below_median", "above_median")
INCOMES = ("below_median", "above_median")
CONCERNS = ("concerned", "not_concerned")
TRUSTS = ("trusts", "not_trusts")

LEVELS = {
    "country": COUNTRIES,
    "gender": GENDERS,
    "age": AGES,
    "income": INCOMES,
    "concern": CONCERNS,
    "trust": TRUSTS,
}

# Country names as they are spelled in the persona prompt.
COUNTRY_NAMES = {
    "CN": "China",
    "DE": "Germany",
    "IN": "India",
    "SG": "Singapore",
    "US": "US",
}

_MEDIAN_PHRASE = {"below_median": "below median", "above_median": "above median"}
_CONCERN_PHRASE = {"concerned": "concern", "not_concerned": "cannot say that you concern"}
_TRUST_PHRASE = {"trusts": "believe", "not_trusts": "cannot say that you believe"}

SYSTEM_TEMPLATE = (
    "You are a {gender}, aged {age}, permanently resides in {country}, "
    "and your monthly income is {income}. You {concern} environment protection "
    "in your daily life and {trust} that the money you pay for carbon offsets "
    "are really used to offset emissions."
)


@dataclass(frozen=True, order=False)
class Segment:
    country: str
    gender: str
    age: str
    income: str
    concern: str
    trust: str

    def __post_init__(self) -> None:
        for name, allowed in LEVELS.items():
            value = getattr(self, name)
            if value not in allowed:
                raise ValueError(f"segment field {name}={value!r} not in {allowed}")

    @property
    def key(self) -> str:
        """Stable join key, e.g. ``sg_man_age_hi_inc_hi_concern_trust``."""
        return "_".join(
            [
                self.country.lower(),
                self.gender,
                "age_hi" if self.age == "above_median" else "age_lo",
                "inc_hi" if self.income == "above_median" else "inc_lo",
                "concern" if self.concern == "concerned" else "noconcern",
                "trust" if self.trust == "trusts" else "notrust",
            ]
        )

    @classmethod
    def from_key(cls, key: str) -> "Segment":
        parts = key.split("_")
        if len(parts) != 8:
            raise ValueError(f"malformed segment key {key!r}")
        country, gender, _, age, _, income, concern, trust = parts
        try:
            return cls(
                country=country.upper(),
                gender=gender,
                age={"hi": "above_median", "lo": "below_median"}[age],
                income={"hi": "above_median", "lo": "below_median"}[income],
                concern={"concern": "concerned", "noconcern": "not_concerned"}[concern],
                trust={"trust": "trusts", "notrust": "not_trusts"}[trust],
            )
        except KeyError as exc:
            raise ValueError(f"malformed segment key {key!r}") from exc

    def as_dict(self) -> dict[str, str]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def enumerate_segments() -> list[Segment]:
    """All 160 segments: country first, then each binary field in declared order."""
    return [
        Segment(*combo)
        for combo in itertools.product(COUNTRIES, GENDERS, AGES, INCOMES, CONCERNS, TRUSTS)
    ]


def render_system_prompt(segment: Segment) -> str:
    return SYSTEM_TEMPLATE.format(
        gender=segment.gender,
        age=_MEDIAN_PHRASE[segment.age],
        country=COUNTRY_NAMES[segment.country],
        income=_MEDIAN_PHRASE[segment.income],
        concern=_CONCERN_PHRASE[segment.concern],
        trust=_TRUST_PHRASE[segment.trust],
    )


def parse_system_prompt(text: str) -> Segment:
    """Recover the segment from a rendered persona prompt (inverse of rendering)."""
    lookup = _PROMPT_INDEX.get(text)
    if lookup is None:
        raise ValueError("text is not a rendered persona prompt")
    return lookup


_PROMPT_INDEX = {render_system_prompt(s): s for s in enumerate_segments()}


def segments_to_csv(segments: list[Segment]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["key", *LEVELS])
    for s in segments:
        writer.writerow([s.key, *(getattr(s, name) for name in LEVELS)])
    return buf.getvalue()
