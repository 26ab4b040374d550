"""Shared builders and hypothesis strategies for respondent data."""

from __future__ import annotations

from hypothesis import strategies as st

from decoynudge.personas import enumerate_segments
from decoynudge.study import CHOICE_ROLES, CONDITIONS, N_CONTROLS, NO_DECOY, RespondentRecord

SEGMENTS = enumerate_segments()


def make_record(rid, segment=None, controls=("dominant",) * N_CONTROLS, **choices) -> RespondentRecord:
    rec = RespondentRecord(rid, segment or SEGMENTS[0])
    rec.controls = {i + 1: c for i, c in enumerate(controls)}
    for cond in CONDITIONS:
        if cond in choices:
            rec.choices[cond] = list(choices[cond])
            rec.flight_types[cond] = ["short"] * len(choices[cond])
    return rec


@st.composite
def records(draw, min_size=1, max_size=12, scenarios=st.integers(1, 4)):
    """Valid respondent records covering every condition."""
    n = draw(st.integers(min_size, max_size))
    out = []
    for i in range(n):
        seg = draw(st.sampled_from(SEGMENTS))
        controls = draw(st.lists(st.sampled_from(("dominant", "dominated")), min_size=N_CONTROLS,
                                 max_size=N_CONTROLS))
        choices = {}
        for cond in CONDITIONS:
            roles = CHOICE_ROLES[:2] if cond == NO_DECOY else CHOICE_ROLES
            choices[cond] = draw(st.lists(st.sampled_from(roles), min_size=1, max_size=draw(scenarios)))
        out.append(make_record(f"r{i}", seg, controls, **choices))
    return out
