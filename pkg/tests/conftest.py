from __future__ import annotations

import pytest

# criterion number -> list of (ok, detail); filled by the acceptance tests
_ACCEPTANCE: dict[int, list[tuple[bool, str]]] = {}

_TITLES = {
    1: "impact table reproduction",
    2: "effect-size identities",
    3: "exact-test oracle equivalence",
    4: "end-to-end decoy optimization",
    5: "determinism across concurrency",
    6: "RST and exclusion contract",
    7: "human-data substitutes (reports, logistic fit)",
    8: "LLM protocol contract",
}


@pytest.fixture
def acceptance():
    """``acceptance(criterion, ok, detail)`` records one outcome for the summary."""

    def record(criterion: int, ok: bool, detail: str = "") -> None:
        _ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for c in sorted(_TITLES):
        parts = _ACCEPTANCE.get(c)
        if parts is None:
            tr.write_line(f"criterion {c}: NOT RUN - {_TITLES[c]}")
            continue
        status = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        details = "; ".join(d for _, d in parts if d)
        tr.write_line(f"criterion {c}: {status} - {_TITLES[c]}" + (f" ({details})" if details else ""))
