"""Respondent ingestion, exclusion, RST and the hypothesis battery.

Input is a long CSV with one row per respondent and scenario:

    respondent_id, country, gender, age, income, concern, trust,
    condition, scenario_index, chosen_role, flight_type

Segment columns use the level codes of :mod:`decoynudge.personas`.
``condition`` is one of :data:`CONDITIONS` or ``attention_check``; choice
rows carry ``target``/``competitor``/``decoy`` and attention-check rows carry
``dominant``/``dominated``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .personas import COUNTRIES, COUNTRY_NAMES, LEVELS, Segment
from .stats import (
    AnovaTable,
    TestResult,
    bootstrap_ci,
    friedman,
    mann_whitney,
    two_way_anova_type2,
    wilcoxon_signed_rank,
)

NO_DECOY = "no_decoy"
COUNTRY_OPTIMAL = "country_optimal"
COUNTRY_NON_OPTIMAL = "country_non_optimal"
COUNTRY_UNIVERSAL = "country_universal"
PERSONALIZED = "personalized"
CONDITIONS = (NO_DECOY, COUNTRY_OPTIMAL, COUNTRY_NON_OPTIMAL, COUNTRY_UNIVERSAL, PERSONALIZED)
REQUIRED_CONDITIONS = (NO_DECOY, COUNTRY_OPTIMAL, COUNTRY_NON_OPTIMAL, PERSONALIZED)
ATTENTION = "attention_check"
CHOICE_ROLES = ("target", "competitor", "decoy")
CONTROL_ROLES = ("dominant", "dominated")
N_CONTROLS = 3

COLUMNS = (
    "respondent_id", "country", "gender", "age", "income", "concern", "trust",
    "condition", "scenario_index", "chosen_role", "flight_type",
)
SEGMENT_COLUMNS = ("country", "gender", "age", "income", "concern", "trust")

THRESHOLDS = {
    "H1": 0.05,
    "H2": 0.05,
    "H3": 0.05,
    "H4": 0.05,
    "H3.posthoc": 0.016,
    "H4.posthoc": 0.016,
    "H1.1": 0.01,
    "H2.1": 0.01,
    "H3.1": 0.005,
    "H4.1": 0.005,
    "sceptics": 0.01,
    "universal": 0.016,
}

# Reference survey sizes per country: respondents passing all checks and
# respondents predicted to respond to the decoy. Used only for a sanity warning.
REFERENCE_PASSED = {"CN": 713, "DE": 638, "IN": 714, "SG": 694, "US": 736}
REFERENCE_TARGET_GROUP = {"CN": 167, "DE": 221, "IN": 321, "SG": 231, "US": 345}


class SchemaError(ValueError):
    def __init__(self, message: str, problems: Sequence[str] = ()):
        self.problems = list(problems)
        detail = "".join(f"\n  {p}" for p in self.problems[:50])
        more = f"\n  ... {len(self.problems) - 50} more" if len(self.problems) > 50 else ""
        super().__init__(message + detail + more)


class AttentionDataError(ValueError):
    pass


class AnalysisError(ValueError):
    pass


# ---------------------------------------------------------------------------
# records


@dataclass
class RespondentRecord:
    respondent_id: str
    segment: Segment
    choices: dict[str, list[str]] = field(default_factory=dict)
    flight_types: dict[str, list[str]] = field(default_factory=dict)
    controls: dict[int, str] = field(default_factory=dict)

    @property
    def passed_attention(self) -> bool:
        return apply_attention_checks(self)


@dataclass
class ValidationReport:
    n_rows: int = 0
    n_respondents: int = 0
    rejected_rows: list[str] = field(default_factory=list)
    country_counts: dict[str, int] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.rejected_rows


@dataclass(frozen=True)
class RstValue:
    value: float
    n_target: int
    n_competitor: int


def _read_text(source) -> str:
    """``source`` is a path, a file object, or CSV text (recognised by a newline)."""
    if hasattr(source, "read"):
        return source.read()
    if isinstance(source, Path) or "\n" not in source:
        path = Path(source)
        if not path.is_file():
            raise FileNotFoundError(f"respondent file not found: {path}")
        return path.read_text(encoding="utf-8")
    return source


def load_respondents(source, strict: bool = True) -> tuple[list[RespondentRecord], ValidationReport]:
    """Parse and validate a respondent CSV (path, text or file object).

    With ``strict`` any rejected row raises :class:`SchemaError`; otherwise bad
    rows are dropped and listed in the report.
    """
    text = _read_text(source)
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    missing = [c for c in COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"respondent file is missing columns: {', '.join(missing)}")

    report = ValidationReport()
    problems: list[str] = []
    records: dict[str, RespondentRecord] = {}
    seen: set[tuple[str, str, int]] = set()
    for lineno, row in enumerate(reader, start=2):
        report.n_rows += 1
        err = _row_problem(row)
        if err:
            problems.append(f"line {lineno}: {err}")
            continue
        rid = row["respondent_id"].strip()
        seg = Segment(**{c: row[c].strip() for c in SEGMENT_COLUMNS})
        cond = row["condition"].strip()
        idx = int(row["scenario_index"])
        role = row["chosen_role"].strip()
        if (rid, cond, idx) in seen:
            problems.append(f"line {lineno}: duplicate scenario {cond}#{idx} for respondent {rid}")
            continue
        seen.add((rid, cond, idx))
        rec = records.get(rid)
        if rec is None:
            rec = records[rid] = RespondentRecord(rid, seg)
        elif rec.segment != seg:
            problems.append(f"line {lineno}: respondent {rid} changes segment attributes")
            continue
        if cond == ATTENTION:
            rec.controls[idx] = role
        else:
            rec.choices.setdefault(cond, []).append(role)
            rec.flight_types.setdefault(cond, []).append(row["flight_type"].strip())

    if report.n_rows == 0:
        raise SchemaError("respondent file has no data rows")
    if problems and strict:
        raise SchemaError(f"{len(problems)} invalid rows in respondent file", problems)
    out = list(records.values())
    report.rejected_rows = problems
    report.n_respondents = len(out)
    report.country_counts = dict(sorted(Counter(r.segment.country for r in out).items()))
    return out, report


def _row_problem(row: Mapping[str, str]) -> str | None:
    for col in COLUMNS:
        if row.get(col) is None or (col != "flight_type" and not row[col].strip()):
            return f"empty {col}"
    for col in SEGMENT_COLUMNS:
        if row[col].strip() not in LEVELS[col]:
            return f"{col}={row[col]!r} not one of {LEVELS[col]}"
    cond = row["condition"].strip()
    role = row["chosen_role"].strip()
    try:
        int(row["scenario_index"])
    except ValueError:
        return f"scenario_index={row['scenario_index']!r} is not an integer"
    if cond == ATTENTION:
        if role not in CONTROL_ROLES:
            return f"attention check role {role!r} not one of {CONTROL_ROLES}"
        return None
    if cond not in CONDITIONS:
        return f"unknown condition {cond!r}"
    if role not in CHOICE_ROLES:
        return f"unknown role {role!r}"
    if cond == NO_DECOY and role == "decoy":
        return "decoy chosen under no_decoy"
    return None


def records_to_csv(records: Iterable[RespondentRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in records:
        seg = [getattr(r.segment, c) for c in SEGMENT_COLUMNS]
        for idx in sorted(r.controls):
            w.writerow([r.respondent_id, *seg, ATTENTION, idx, r.controls[idx], ""])
        for cond in CONDITIONS:
            for i, role in enumerate(r.choices.get(cond, [])):
                ft = r.flight_types.get(cond, [""] * (i + 1))[i]
                w.writerow([r.respondent_id, *seg, cond, i + 1, role, ft])
    return buf.getvalue()


def apply_attention_checks(record: RespondentRecord, n_controls: int = N_CONTROLS) -> bool:
    """True iff every control scenario picked the dominant option."""
    if len(record.controls) != n_controls:
        raise AttentionDataError(
            f"respondent {record.respondent_id}: expected {n_controls} attention checks, found {len(record.controls)}"
        )
    return all(role == "dominant" for role in record.controls.values())


def compute_rst(record: RespondentRecord, condition: str) -> RstValue:
    if condition not in record.choices:
        raise KeyError(f"respondent {record.respondent_id} has no {condition} scenarios")
    roles = record.choices[condition]
    t = sum(1 for r in roles if r == "target")
    c = sum(1 for r in roles if r == "competitor")
    return RstValue(t / (t + c) if t + c else 0.0, t, c)


# ---------------------------------------------------------------------------
# analysis dataset


@dataclass
class ExclusionReport:
    n_total: int
    n_excluded: int
    excluded_ids: list[str]
    excluded_by_country: dict[str, int]
    included_by_country: dict[str, int]


@dataclass
class StudyData:
    ids: list[str]
    country: np.ndarray
    trust: np.ndarray
    offset_group: np.ndarray
    decoy_group: np.ndarray
    rst: dict[str, np.ndarray]
    exclusion: ExclusionReport
    warnings: list[str]

    def subset(self, mask: np.ndarray) -> "StudyData":
        return StudyData(
            [i for i, m in zip(self.ids, mask) if m],
            self.country[mask], self.trust[mask], self.offset_group[mask], self.decoy_group[mask],
            {k: v[mask] for k, v in self.rst.items()},
            self.exclusion, self.warnings,
        )

    def __len__(self) -> int:
        return len(self.ids)


def _group_lookup(groups: Mapping, seg: Segment) -> Mapping[str, int] | None:
    return groups.get(seg.key) if seg.key in groups else groups.get(seg)


def prepare_study(records: Sequence[RespondentRecord], groups: Mapping) -> StudyData:
    """Drop attention failures, attach predicted groups and per-condition RST."""
    kept: list[RespondentRecord] = []
    excluded: list[RespondentRecord] = []
    for r in records:
        (kept if apply_attention_checks(r) else excluded).append(r)
    missing = sorted({r.segment.key for r in kept if _group_lookup(groups, r.segment) is None})
    if missing:
        raise AnalysisError(f"no predicted group for segments: {', '.join(missing[:10])}")
    incomplete = [r.respondent_id for r in kept if any(c not in r.choices for c in REQUIRED_CONDITIONS)]
    if incomplete:
        raise AnalysisError(f"respondents lacking one of {REQUIRED_CONDITIONS}: {', '.join(incomplete[:10])}")
    conds = [c for c in CONDITIONS if all(c in r.choices for r in kept)]
    rst = {c: np.array([compute_rst(r, c).value for r in kept]) for c in conds}
    g = [_group_lookup(groups, r.segment) for r in kept]
    exclusion = ExclusionReport(
        n_total=len(records),
        n_excluded=len(excluded),
        excluded_ids=[r.respondent_id for r in excluded],
        excluded_by_country=dict(sorted(Counter(r.segment.country for r in excluded).items())),
        included_by_country=dict(sorted(Counter(r.segment.country for r in kept).items())),
    )
    data = StudyData(
        [r.respondent_id for r in kept],
        np.array([r.segment.country for r in kept], dtype=object),
        np.array([r.segment.trust for r in kept], dtype=object),
        np.array([x["offset_group"] for x in g], dtype=int),
        np.array([x["decoy_group"] for x in g], dtype=int),
        rst, exclusion, [],
    )
    data.warnings.extend(_cross_check_groups(data))
    return data


def _cross_check_groups(data: StudyData) -> list[str]:
    if data.exclusion.included_by_country != REFERENCE_PASSED:
        return []
    out = []
    for cc, expected in REFERENCE_TARGET_GROUP.items():
        got = int(np.sum((data.country == cc) & (data.decoy_group == 1)))
        if got != expected:
            out.append(f"{cc}: predicted decoy-responsive group has {got} respondents, reference lists {expected}")
    return out


# ---------------------------------------------------------------------------
# hypothesis reports


@dataclass
class PairwiseResult:
    label: str
    result: TestResult | None
    threshold: float
    significant: bool | None
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "threshold": self.threshold,
            "significant": self.significant,
            "note": self.note,
            "result": self.result.to_dict() if self.result else None,
        }


@dataclass
class HypothesisReport:
    hypothesis: str
    description: str
    threshold: float
    decision: str
    omnibus: TestResult | None = None
    pairwise: list[PairwiseResult] = field(default_factory=list)
    descriptives: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "hypothesis": self.hypothesis,
            "description": self.description,
            "threshold": self.threshold,
            "thresholds": THRESHOLDS,
            "decision": self.decision,
            "omnibus": self.omnibus.to_dict() if self.omnibus else None,
            "pairwise": [p.to_dict() for p in self.pairwise],
            "descriptives": self.descriptives,
        }


def _decide(p: float, favourable: bool, threshold: float) -> str:
    if p < threshold:
        return "confirmed" if favourable else "rejected"
    return "not_significant"


def _describe(values: np.ndarray, seed: int, n_boot: int) -> dict:
    lo, hi = bootstrap_ci(values, n_boot=n_boot, seed=seed)
    return {"n": int(len(values)), "mean": float(values.mean()), "ci95": [lo, hi]}


def _need(data: StudyData, n: int, hypothesis: str, what: str) -> None:
    if n == 0:
        raise AnalysisError(f"{hypothesis}: {what} is empty")


def _pair(label: str, x, y, threshold: float) -> PairwiseResult:
    r = wilcoxon_signed_rank(x, y)
    return PairwiseResult(label, r, threshold, r.p_two_sided < threshold)


def _between_groups(data: StudyData, values: np.ndarray, grouping: np.ndarray, hypothesis: str,
                    description: str, seed: int, n_boot: int) -> HypothesisReport:
    g1, g2 = values[grouping == 1], values[grouping == 2]
    _need(data, len(g1), hypothesis, "group 1")
    _need(data, len(g2), hypothesis, "group 2")
    res = mann_whitney(g2, g1)
    thr = THRESHOLDS[hypothesis]
    return HypothesisReport(
        hypothesis, description, thr,
        _decide(res.p_two_sided, res.z < 0, thr),
        omnibus=res,
        descriptives={"group1": _describe(g1, seed, n_boot), "group2": _describe(g2, seed + 1, n_boot)},
    )


def _within(data: StudyData, hypothesis: str, description: str, conditions: tuple[str, str, str],
            pairs: list[tuple[str, str]], decisive: list[tuple[str, str]], seed: int, n_boot: int) -> HypothesisReport:
    for c in conditions:
        if c not in data.rst:
            raise AnalysisError(f"{hypothesis}: condition {c} missing")
    sub = data.subset(data.decoy_group == 1)
    _need(sub, len(sub), hypothesis, "decoy-responsive group")
    if len(sub) < 2:
        raise AnalysisError(f"{hypothesis}: need at least 2 respondents, got {len(sub)}")
    omni = friedman(np.column_stack([sub.rst[c] for c in conditions]))
    thr = THRESHOLDS[hypothesis]
    post_thr = THRESHOLDS[f"{hypothesis}.posthoc"]
    desc = {c: _describe(sub.rst[c], seed + i, n_boot) for i, c in enumerate(conditions)}
    report = HypothesisReport(hypothesis, description, thr, "not_significant", omnibus=omni, descriptives=desc)
    if omni.p_two_sided >= thr:
        return report
    report.pairwise = [_pair(f"{a} vs {b}", sub.rst[a], sub.rst[b], post_thr) for a, b in pairs]
    keyed = {(a, b): p for (a, b), p in zip(pairs, report.pairwise)}
    outcomes = [_decide(keyed[k].result.p_two_sided, keyed[k].result.z > 0, post_thr) for k in decisive]
    if "rejected" in outcomes:
        report.decision = "rejected"
    elif all(o == "confirmed" for o in outcomes):
        report.decision = "confirmed"
    return report


def run_battery(records: Sequence[RespondentRecord] | StudyData, groups: Mapping | None = None,
                include_universal: bool = False, seed: int = 0, n_boot: int = 5000) -> list[HypothesisReport]:
    data = records if isinstance(records, StudyData) else prepare_study(records, groups or {})
    nd = data.rst[NO_DECOY]
    reports = [
        _between_groups(data, nd, data.offset_group, "H1",
                        "no-decoy RST, predicted full offsetters (group 1) vs others (group 2)", seed, n_boot),
        _between_groups(data, data.rst[COUNTRY_OPTIMAL] - nd, data.decoy_group, "H2",
                        "country-optimal minus no-decoy RST, predicted increase (group 1) vs others (group 2)",
                        seed + 10, n_boot),
        _within(data, "H3", "decoy-responsive group: country-optimal vs country-non-optimal vs no-decoy",
                (COUNTRY_OPTIMAL, COUNTRY_NON_OPTIMAL, NO_DECOY),
                [(COUNTRY_OPTIMAL, NO_DECOY), (COUNTRY_OPTIMAL, COUNTRY_NON_OPTIMAL)],
                [(COUNTRY_OPTIMAL, COUNTRY_NON_OPTIMAL)], seed + 20, n_boot),
        _within(data, "H4", "decoy-responsive group: personalized vs country-optimal vs no-decoy",
                (COUNTRY_OPTIMAL, PERSONALIZED, NO_DECOY),
                [(PERSONALIZED, NO_DECOY), (PERSONALIZED, COUNTRY_OPTIMAL)],
                [(PERSONALIZED, NO_DECOY), (PERSONALIZED, COUNTRY_OPTIMAL)], seed + 30, n_boot),
    ]
    if include_universal:
        if COUNTRY_UNIVERSAL not in data.rst:
            raise AnalysisError("universal: no country_universal choices in the data")
        sub = data.subset(data.decoy_group == 1)
        thr = THRESHOLDS["universal"]
        pairs = [_pair(f"{COUNTRY_UNIVERSAL} vs {b}", sub.rst[COUNTRY_UNIVERSAL], sub.rst[b], thr)
                 for b in (NO_DECOY, COUNTRY_OPTIMAL)]
        reports.append(HypothesisReport("universal", "decoy-responsive group: universal decoy vs no-decoy and "
                                        "country-optimal", thr, "descriptive", pairwise=pairs))
    return reports


# ---------------------------------------------------------------------------
# exploratory


@dataclass
class ExploratoryResult:
    name: str
    anova: AnovaTable | None
    factor: str
    rows: list[dict]
    columns: list[str]
    threshold: float
    results: dict[str, list[PairwiseResult]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "threshold": self.threshold,
            "anova": self.anova.to_rows() if self.anova else None,
            "factor": self.factor,
            "columns": self.columns,
            "rows": self.rows,
        }


TABLE_COLUMNS = {
    "H1.1": ["Country", "n1 (not fully offset)", "n2 (fully offset)", "U statistic", "p-value", "z-value",
             "r effect size", "Significant at α=0.01"],
    "H2.1": ["Country", "n1 (not increase)", "n2 (increase)", "U statistic", "p-value", "z-value",
             "r effect size", "Significance at α=0.01"],
    "H3.1": ["Country", "Test Type", "n", "W", "z-value", "r effect size", "p-value", "Significant (α=0.005)"],
    "H4.1": ["Country", "Test Type", "n", "W", "z-value", "r effect size", "p-value", "Significant (α=0.005)"],
    "sceptics": ["Country", "n (pairs)", "W statistic", "zstatistic", "p-value", "Effect size (r)",
                 "Significant (α=0.01)"],
}

_PAIR_LABELS = {
    (COUNTRY_OPTIMAL, NO_DECOY): "Country-optimal vs No-decoy",
    (COUNTRY_OPTIMAL, COUNTRY_NON_OPTIMAL): "Country-optimal vs Country-non-optimal",
    (PERSONALIZED, NO_DECOY): "Segment-optimal vs No-decoy",
    (PERSONALIZED, COUNTRY_OPTIMAL): "Segment-optimal vs Country-optimal",
}


def _sci(p: float) -> str:
    return f"{p:.3e}"


def _countries(data: StudyData) -> list[str]:
    return [c for c in COUNTRIES if np.any(data.country == c)]


def _mw_table(data: StudyData, values: np.ndarray, grouping: np.ndarray, name: str) -> tuple[list[dict], dict]:
    cols = TABLE_COLUMNS[name]
    thr = THRESHOLDS[name]
    rows, raw = [], {}
    for cc in _countries(data):
        m = data.country == cc
        g2, g1 = values[m & (grouping == 2)], values[m & (grouping == 1)]
        if len(g1) == 0 or len(g2) == 0:
            rows.append(dict(zip(cols, [COUNTRY_NAMES[cc], len(g2), len(g1), None, None, None, None, None])))
            raw[cc] = [PairwiseResult("group 2 vs group 1", None, thr, None, "empty group")]
            continue
        r = mann_whitney(g2, g1)
        sig = r.p_two_sided < thr
        rows.append(dict(zip(cols, [COUNTRY_NAMES[cc], len(g2), len(g1), f"{r.statistic:.1f}", _sci(r.p_two_sided),
                                    f"{r.z:.3f}", f"{r.effect_size:.3f}", str(sig)])))
        raw[cc] = [PairwiseResult("group 2 vs group 1", r, thr, sig)]
    return rows, raw


def _wilcoxon_table(data: StudyData, pairs: list[tuple[str, str]], name: str) -> tuple[list[dict], dict]:
    cols = TABLE_COLUMNS[name]
    thr = THRESHOLDS[name]
    rows, raw = [], {}
    for cc in _countries(data):
        m = data.country == cc
        raw[cc] = []
        for i, (a, b) in enumerate(pairs):
            label = _PAIR_LABELS[(a, b)]
            shown = COUNTRY_NAMES[cc] if i == 0 else ""
            if m.sum() == 0:
                continue
            pr = _pair(label, data.rst[a][m], data.rst[b][m], thr)
            r = pr.result
            rows.append(dict(zip(cols, [shown, label, int(m.sum()), f"{r.statistic:.1f}", f"{r.z:.2f}",
                                        f"{r.effect_size:.2f}", _sci(r.p_two_sided), str(pr.significant)])))
            raw[cc].append(pr)
    return rows, raw


def _long(data: StudyData, conditions: Sequence[str]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    values = np.concatenate([data.rst[c] for c in conditions])
    kind = np.concatenate([np.full(len(data), c, dtype=object) for c in conditions])
    country = np.concatenate([data.country] * len(conditions))
    return values, kind, country


def run_exploratory(records: Sequence[RespondentRecord] | StudyData, groups: Mapping | None = None,
                    n_perm: int = 1000, seed: int = 0) -> list[ExploratoryResult]:
    """Group x country and decoy-type x country ANOVAs with per-country post-hocs."""
    data = records if isinstance(records, StudyData) else prepare_study(records, groups or {})
    nd = data.rst[NO_DECOY]
    change = data.rst[COUNTRY_OPTIMAL] - nd
    out = []

    for name, values, grouping in (("H1.1", nd, data.offset_group), ("H2.1", change, data.decoy_group)):
        table = two_way_anova_type2(values, grouping.astype(str), data.country, "group", "country",
                                    n_perm=n_perm, seed=seed)
        rows, raw = _mw_table(data, values, grouping, name)
        out.append(ExploratoryResult(name, table, "group", rows, TABLE_COLUMNS[name], THRESHOLDS[name], raw))

    sub = data.subset(data.decoy_group == 1)
    specs = (
        ("H3.1", (COUNTRY_OPTIMAL, COUNTRY_NON_OPTIMAL, NO_DECOY),
         [(COUNTRY_OPTIMAL, NO_DECOY), (COUNTRY_OPTIMAL, COUNTRY_NON_OPTIMAL)]),
        ("H4.1", (COUNTRY_OPTIMAL, PERSONALIZED, NO_DECOY),
         [(PERSONALIZED, NO_DECOY), (PERSONALIZED, COUNTRY_OPTIMAL)]),
    )
    for name, conds, pairs in specs:
        if len(sub) == 0:
            raise AnalysisError(f"{name}: decoy-responsive group is empty")
        v, kind, country = _long(sub, conds)
        table = two_way_anova_type2(v, kind, country, "decoy_type", "country", n_perm=n_perm, seed=seed)
        rows, raw = _wilcoxon_table(sub, pairs, name)
        out.append(ExploratoryResult(name, table, "decoy_type", rows, TABLE_COLUMNS[name], THRESHOLDS[name], raw))

    out.append(run_sceptics(data))
    return out


def run_sceptics(data: StudyData) -> ExploratoryResult:
    """Personalized vs no-decoy among respondents who do not trust offset programmes."""
    name = "sceptics"
    cols = TABLE_COLUMNS[name]
    thr = THRESHOLDS[name]
    sub = data.subset(data.trust == "not_trusts")
    rows, raw = [], {}
    cohorts = [(cc, sub.country == cc) for cc in _countries(sub)] + [("all", np.ones(len(sub), dtype=bool))]
    for cc, m in cohorts:
        if m.sum() == 0:
            continue
        pr = _pair("Segment-optimal vs No-decoy", sub.rst[PERSONALIZED][m], sub.rst[NO_DECOY][m], thr)
        r = pr.result
        shown = COUNTRY_NAMES.get(cc, "All")
        rows.append(dict(zip(cols, [shown, int(m.sum()), f"{r.statistic:.1f}", f"{r.z:.3f}",
                                    f"{r.p_two_sided:.5f}", f"{r.effect_size:.3f}",
                                    "Yes" if pr.significant else "No"])))
        raw[cc] = [pr]
    return ExploratoryResult(name, None, "", rows, cols, thr, raw)


# ---------------------------------------------------------------------------
# reports


def _threshold_header() -> str:
    items = ", ".join(f"{k}: {v}" for k, v in THRESHOLDS.items())
    return f"Significance thresholds: {items}"


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, float) and not math.isfinite(o):
        return None
    raise TypeError(type(o))


def _dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, default=_json_default) + "\n"


def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def table_csv(result: ExploratoryResult) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=result.columns, lineterminator="\n")
    w.writeheader()
    for row in result.rows:
        w.writerow({k: ("" if v is None else v) for k, v in row.items()})
    return buf.getvalue()


def _anova_markdown(table: AnovaTable) -> list[str]:
    lines = ["| term | sum_sq | df | F | p | p (perm) | η² | partial η² |", "|---|---|---|---|---|---|---|---|"]
    for term, r in table.effects.items():
        perm = "" if r.p_permutation is None else f"{r.p_permutation:.3f}"
        lines.append(f"| {term} | {r.sum_sq:.4f} | {r.df} | {r.F:.3f} | {r.p_parametric:.3g} | {perm} | "
                     f"{r.eta_sq:.3f} | {r.partial_eta_sq:.3f} |")
    lines.append(f"| Residual | {table.residual.sum_sq:.4f} | {table.residual.df} | | | | | |")
    return lines


def summary_markdown(battery: Sequence[HypothesisReport], exploratory: Sequence[ExploratoryResult],
                     data: StudyData | None = None) -> str:
    lines = ["# Study analysis", "", _threshold_header(), ""]
    if data is not None:
        ex = data.exclusion
        lines += [f"Respondents: {ex.n_total} loaded, {ex.n_excluded} excluded by attention checks, "
                  f"{ex.n_total - ex.n_excluded} analyzed.", ""]
        for w in data.warnings:
            lines.append(f"Warning: {w}")
        if data.warnings:
            lines.append("")
    lines += ["## Hypotheses", "", "| hypothesis | test | statistic | z | p | effect | threshold | decision |",
              "|---|---|---|---|---|---|---|---|"]
    for h in battery:
        o = h.omnibus
        if o is not None:
            z = "" if o.z is None else f"{o.z:.3f}"
            lines.append(f"| {h.hypothesis} | {o.test} | {o.statistic:.3f} | {z} | {o.p_two_sided:.3g} | "
                         f"{o.effect_size:.3f} | {h.threshold} | {h.decision} |")
        for p in h.pairwise:
            r = p.result
            lines.append(f"| {h.hypothesis} | {p.label} | {r.statistic:.1f} | {r.z:.3f} | {r.p_two_sided:.3g} | "
                         f"{r.effect_size:.3f} | {p.threshold} | {'significant' if p.significant else 'ns'} |")
    for e in exploratory:
        lines += ["", f"## {e.name}", ""]
        if e.anova is not None:
            lines += _anova_markdown(e.anova) + [""]
        lines.append("| " + " | ".join(e.columns) + " |")
        lines.append("|" + "---|" * len(e.columns))
        for row in e.rows:
            lines.append("| " + " | ".join("" if row[c] is None else str(row[c]) for c in e.columns) + " |")
    return "\n".join(lines) + "\n"


def write_reports(outdir: str | Path, battery: Sequence[HypothesisReport],
                  exploratory: Sequence[ExploratoryResult], data: StudyData | None = None,
                  validation: ValidationReport | None = None) -> list[Path]:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name: str, text: str) -> None:
        p = out / name
        p.write_text(text, encoding="utf-8")
        written.append(p)

    for h in battery:
        put(f"{h.hypothesis}.json", _dumps(h.to_dict()))
    for e in exploratory:
        slug = e.name.replace(".", "_")
        put(f"{slug}.json", _dumps(e.to_dict()))
        put(f"table_{slug}.csv", table_csv(e))
        if e.anova is not None:
            buf = io.StringIO()
            rows = e.anova.to_rows()
            w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
            put(f"anova_{slug}.csv", buf.getvalue())
    if data is not None:
        put("exclusions.json", _dumps({**asdict(data.exclusion), "warnings": data.warnings}))
    if validation is not None:
        put("validation.json", _dumps(asdict(validation)))
    put("summary.md", summary_markdown(battery, exploratory, data))
    return written
