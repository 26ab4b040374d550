"""Acceptance suite: one summary line per criterion is printed at the end of the run."""

from __future__ import annotations

import csv
import functools
import itertools
import json
import re
import threading
import time
from collections import Counter
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from importlib import resources
from pathlib import Path

import httpx
import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from scipy import optimize

from decoynudge.agents import (
    AgentConfig,
    RemoteLLMAgent,
    ResponseCache,
    SyntheticAgent,
    SyntheticCoefficients,
    TransportError,
)
from decoynudge.cli import main
from decoynudge.decoy_space import DecoyCell, enumerate_cells
from decoynudge.personas import Segment, render_system_prompt
from decoynudge.scenarios import build_scenario, draw_situations, render_user_prompt
from decoynudge.simulation import Schedule, analyze_sweep, run_cell, run_sweep, select_country_cells
from decoynudge.stats import (
    bootstrap_ci,
    friedman,
    kendall_w,
    logistic_fit,
    mann_whitney,
    permutation_p,
    rank_effect_size,
    wilcoxon_signed_rank,
)
from decoynudge.study import (
    NO_DECOY,
    SchemaError,
    compute_rst,
    load_respondents,
    prepare_study,
    records_to_csv,
    run_battery,
    run_exploratory,
)
from decoynudge.synthetic_study import FixtureEffects, generate_respondents, synthetic_groups

from helpers import make_record, records

pytestmark = pytest.mark.acceptance

DATA = Path(str(resources.files("decoynudge") / "data"))
GRID = enumerate_cells()


# ---------------------------------------------------------------------------
# 1. impact table

REFERENCE_IMPACT = {
    ("China", "total_co2_mt"): 108.9, ("Germany", "total_co2_mt"): 19.0, ("India", "total_co2_mt"): 34.3,
    ("Singapore", "total_co2_mt"): 4.08, ("US", "total_co2_mt"): 119.7,
    ("China", "sceptic_co2_mt"): 26.1, ("Germany", "sceptic_co2_mt"): 7.4, ("India", "sceptic_co2_mt"): 4.8,
    ("Singapore", "sceptic_co2_mt"): 1.26, ("US", "sceptic_co2_mt"): 41.9,
    ("Germany", "decoy_reduction_mt"): 0.52, ("Singapore", "decoy_reduction_mt"): 0.1,
    ("US", "decoy_reduction_mt"): 1.68, ("Total", "decoy_reduction_mt"): 2.3,
}


def test_criterion1_impact_table(tmp_path, acceptance):
    start = time.perf_counter()
    out = tmp_path / "impact.csv"
    assert main(["impact", "--output", str(out)]) == 0
    elapsed = time.perf_counter() - start
    rows = {r["country"]: r for r in csv.DictReader(out.open())}
    misses = []
    for (country, col), expected in REFERENCE_IMPACT.items():
        got = float(rows[country][col])
        if abs(got - expected) > 0.05:
            misses.append(f"{country} {col} {got:.3f} vs {expected}")
    ok = not misses and elapsed < 1.0
    detail = f"{len(REFERENCE_IMPACT) - len(misses)}/{len(REFERENCE_IMPACT)} cells within 0.05 Mt, {elapsed:.2f}s"
    if misses:
        detail += "; off: " + ", ".join(misses)
    acceptance(1, ok, detail)
    assert not misses, detail
    assert elapsed < 1.0


# ---------------------------------------------------------------------------
# 2. effect-size identities

# (|z| or chi2, n, expected effect size)
Z_TUPLES = [
    (11.307, 3495, 0.187), (0.505, 3495, 0.009), (24.141, 1285, 0.673), (1.401, 1285, 0.039),
    (4.610, 1285, 0.129), (5.253, 1285, 0.147), (5.31, 1244, 0.151),
    # two-group comparisons per country
    (6.564, 713, 0.246), (4.089, 638, 0.162), (3.072, 714, 0.115), (5.776, 694, 0.219), (5.115, 729, 0.189),
    (0.687, 713, 0.026), (0.321, 638, 0.013), (0.522, 714, 0.020), (1.862, 694, 0.071), (0.167, 729, 0.006),
    # paired comparisons per country, decoy-responsive respondents
    (0.41, 167, 0.03), (7.70, 167, 0.60), (1.59, 221, 0.11), (9.65, 221, 0.65), (0.27, 321, 0.02),
    (14.70, 321, 0.82), (0.97, 231, 0.06), (7.82, 231, 0.51), (0.59, 345, 0.03), (13.01, 345, 0.70),
    (0.26, 167, 0.02), (0.28, 167, 0.02), (3.59, 221, 0.24), (2.32, 221, 0.16), (0.62, 321, 0.03),
    (0.87, 321, 0.05), (4.22, 231, 0.28), (3.40, 231, 0.22), (3.38, 345, 0.18), (3.15, 345, 0.17),
    # sceptical travellers per country
    (0.327, 206, 0.023), (4.144, 269, 0.253), (0.124, 238, 0.008), (4.268, 209, 0.295), (3.304, 322, 0.184),
]
CHI2_TUPLES = [(844.065, 1285, 3, 0.328), (70.916, 1285, 3, 0.028)]


def test_criterion2_effect_sizes(acceptance):
    start = time.perf_counter()
    worst = 0.0
    bad = []
    for z, n, r in Z_TUPLES:
        for signed in (z, -z):
            dev = abs(rank_effect_size(signed, n) - r)
            worst = max(worst, dev)
            if dev > 0.005:
                bad.append(f"z={signed}, n={n}")
    for chi2, n, k, w in CHI2_TUPLES:
        dev = abs(kendall_w(chi2, n, k) - w)
        worst = max(worst, dev)
        if dev > 0.005:
            bad.append(f"chi2={chi2}")
    elapsed = time.perf_counter() - start
    ok = not bad and elapsed < 1.0
    acceptance(2, ok, f"{len(Z_TUPLES)} r tuples and {len(CHI2_TUPLES)} W tuples, max deviation {worst:.4f}")
    assert not bad, bad
    assert elapsed < 1.0


# ---------------------------------------------------------------------------
# 3. exact enumeration oracles

def _avg_ranks(values) -> list[Fraction]:
    """Average 1-based ranks as exact fractions."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [Fraction(0)] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        for t in range(i, j + 1):
            ranks[order[t]] = Fraction(i + j + 2, 2)
        i = j + 1
    return ranks


def _mw_u2(x, y) -> int:
    """Twice the Mann-Whitney U of x, by pair counting."""
    return sum(2 if a > b else 1 if a == b else 0 for a in x for b in y)


def mw_oracle(x, y):
    u2 = _mw_u2(x, y)
    pooled = list(x) + list(y)
    n1, n12 = len(x), len(x) * len(y)
    hits = total = 0
    for idx in itertools.combinations(range(len(pooled)), n1):
        chosen = set(idx)
        xs = [pooled[i] for i in idx]
        ys = [pooled[i] for i in range(len(pooled)) if i not in chosen]
        total += 1
        hits += abs(_mw_u2(xs, ys) - n12) >= abs(u2 - n12)
    return Fraction(u2, 2), hits / total


def wilcoxon_oracle(d):
    ranks = _avg_ranks([abs(v) for v in d])
    r_plus = sum((r for r, v in zip(ranks, d) if v > 0), Fraction(0))
    r_minus = sum((r for r, v in zip(ranks, d) if v < 0), Fraction(0))
    twice = [int(2 * r) for r in ranks]
    mean2 = sum(twice)  # twice the rank total = 4 x E[R+]
    obs = abs(4 * r_plus - mean2)
    hits = 0
    for signs in itertools.product((0, 1), repeat=len(d)):
        rp2 = sum(t for t, s in zip(twice, signs) if s)
        hits += abs(2 * rp2 - mean2) >= obs
    return min(r_plus, r_minus), r_plus, hits / 2 ** len(d)


def friedman_oracle(m):
    n, k = len(m), len(m[0])
    row_ranks = [_avg_ranks(row) for row in m]
    col = [sum((r[j] for r in row_ranks), Fraction(0)) for j in range(k)]
    ties = sum(sum(t**3 - t for t in Counter(row).values()) for row in m)
    chi2 = (Fraction(12, n * k * (k + 1)) * sum(c * c for c in col) - 3 * n * (k + 1)) / (
        1 - Fraction(ties, n * (k**3 - k)))
    # the tie correction is permutation invariant, so chi2 orders like the sum of squared rank sums
    twice_rows = [[int(2 * r) for r in rr] for rr in row_ranks]
    sums = np.zeros((1, k), dtype=np.int64)
    for tr in twice_rows:
        perms = np.array(list(itertools.permutations(tr)), dtype=np.int64)
        sums = (sums[:, None, :] + perms[None, :, :]).reshape(-1, k)
    ss = np.sum(sums**2, axis=1)
    obs = sum(int(2 * c) ** 2 for c in col)
    return chi2, float(np.mean(ss >= obs))


# Documented normal/chi-square approximation error against exact p, as (max, mean) per stratum.
# Tiny samples have a coarse exact null, so the approximation can be off by up to 1 - 2*sf(1).
P_BOUNDS = {
    ("mann_whitney", "min(n1,n2)<3"): (0.70, 0.30), ("mann_whitney", "min(n1,n2)>=3"): (0.25, 0.08),
    ("wilcoxon", "n<5"): (0.70, 0.35), ("wilcoxon", "n>=5"): (0.20, 0.08),
    ("friedman", "n<4"): (0.70, 0.30), ("friedman", "n>=4"): (0.45, 0.12),
}


def test_criterion3_exact_oracles(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(31337)
    dev: dict[str, list[float]] = {k: [] for k in P_BOUNDS}
    mismatches = []
    for _ in range(80):
        n1, n2 = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        x, y = rng.integers(0, 8, n1).tolist(), rng.integers(0, 8, n2).tolist()
        u, p = mw_oracle(x, y)
        res = mann_whitney(x, y)
        if res.statistic != float(u):
            mismatches.append(("mw", x, y))
        dev[("mann_whitney", "min(n1,n2)>=3" if min(n1, n2) >= 3 else "min(n1,n2)<3")].append(abs(res.p_two_sided - p))
    for _ in range(80):
        n = int(rng.integers(1, 9))
        d = [int(v) for v in rng.choice([-5, -4, -3, -2, -1, 1, 2, 3, 4, 5], n)]
        y = rng.integers(0, 10, n)
        x = y + np.array(d)
        w, r_plus, p = wilcoxon_oracle(d)
        res = wilcoxon_signed_rank(x, y)
        if res.statistic != float(w) or res.details["r_plus"] != float(r_plus):
            mismatches.append(("wilcoxon", d))
        dev[("wilcoxon", "n>=5" if n >= 5 else "n<5")].append(abs(res.p_two_sided - p))
    made = 0
    while made < 80:
        n = int(rng.integers(2, 6))
        m = rng.integers(0, 4, (n, 3)).tolist()
        if all(len(set(row)) == 1 for row in m):
            continue
        made += 1
        chi2, p = friedman_oracle(m)
        res = friedman(m)
        if res.statistic != float(chi2):
            mismatches.append(("friedman", m))
        dev[("friedman", "n>=4" if n >= 4 else "n<4")].append(abs(res.p_two_sided - p))
    elapsed = time.perf_counter() - start
    n_inst = sum(len(v) for v in dev.values())
    within = all(max(v) <= P_BOUNDS[k][0] and np.mean(v) <= P_BOUNDS[k][1] for k, v in dev.items())
    stats_txt = ", ".join(f"{t} {s}: max|dp|={max(v):.3f} mean={np.mean(v):.3f} (bounds {P_BOUNDS[t, s]})"
                          for (t, s), v in dev.items())
    ok = not mismatches and within and n_inst >= 200 and elapsed < 60
    acceptance(3, ok, f"{n_inst} instances, {len(mismatches)} statistic mismatches, {stats_txt}, {elapsed:.1f}s")
    assert not mismatches, mismatches[:3]
    assert within, stats_txt
    assert elapsed < 60


# ---------------------------------------------------------------------------
# 4. end-to-end optimization against exact probabilities

TOP = [12, 40, 3, 27, 33]
BOTTOM = [7, 19, 44, 0, 22]


def _designed_shifts() -> dict[str, float]:
    mid = [i for i in range(45) if i not in TOP + BOTTOM]
    shift = {}
    for j, i in enumerate(TOP):
        shift[GRID[i].cell_id] = 1.6 - 0.1 * j
    for j, i in enumerate(BOTTOM):
        shift[GRID[i].cell_id] = -1.6 + 0.1 * j
    for j, i in enumerate(mid):
        shift[GRID[i].cell_id] = -0.4 + 0.8 * j / (len(mid) - 1)
    return shift


def _cents(x) -> Decimal:
    return Decimal(x).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)


def _persona(coef: SyntheticCoefficients, s: Segment) -> float:
    return (coef.trust * (s.trust == "trusts") + coef.concern * (s.concern == "concerned")
            + coef.income_above * (s.income == "above_median") + coef.age_below * (s.age == "below_median")
            + coef.woman * (s.gender == "woman"))


def exact_probabilities(coef, temperature, segment, cell, draws, shift) -> float:
    """Limit of the pipeline's estimate: expected target count over expected target + competitor count."""
    beta = coef.offset + _persona(coef, segment)
    num = den = 0.0
    for d in draws:
        sc = build_scenario(d, segment.country, cell)
        comp = _cents(sc.competitor.price)
        markup = lambda price: float((_cents(price) / comp - 1) * 100)  # noqa: E731
        u = [coef.price * markup(sc.target.price) + beta, 0.0]
        if cell is not None:
            u[0] += shift[cell.cell_id]
            u.append(coef.price * markup(sc.decoy.price) + beta * cell.offset_fraction)
        e = np.exp((np.array(u) - max(u)) / temperature)
        p = e / e.sum()
        num += p[0]
        den += p[0] + p[1] if cell is not None else 1.0
    return num / den


def test_criterion4_end_to_end_optimization(acceptance):
    start = time.perf_counter()
    shift = _designed_shifts()
    coef = SyntheticCoefficients(cell_shift=shift)
    config = AgentConfig(temperature=0.8)
    segments = [Segment(cc, g, a, "below_median", c, "not_trusts") for cc in ("SG", "DE")
                for g, a, c in [("man", "above_median", "concerned"), ("woman", "below_median", "not_concerned"),
                                ("man", "below_median", "not_concerned"), ("woman", "above_median", "concerned")]]
    draws = draw_situations(2024, 30)

    exact_base = {s: exact_probabilities(coef, 0.8, s, None, draws, shift) for s in segments}
    exact_cell = {s: {c: exact_probabilities(coef, 0.8, s, c, draws, shift) for c in GRID} for s in segments}
    exact_delta = {cc: {c: np.mean([exact_cell[s][c] - exact_base[s] for s in segments if s.country == cc])
                        for c in GRID} for cc in ("SG", "DE")}

    result = run_sweep(segments, GRID, draws, SyntheticAgent(config, coef), 2024, schedule=Schedule(30, 4, 25))
    assert all(t.total == 3000 for t in result.tallies.values())
    analysis = analyze_sweep(result, k=5)

    errors = [abs(analysis.baseline[s].probability - exact_base[s]) for s in segments]
    errors += [abs(analysis.per_cell[s][c].probability - exact_cell[s][c]) for s in segments for c in GRID]
    share = float(np.mean(np.array(errors) <= 0.03))

    selection_ok = True
    for cc in ("SG", "DE"):
        ranked = sorted(GRID, key=lambda c: -exact_delta[cc][c])
        vals = [exact_delta[cc][c] for c in ranked]
        # design precondition: top-5 and bottom-5 separated from the rest by at least 0.05
        assert vals[4] - vals[5] >= 0.05 and vals[39] - vals[40] >= 0.05
        got = analysis.country_selection[cc]
        exact_sel = select_country_cells({c: type(e)(c, exact_delta[cc][c]) for c, e in
                                          analysis.country_effects[cc].items()}, 5, GRID)
        selection_ok &= set(got.optimal) == set(ranked[:5]) == set(exact_sel.optimal)
        selection_ok &= set(got.non_optimal) == set(ranked[-5:]) == set(exact_sel.non_optimal)
    elapsed = time.perf_counter() - start
    ok = share >= 0.95 and selection_ok and elapsed < 300
    acceptance(4, ok, f"{share:.1%} of {len(errors)} probabilities within 0.03 (max error {max(errors):.4f}), "
                      f"selection {'exact' if selection_ok else 'WRONG'}, {elapsed:.0f}s")
    assert share >= 0.95
    assert selection_ok
    assert elapsed < 300


# ---------------------------------------------------------------------------
# 5. determinism

def test_criterion5_determinism(tmp_path, acceptance):
    segs = ["cn_man_age_hi_inc_lo_concern_notrust", "de_woman_age_lo_inc_hi_noconcern_trust",
            "in_man_age_lo_inc_lo_concern_trust", "sg_woman_age_hi_inc_hi_noconcern_notrust",
            "us_man_age_hi_inc_hi_concern_trust"]
    dirs = {}
    for ceiling in (1, 8):
        out = tmp_path / f"sim{ceiling}"
        assert main(["simulate", "--seed", "99", "--output", str(out), "--max-concurrency", str(ceiling),
                     "--segments", *segs]) == 0
        dirs[ceiling] = out
    names = sorted(p.name for p in dirs[1].iterdir())
    sweep_same = names == sorted(p.name for p in dirs[8].iterdir()) and all(
        (dirs[1] / n).read_bytes() == (dirs[8] / n).read_bytes() for n in names)
    manifest = json.loads((dirs[1] / "manifest.json").read_text())
    assert manifest["calls_per_situation"] == 3000 and manifest["n_cells"] == 45

    reports = []
    for i in range(2):
        out = tmp_path / f"analysis{i}"
        assert main(["analyze", "--respondents", str(DATA / "sample_respondents.csv"),
                     "--groups", str(DATA / "sample_predicted_groups.csv"), "--output", str(out), "--seed", "5",
                     "--n-perm", "1000", "--n-boot", "5000"]) == 0
        reports.append({p.name: p.read_bytes() for p in out.iterdir()})
    analysis_same = reports[0] == reports[1]

    rng = np.random.default_rng(0)
    v = rng.normal(size=120)
    a, b = np.repeat(["x", "y", "z"], 40), np.tile(["p", "q"], 60)
    perm_same = permutation_p(v, a, b, n_perm=1000, seed=3) == permutation_p(v, a, b, n_perm=1000, seed=3)
    boot_same = bootstrap_ci(v, n_boot=5000, seed=3) == bootstrap_ci(v, n_boot=5000, seed=3)

    ok = sweep_same and analysis_same and perm_same and boot_same
    acceptance(5, ok, f"sweep artifacts ({len(names)} files, 5 segments x 46 situations x 3000 calls) "
                      f"{'identical' if sweep_same else 'DIFFER'} at ceilings 1 and 8; permutation and bootstrap "
                      f"reports {'identical' if analysis_same and perm_same and boot_same else 'DIFFER'}")
    assert ok


# ---------------------------------------------------------------------------
# 6. RST and exclusion contract

_c6 = {"runs": 0, "failures": 0}


def _track(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            fn(*args, **kwargs)
        except Exception:
            _c6["failures"] += 1
            raise
        finally:
            _c6["runs"] += 1
    return wrapper


SETTINGS = settings(max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@SETTINGS
@given(records())
@_track
def test_criterion6_rst_bounds(recs):
    for r in recs:
        for cond in r.choices:
            assert 0.0 <= compute_rst(r, cond).value <= 1.0


@SETTINGS
@given(st.integers(1, 12))
@_track
def test_criterion6_all_decoy_is_zero(n):
    rec = make_record("a", country_optimal=["decoy"] * n, personalized=["decoy"] * n)
    assert compute_rst(rec, "country_optimal").value == 0.0
    assert compute_rst(rec, "personalized").value == 0.0


@SETTINGS
@given(records(), st.data())
@_track
def test_criterion6_decoy_under_no_decoy_rejected(recs, data):
    lines = records_to_csv(recs).splitlines()
    victim = data.draw(st.sampled_from(recs))
    seg = victim.segment
    bad = ",".join([victim.respondent_id, seg.country, seg.gender, seg.age, seg.income, seg.concern, seg.trust,
                    NO_DECOY, "99", "decoy", "short"])
    pos = data.draw(st.integers(1, len(lines)))
    text = "\n".join(lines[:pos] + [bad] + lines[pos:]) + "\n"
    with pytest.raises(SchemaError) as info:
        load_respondents(text)
    assert len(info.value.problems) == 1
    kept, report = load_respondents(text, strict=False)
    assert len(report.rejected_rows) == 1
    assert all("decoy" not in r.choices.get(NO_DECOY, []) for r in kept)


@settings(max_examples=12, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 10**6), st.floats(0.1, 0.6))
@_track
def test_criterion6_attention_failures_excluded(seed, fail_rate):
    groups = synthetic_groups(seed)
    recs = generate_respondents(groups, n_per_country=40, seed=seed,
                                effects=FixtureEffects(attention_fail_rate=fail_rate))
    passed = [r for r in recs if all(c == "dominant" for c in r.controls.values())]
    failed = {r.respondent_id for r in recs} - {r.respondent_id for r in passed}
    data = prepare_study(recs, groups)
    assert set(data.exclusion.excluded_ids) == failed and not failed & set(data.ids)
    g1 = sum(groups[r.segment.key]["decoy_group"] == 1 for r in passed)
    o1 = sum(groups[r.segment.key]["offset_group"] == 1 for r in passed)
    if not (0 < g1 < len(passed) and 0 < o1 < len(passed)):
        return
    battery = {h.hypothesis: h for h in run_battery(data, n_boot=20)}
    assert sum(battery["H1"].omnibus.n_values) == len(passed)
    assert sum(battery["H2"].omnibus.n_values) == len(passed)
    assert battery["H3"].omnibus.n_values[0] == g1
    cells = {(r.segment.country, f, groups[r.segment.key][f]) for r in passed for f in ("decoy_group", "offset_group")}
    if len(cells) < 20:
        return
    for e in run_exploratory(data, n_perm=5):
        if e.name == "sceptics":
            assert e.rows[-1]["n (pairs)"] == sum(r.segment.trust == "not_trusts" for r in passed)
        elif e.name in ("H1.1", "H2.1"):
            assert sum(r[e.columns[1]] + r[e.columns[2]] for r in e.rows) == len(passed)
        else:
            assert sum(r["n"] for r in e.rows) == 2 * g1


def test_criterion6_summary(acceptance):
    ok = _c6["runs"] > 0 and _c6["failures"] == 0
    acceptance(6, ok, f"{_c6['runs']} generated cases, {_c6['failures']} failing")
    assert ok


# ---------------------------------------------------------------------------
# 7. substitutes for the human-data statistics

EXPECTED_HEADERS = {
    "H1_1": "Country,n1 (not fully offset),n2 (fully offset),U statistic,p-value,z-value,r effect size,"
            "Significant at α=0.01",
    "H2_1": "Country,n1 (not increase),n2 (increase),U statistic,p-value,z-value,r effect size,"
            "Significance at α=0.01",
    "H3_1": "Country,Test Type,n,W,z-value,r effect size,p-value,Significant (α=0.005)",
    "H4_1": "Country,Test Type,n,W,z-value,r effect size,p-value,Significant (α=0.005)",
    "sceptics": "Country,n (pairs),W statistic,zstatistic,p-value,Effect size (r),Significant (α=0.01)",
}


def test_criterion7_reports_on_fixture(tmp_path, acceptance):
    out = tmp_path / "rep"
    assert main(["analyze", "--respondents", str(DATA / "sample_respondents.csv"),
                 "--groups", str(DATA / "sample_predicted_groups.csv"), "--output", str(out),
                 "--n-perm", "200", "--n-boot", "500"]) == 0
    headers_ok = all((out / f"table_{k}.csv").read_text(encoding="utf-8").splitlines()[0] == v
                     for k, v in EXPECTED_HEADERS.items())
    decisions = {h: json.loads((out / f"{h}.json").read_text())["decision"] for h in ("H1", "H2", "H3", "H4")}
    populated = all(d in ("confirmed", "rejected", "not_significant") for d in decisions.values())
    rows = {k: list(csv.DictReader((out / f"table_{k}.csv").open(encoding="utf-8"))) for k in EXPECTED_HEADERS}
    shape_ok = (len(rows["H1_1"]) == len(rows["H2_1"]) == 5 and len(rows["H3_1"]) == len(rows["H4_1"]) == 10
                and [r["Country"] for r in rows["H3_1"]][::2] == ["China", "Germany", "India", "Singapore", "US"])
    ok = headers_ok and populated and shape_ok
    acceptance(7, ok, "battery and exploratory reports on the bundled fixture, columns "
                      f"{'match' if headers_ok else 'DIFFER'}, decisions {decisions}")
    assert ok


def _spector():
    sm = pytest.importorskip("statsmodels.api")
    df = sm.datasets.spector.load_pandas().data
    return df[["GPA", "TUCE", "PSI"]].to_numpy(float), df["GRADE"].to_numpy(float), sm


def test_criterion7_logistic_benchmark(acceptance):
    X, y, sm = _spector()
    fit = logistic_fit(X, y, names=["GPA", "TUCE", "PSI"])
    Xc = np.column_stack([np.ones(len(y)), X])

    def nll(b):
        eta = Xc @ b
        return float(np.sum(np.logaddexp(0, eta) - y * eta))

    def grad(b):
        return Xc.T @ (1 / (1 + np.exp(-(Xc @ b))) - y)

    def hess(b):
        p = 1 / (1 + np.exp(-(Xc @ b)))
        return Xc.T @ (Xc * (p * (1 - p))[:, None])

    opt = optimize.minimize(nll, np.zeros(4), jac=grad, hess=hess, method="trust-exact",
                            options={"gtol": 1e-13})
    ref = sm.Logit(y, Xc).fit(disp=0, method="newton", tol=1e-14, maxiter=200)
    reference = np.array([-13.0213, 2.8261, 0.0952, 2.3787])
    d_scipy = float(np.max(np.abs(fit.coef - opt.x)))
    d_sm = float(np.max(np.abs(fit.coef - ref.params)))
    d_se = float(np.max(np.abs(fit.se - ref.bse)))
    ok = d_scipy <= 1e-6 and d_sm <= 1e-6 and np.allclose(fit.coef, reference, atol=5e-5) and fit.converged
    acceptance(7, ok, f"logistic benchmark max|coef diff| {d_scipy:.1e} vs scipy optimizer, {d_sm:.1e} vs "
                      f"statsmodels (SE {d_se:.1e})")
    assert ok


# ---------------------------------------------------------------------------
# 8. remote protocol against a stub

_OPTION = re.compile(r"(\d)\. Pay [\d.]+ [A-Z]{3} and (fully offset|not offset|offset \d+%) emissions")
_KIND = {"fully offset": "target", "not offset": "competitor"}
_FORMATS = ("{}", "Option {}.", "I would choose option {}", "{}.")


class StubEndpoint:
    """Chat endpoint that picks a role per request and answers with that role's position."""

    def __init__(self, fail_every: int = 0, garble_every: int = 0, always_fail: bool = False):
        self.fail_every, self.garble_every, self.always_fail = fail_every, garble_every, always_fail
        self.requests = 0
        self.failures = 0
        self.intended = Counter()
        self.lock = threading.Lock()

    def __call__(self, request: httpx.Request) -> httpx.Response:
        with self.lock:
            self.requests += 1
            n = self.requests
        if self.always_fail or (self.fail_every and n % self.fail_every == 0):
            with self.lock:
                self.failures += 1
            if n % 2:
                raise httpx.ConnectError("connection reset", request=request)
            return httpx.Response(503)
        body = json.loads(request.content)
        assert [m["role"] for m in body["messages"]] == ["system", "user"]
        if self.garble_every and n % self.garble_every == 0:
            return self._reply("let me think about it")
        options = _OPTION.findall(body["messages"][1]["content"])
        roles = [_KIND.get(kind, "decoy") for _, kind in options]
        # adversarial: the wanted role cycles independently of the presented order
        wanted = ("decoy", "competitor", "target")[n % 3] if len(roles) == 3 else ("competitor", "target")[n % 2]
        with self.lock:
            self.intended[wanted] += 1
        return self._reply(_FORMATS[n % 4].format(roles.index(wanted) + 1))

    @staticmethod
    def _reply(text: str) -> httpx.Response:
        return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": text}}]})


def _remote(stub, cache=None, max_retries=3):
    config = AgentConfig(backend="remote_llm", max_retries=max_retries, max_concurrency=8, retry_backoff=0.0)
    return RemoteLLMAgent(config, base_url="http://stub/v1", api_key="test", cache=cache,
                          transport=httpx.MockTransport(stub), sleep=lambda s: None)


SEG8 = Segment("US", "woman", "below_median", "above_median", "not_concerned", "trusts")


def test_criterion8_protocol(acceptance):
    start = time.perf_counter()
    draws = draw_situations(8, 30)
    checks = {}

    # exactly 3000 requests per situation, each mapped back through its order
    for cell in (None, DecoyCell(0.3, 0.7), DecoyCell(-0.2, 0.4)):
        stub = StubEndpoint()
        cache = ResponseCache()
        agent = _remote(stub, cache)
        tally = run_cell(SEG8, cell, draws, agent, 8, max_workers=8)
        name = "baseline" if cell is None else cell.cell_id
        checks[f"{name} requests"] = stub.requests == 3000 and tally.total == 3000
        checks[f"{name} mapping"] = (tally.n_target, tally.n_competitor, tally.n_decoy) == (
            stub.intended["target"], stub.intended["competitor"], stub.intended["decoy"])
        checks[f"{name} distinct keys"] = len(cache) == 3000
        before = stub.requests
        again = run_cell(SEG8, cell, draws, agent, 8, max_workers=8)
        checks[f"{name} cache"] = stub.requests == before and again == tally

    # every presentation order, every wanted role
    scen = build_scenario(draws[0], "US", DecoyCell(0.1, 0.8))
    system = render_system_prompt(SEG8)
    order_ok = True
    for order in itertools.permutations(("target", "competitor", "decoy")):
        for role in order:
            agent = _remote(lambda r, pos=order.index(role) + 1: StubEndpoint._reply(f"Option {pos}"))
            order_ok &= agent.choose(system, render_user_prompt(scen, order), 3, order, 0).choice == role
    checks["all orders"] = order_ok

    # transient failures and unparseable replies are retried within the budget
    stub = StubEndpoint(fail_every=5, garble_every=11)
    tally = run_cell(SEG8, DecoyCell(0.2, 0.9), draws, _remote(stub), 8, max_workers=8)
    checks["retries"] = (tally.total == 3000 and tally.n_invalid == 0 and stub.failures > 0
                         and stub.requests > 3000 + stub.failures)
    checks["retry mapping"] = (tally.n_target, tally.n_competitor, tally.n_decoy) == (
        stub.intended["target"], stub.intended["competitor"], stub.intended["decoy"])
    dead = StubEndpoint(always_fail=True)
    with pytest.raises(TransportError):
        run_cell(SEG8, None, draws[:1], _remote(dead, max_retries=2), 8, n_orders=1, repetitions=1)
    checks["budget"] = dead.requests == 3

    elapsed = time.perf_counter() - start
    failed = [k for k, v in checks.items() if not v]
    ok = not failed and elapsed < 60
    acceptance(8, ok, f"{len(checks) - len(failed)}/{len(checks)} protocol checks"
                      + (f", failed: {failed}" if failed else "") + f", {elapsed:.1f}s")
    assert not failed, failed
    assert elapsed < 60
