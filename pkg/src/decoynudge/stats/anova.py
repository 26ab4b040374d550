"""Two-way Type II ANOVA with eta-squared and permutation p-values.

Sums of squares come from nested least-squares fits: each main effect is
tested after the other main effect, the interaction after both. Dummy coding
is treatment coding; Type II sums of squares do not depend on it.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats as _st

from ..seeding import derive_rng

# relative slack when comparing permuted and observed F (float round-off)
_F_RTOL = 1e-10


class DesignError(ValueError):
    pass


@dataclass
class AnovaRow:
    sum_sq: float
    df: int
    F: float | None = None
    p_parametric: float | None = None
    p_permutation: float | None = None
    eta_sq: float | None = None
    partial_eta_sq: float | None = None


@dataclass
class AnovaTable:
    effects: dict[str, AnovaRow]
    residual: AnovaRow
    n_obs: int
    n_perm: int = 0
    terms: tuple[str, ...] = field(default=())

    def to_rows(self) -> list[dict]:
        rows = [{"term": name, **asdict(row)} for name, row in self.effects.items()]
        rows.append({"term": "Residual", **asdict(self.residual)})
        return rows


def _dummies(labels: np.ndarray) -> tuple[np.ndarray, list]:
    levels = sorted(set(labels.tolist()), key=str)
    cols = np.column_stack([(labels == lv).astype(float) for lv in levels[1:]]) if len(levels) > 1 else np.zeros((len(labels), 0))
    return cols, levels


@dataclass
class _Design:
    names: tuple[str, str, str]
    models: dict[str, np.ndarray]  # orthonormal bases for each nested model
    df: dict[str, int]
    df_resid: int


def _orthobasis(x: np.ndarray) -> np.ndarray:
    q, _ = np.linalg.qr(x)
    return q


def _build_design(factor_a, factor_b, name_a: str, name_b: str) -> _Design:
    a = np.asarray(factor_a, dtype=object)
    b = np.asarray(factor_b, dtype=object)
    if len(a) != len(b):
        raise DesignError("factor columns differ in length")
    da, la = _dummies(a)
    db, lb = _dummies(b)
    ta, tb = f"C({name_a})", f"C({name_b})"
    tab = f"{ta}:{tb}"
    if len(la) < 2:
        raise DesignError(f"factor {ta} needs at least 2 levels, got {len(la)}")
    if len(lb) < 2:
        raise DesignError(f"factor {tb} needs at least 2 levels, got {len(lb)}")
    n = len(a)
    one = np.ones((n, 1))
    dab = np.column_stack([da[:, i] * db[:, j] for i in range(da.shape[1]) for j in range(db.shape[1])])
    blocks = [(ta, da), (tb, db), (tab, dab)]
    x = one
    for term, block in blocks:
        x = np.column_stack([x, block])
        if np.linalg.matrix_rank(x) < x.shape[1]:
            raise DesignError(f"design is rank deficient: term {term} is aliased (empty or redundant cells)")
    if n <= x.shape[1]:
        raise DesignError("no residual degrees of freedom")
    models = {
        "A": _orthobasis(np.column_stack([one, da])),
        "B": _orthobasis(np.column_stack([one, db])),
        "AB": _orthobasis(np.column_stack([one, da, db])),
        "full": _orthobasis(x),
    }
    df = {ta: da.shape[1], tb: db.shape[1], tab: dab.shape[1]}
    return _Design((ta, tb, tab), models, df, n - x.shape[1])


def _rss(q: np.ndarray, y: np.ndarray) -> np.ndarray:
    resid = y - q @ (q.T @ y)
    return np.einsum("i...,i...->...", resid, resid)


def _sums_of_squares(design: _Design, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """SS for A, B, AB and residual; ``y`` may hold one column per permutation."""
    rss_a = _rss(design.models["A"], y)
    rss_b = _rss(design.models["B"], y)
    rss_ab = _rss(design.models["AB"], y)
    rss_full = _rss(design.models["full"], y)
    ss_a = np.maximum(rss_b - rss_ab, 0.0)
    ss_b = np.maximum(rss_a - rss_ab, 0.0)
    ss_ab = np.maximum(rss_ab - rss_full, 0.0)
    return ss_a, ss_b, ss_ab, np.maximum(rss_full, 0.0)


def _f_stats(design: _Design, ss: Sequence[np.ndarray], total_ss: float) -> list[np.ndarray]:
    *effects, resid = ss
    out = []
    for term, s in zip(design.names, effects):
        if total_ss == 0:
            out.append(np.zeros_like(s))
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            f = (s / design.df[term]) / (resid / design.df_resid)
        out.append(np.where(resid > 0, f, np.inf))
    return out


def _centered_ss(y: np.ndarray) -> float:
    return float(np.sum((y - y.mean()) ** 2))


def two_way_anova_type2(values, factor_a, factor_b, name_a: str = "a", name_b: str = "b",
                        n_perm: int = 0, seed: int = 0, add_one: bool = False) -> AnovaTable:
    """Fit ``value ~ C(a) + C(b) + C(a):C(b)`` and return the Type II table.

    eta^2 divides each effect's SS by the sum of the SS column (effects plus
    residual); partial eta^2 divides by effect SS plus residual SS. With
    ``n_perm > 0`` a permutation p-value is attached to every effect.
    """
    y = np.asarray(values, dtype=float)
    design = _build_design(factor_a, factor_b, name_a, name_b)
    if len(y) != design.models["full"].shape[0]:
        raise DesignError("values and factors differ in length")
    total = _centered_ss(y)
    ss = _sums_of_squares(design, y)
    if total == 0:
        ss = tuple(np.zeros_like(s) for s in ss)
    fs = _f_stats(design, ss, total)
    ss_sum = math.fsum(float(s) for s in ss)
    resid_ss = float(ss[3])
    effects = {}
    for term, s, f in zip(design.names, ss[:3], fs):
        s, f = float(s), float(f)
        effects[term] = AnovaRow(
            sum_sq=s,
            df=design.df[term],
            F=f,
            p_parametric=float(_st.f.sf(f, design.df[term], design.df_resid)) if total > 0 else 1.0,
            eta_sq=s / ss_sum if ss_sum > 0 else 0.0,
            partial_eta_sq=s / (s + resid_ss) if s + resid_ss > 0 else 0.0,
        )
    table = AnovaTable(effects, AnovaRow(resid_ss, design.df_resid), len(y), n_perm, design.names)
    if n_perm > 0:
        pvals = _permutation(design, y, fs, total, n_perm, seed, add_one)
        for term, p in pvals.items():
            table.effects[term].p_permutation = p
    return table


def _permutation(design: _Design, y: np.ndarray, observed: list[np.ndarray], total: float,
                 n_perm: int, seed: int, add_one: bool) -> dict[str, float]:
    n = len(y)
    exceed = np.zeros(3, dtype=np.int64)
    chunk = 250
    for start in range(0, n_perm, chunk):
        stop = min(n_perm, start + chunk)
        # one generator per permutation index keeps results independent of chunking
        ys = np.column_stack([y[derive_rng(seed, "anova-perm", i).permutation(n)] for i in range(start, stop)])
        perm_f = _f_stats(design, _sums_of_squares(design, ys), total)
        for j, (pf, of) in enumerate(zip(perm_f, observed)):
            of = float(of)
            exceed[j] += int(np.sum(pf >= of - _F_RTOL * abs(of)))
    if add_one:
        return {t: (int(e) + 1) / (n_perm + 1) for t, e in zip(design.names, exceed)}
    return {t: int(e) / n_perm for t, e in zip(design.names, exceed)}


def permutation_p(values, factor_a, factor_b, n_perm: int = 1000, seed: int = 0,
                  add_one: bool = False) -> dict[str, float]:
    """Fraction of ``n_perm`` value shuffles whose F reaches the observed F, per effect."""
    table = two_way_anova_type2(values, factor_a, factor_b, n_perm=n_perm, seed=seed, add_one=add_one)
    return {term: row.p_permutation for term, row in table.effects.items()}
