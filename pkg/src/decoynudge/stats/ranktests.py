"""Rank tests with normal / chi-square approximations and rank effect sizes.

* Mann-Whitney: ``z = (U - n1 n2 / 2) / sqrt(n1 n2 (n1 + n2 + 1) / 12)``, no
  continuity or tie correction unless asked for; ``r = |z| / sqrt(n1 + n2)``.
* Wilcoxon signed rank: zero differences keep their ranks and split them
  evenly between the positive and negative sums; variance is tie corrected;
  ``r = |z| / sqrt(n)`` with ``n`` the number of pairs.
* Friedman: within-row average ranks, tie-corrected chi-square on ``k - 1``
  degrees of freedom, Kendall's ``W = chi2 / (n (k - 1))``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats as _st


@dataclass(frozen=True)
class TestResult:
    test: str
    statistic: float
    z: float | None
    p_two_sided: float
    effect_size: float
    n_values: tuple[int, ...]
    df: int | None = None
    details: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_values"] = list(self.n_values)
        return d


def rank_effect_size(z: float, n: int) -> float:
    """``|z| / sqrt(n)``."""
    return abs(z) / math.sqrt(n)


def kendall_w(chi2: float, n: int, k: int) -> float:
    return chi2 / (n * (k - 1))


def mann_whitney_z(u: float, n1: int, n2: int) -> float:
    return (u - n1 * n2 / 2.0) / math.sqrt(n1 * n2 * (n1 + n2 + 1) / 12.0)


def _two_sided(z: float) -> float:
    return float(min(1.0, 2.0 * _st.norm.sf(abs(z))))


def _tie_term(values: np.ndarray) -> int:
    """Sum of t^3 - t over groups of tied values."""
    _, counts = np.unique(values, return_counts=True)
    return int(np.sum(counts.astype(np.int64) ** 3 - counts))


def mann_whitney(x, y, tie_correction: bool = False) -> TestResult:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n1, n2 = len(x), len(y)
    if n1 < 1 or n2 < 1:
        raise ValueError("Mann-Whitney needs two non-empty samples")
    pooled = np.concatenate([x, y])
    ranks = _st.rankdata(pooled)
    u = float(ranks[:n1].sum()) - n1 * (n1 + 1) / 2.0
    mu = n1 * n2 / 2.0
    n = n1 + n2
    if tie_correction:
        var = n1 * n2 / 12.0 * ((n + 1) - _tie_term(pooled) / (n * (n - 1))) if n > 1 else 0.0
    else:
        var = n1 * n2 * (n + 1) / 12.0
    if var <= 0:
        raise ValueError("Mann-Whitney null variance is zero")
    z = (u - mu) / math.sqrt(var)
    return TestResult(
        test="mann_whitney",
        statistic=u,
        z=z,
        p_two_sided=_two_sided(z),
        effect_size=rank_effect_size(z, n),
        n_values=(n1, n2),
        details={"mu_u": mu, "sigma_u": math.sqrt(var), "tie_correction": tie_correction},
    )


def wilcoxon_signed_rank(x, y) -> TestResult:
    """Paired signed-rank test.

    ``statistic`` is ``min(R+, R-)``; ``z`` is signed, ``(R+ - n(n+1)/4) / se``,
    so swapping the inputs negates it.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise ValueError(f"paired samples differ in length ({len(x)} vs {len(y)})")
    n = len(x)
    if n < 1:
        raise ValueError("Wilcoxon test needs at least one pair")
    d = x - y
    absd = np.abs(d)
    ranks = _st.rankdata(absd)
    zero_half = float(ranks[d == 0].sum()) / 2.0
    r_plus = float(ranks[d > 0].sum()) + zero_half
    r_minus = float(ranks[d < 0].sum()) + zero_half
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - _tie_term(absd) / 48.0
    z = (r_plus - mean) / math.sqrt(var)
    return TestResult(
        test="wilcoxon_signed_rank",
        statistic=min(r_plus, r_minus),
        z=z,
        p_two_sided=_two_sided(z),
        effect_size=rank_effect_size(z, n),
        n_values=(n,),
        details={"r_plus": r_plus, "r_minus": r_minus, "n_zero": int(np.sum(d == 0))},
    )


def friedman(matrix) -> TestResult:
    """Friedman test over an ``n subjects x k conditions`` matrix."""
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2:
        raise ValueError("Friedman test needs a 2-D matrix")
    n, k = m.shape
    if n < 2 or k < 2:
        raise ValueError(f"Friedman test needs n >= 2 and k >= 2, got {m.shape}")
    ranks = _st.rankdata(m, axis=1)
    # average ranks are multiples of 1/2, so doubled rank sums are exact integers
    twice_sums = np.rint(2 * ranks.sum(axis=0)).astype(np.int64)
    ties = sum(_tie_term(row) for row in m)
    numer = (3 * int(np.sum(twice_sums**2)) - 3 * n * n * k * (k + 1) ** 2) * (k - 1)
    denom = n * k * (k * k - 1) - ties
    chi2 = numer / denom if denom else 0.0
    chi2 = max(chi2, 0.0)
    p = float(_st.chi2.sf(chi2, k - 1)) if denom else 1.0
    return TestResult(
        test="friedman",
        statistic=chi2,
        z=None,
        p_two_sided=p,
        effect_size=kendall_w(chi2, n, k),
        n_values=(n, k),
        df=k - 1,
        details={"mean_ranks": (twice_sums / (2.0 * n)).tolist()},
    )
