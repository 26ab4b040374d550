from .anova import AnovaRow, AnovaTable, DesignError, permutation_p, two_way_anova_type2
from .logistic import FitError, LogisticFit, average_marginal_effects, logistic_fit
from .ranktests import (
    TestResult,
    friedman,
    kendall_w,
    mann_whitney,
    mann_whitney_z,
    rank_effect_size,
    wilcoxon_signed_rank,
)
from .resampling import bootstrap_ci

__all__ = [
    "AnovaRow",
    "AnovaTable",
    "DesignError",
    "FitError",
    "LogisticFit",
    "TestResult",
    "average_marginal_effects",
    "bootstrap_ci",
    "friedman",
    "kendall_w",
    "logistic_fit",
    "mann_whitney",
    "mann_whitney_z",
    "permutation_p",
    "rank_effect_size",
    "two_way_anova_type2",
    "wilcoxon_signed_rank",
]
