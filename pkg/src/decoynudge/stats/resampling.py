from __future__ import annotations

from typing import Callable

import numpy as np

from ..seeding import derive_rng

_CHUNK = 250


def bootstrap_ci(values, statistic: Callable = np.mean, n_boot: int = 5000, level: float = 0.95,
                 seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap interval from ``n_boot`` seeded resamples with replacement.

    ``statistic`` must accept an ``axis`` keyword (numpy reductions do).
    """
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("bootstrap needs at least one value")
    if not 0 < level < 1:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    rng = derive_rng(seed, "bootstrap")
    n = len(x)
    stats = np.empty(n_boot)
    for start in range(0, n_boot, _CHUNK):
        stop = min(n_boot, start + _CHUNK)
        idx = rng.integers(0, n, size=(stop - start, n))
        stats[start:stop] = statistic(x[idx], axis=1)
    alpha = (1 - level) / 2
    lo, hi = np.quantile(stats, [alpha, 1 - alpha])
    return float(lo), float(hi)
