"""Agreement metrics for continuous affect predictions.

Variances and covariances use the population (1/N) normalization
throughout, matching the concordance definition these metrics mirror.
"""

from __future__ import annotations

import warnings

import numpy as np


class DegenerateSeriesWarning(UserWarning):
    """Concordance is 0/0 (both series constant with equal means)."""


def _as_series(x, y) -> tuple[np.ndarray, np.ndarray]:
    xa = np.asarray(x, dtype=np.float64).ravel()
    ya = np.asarray(y, dtype=np.float64).ravel()
    if xa.size != ya.size:
        raise ValueError(f"length mismatch: {xa.size} vs {ya.size}")
    return xa, ya


def ccc(x, y) -> float:
    """Concordance correlation: 2*s_xy / (s_x^2 + s_y^2 + (mean_x - mean_y)^2).

    Pearson correlation attenuated by any scale or location mismatch; 1
    only for identical series. The fully degenerate 0/0 case (both series
    constant with equal means) is defined as 0 and warned about.
    """
    xa, ya = _as_series(x, y)
    if xa.size < 2:
        raise ValueError("need at least 2 samples")
    mx = xa.mean()
    my = ya.mean()
    vx = float(np.mean((xa - mx) ** 2))
    vy = float(np.mean((ya - my) ** 2))
    cov = float(np.mean((xa - mx) * (ya - my)))
    denom = vx + vy + (mx - my) ** 2
    if denom == 0.0:
        warnings.warn(
            "concordance undefined for two identical constant series; returning 0",
            DegenerateSeriesWarning,
            stacklevel=2,
        )
        return 0.0
    return 2.0 * cov / denom


def pearson(x, y) -> float:
    """Linear correlation s_xy / (s_x * s_y); both series must vary."""
    xa, ya = _as_series(x, y)
    if xa.size < 2:
        raise ValueError("need at least 2 samples")
    sx = float(np.std(xa))
    sy = float(np.std(ya))
    if sx == 0.0 or sy == 0.0:
        raise ValueError("pearson undefined for a constant series")
    cov = float(np.mean((xa - xa.mean()) * (ya - ya.mean())))
    return cov / (sx * sy)


def mse(x, y) -> float:
    """Mean squared difference."""
    xa, ya = _as_series(x, y)
    if xa.size < 1:
        raise ValueError("need at least 1 sample")
    return float(np.mean((xa - ya) ** 2))
