"""Small statistics toolkit: ECDF, median, sign test, Spearman correlation,
stratified bootstrap and log-log OLS."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import comb
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class Ecdf:
    values: np.ndarray

    def __call__(self, x):
        """Fraction of samples ``<= x`` (right-continuous step function)."""
        return np.searchsorted(self.values, x, side="right") / len(self.values)

    def steps(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct sample values and the ECDF level reached at each."""
        xs = np.unique(self.values)
        return xs, self(xs)


def ecdf(samples) -> Ecdf:
    x = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    if x.size == 0:
        raise ValueError("ecdf of an empty sample")
    return Ecdf(x)


def median(samples) -> float:
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("median of an empty sample")
    return float(np.median(x))


def sign_test_one_sided(n_positive: int, n_total: int) -> float:
    """``P[X >= n_positive]`` for ``X ~ Binomial(n_total, 1/2)``, exact."""
    if not 0 <= n_positive <= n_total:
        raise ValueError("need 0 <= n_positive <= n_total")
    tail = sum(comb(n_total, k) for k in range(n_positive, n_total + 1))
    return float(Fraction(tail, 2**n_total))


def spearman_rho(x, y) -> float:
    """Pearson correlation of average ranks."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("spearman_rho needs two 1-d samples of equal length")
    if len(x) < 2:
        raise ValueError("spearman_rho needs at least two points")
    rx, ry = rankdata(x), rankdata(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx**2).sum() * (ry**2).sum())
    if denom == 0:
        return float("nan")
    return float((rx * ry).sum() / denom)


@dataclass(frozen=True)
class BootstrapResult:
    estimate: np.ndarray
    se: np.ndarray
    ci95: tuple[np.ndarray, np.ndarray]
    replicates: np.ndarray


def stratified_bootstrap(
    groups: Sequence[Sequence[float]],
    statistic: Callable[[list[np.ndarray]], np.ndarray | float],
    resamples: int = 1000,
    seed: int | np.random.Generator = 0,
) -> BootstrapResult:
    """Resample with replacement within each stratum and recompute ``statistic``.

    ``statistic`` receives the list of resampled strata.  Returns the
    replicate standard deviation and the 2.5/97.5 percentile interval.
    """
    if resamples < 100:
        raise ValueError("use at least 100 resamples")
    strata = [np.asarray(g, dtype=np.float64) for g in groups]
    if any(g.size == 0 for g in strata):
        raise ValueError("empty stratum")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    est = np.asarray(statistic(strata), dtype=np.float64)
    reps = np.empty((resamples,) + est.shape)
    for b in range(resamples):
        reps[b] = statistic([g[rng.integers(0, g.size, g.size)] for g in strata])
    lo, hi = np.percentile(reps, [2.5, 97.5], axis=0)
    return BootstrapResult(est, reps.std(axis=0, ddof=1), (lo, hi), reps)


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    r_squared: float


def ols_line(x, y) -> LineFit:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.size < 2:
        raise ValueError("need at least two points")
    xm, ym = x.mean(), y.mean()
    sxx = ((x - xm) ** 2).sum()
    slope = ((x - xm) * (y - ym)).sum() / sxx
    intercept = ym - slope * xm
    ss_res = ((y - (intercept + slope * x)) ** 2).sum()
    ss_tot = ((y - ym) ** 2).sum()
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return LineFit(float(slope), float(intercept), float(r2))


def loglog_fit(n, values) -> LineFit:
    """OLS on ``(log n, log values)``."""
    v = np.asarray(values, dtype=np.float64)
    if (v <= 0).any():
        raise ValueError("log-log fit needs positive values")
    return ols_line(np.log(np.asarray(n, dtype=np.float64)), np.log(v))
