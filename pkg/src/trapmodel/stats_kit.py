"""Monte Carlo summaries, KS distances, empirical transforms and bootstrap intervals."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy import stats

from .errors import InputError, ParameterError

log = logging.getLogger(__name__)


@dataclass
class StatsSummary:
    """Estimate with standard error and a confidence interval at ``level``."""

    estimate: float
    std_error: float
    ci_low: float
    ci_high: float
    n_samples: int
    method: str
    level: float = 0.95
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.std_error < 0:
            raise ParameterError("std_error must be nonnegative")
        # percentile intervals can miss a skewed point estimate; widen to keep ci_low <= est <= ci_high
        self.ci_low = min(self.ci_low, self.estimate)
        self.ci_high = max(self.ci_high, self.estimate)

    def within(self, target: float, n_se: float) -> bool:
        return abs(self.estimate - target) <= n_se * self.std_error

    def as_row(self) -> dict:
        row = {"estimate": self.estimate, "std_error": self.std_error, "ci_low": self.ci_low,
               "ci_high": self.ci_high, "n_samples": self.n_samples, "method": self.method,
               "level": self.level}
        row.update(self.extras)
        return row


def _nonempty(x, name="sample") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise InputError(f"{name} is empty")
    return x


def stable_sort(x: np.ndarray) -> np.ndarray:
    return np.sort(x, kind="stable")


def mean_summary(values, method: str = "mean", level: float = 0.95) -> StatsSummary:
    """Sample mean with normal-theory interval."""
    v = _nonempty(values)
    n = v.size
    est = float(v.mean())
    se = float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    z = stats.norm.ppf(0.5 + level / 2)
    return StatsSummary(est, se, est - z * se, est + z * se, n, method, level)


def proportion_summary(hits, method: str = "proportion", level: float = 0.95) -> StatsSummary:
    """Binomial proportion with a Wilson interval."""
    h = np.asarray(hits, dtype=bool)
    if h.size == 0:
        raise InputError("sample is empty")
    n = h.size
    p = float(h.mean())
    se = math.sqrt(p * (1 - p) / n)
    z = stats.norm.ppf(0.5 + level / 2)
    centre = (p + z * z / (2 * n)) / (1 + z * z / n)
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / (1 + z * z / n)
    return StatsSummary(p, se, centre - half, centre + half, n, method, level)


def ks_statistic(sample_a, reference: Union[np.ndarray, Callable, list]) -> float:
    """Sup distance between the ECDF of ``sample_a`` and a sample or a CDF."""
    a = stable_sort(_nonempty(sample_a, "sample_a"))
    n = a.size
    if callable(reference):
        cdf = np.asarray(reference(a), dtype=float)
        upper = np.arange(1, n + 1) / n - cdf
        lower = cdf - np.arange(0, n) / n
        return float(max(upper.max(), lower.max(), 0.0))
    b = stable_sort(_nonempty(reference, "reference"))
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / n
    fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_critical(n_a: int, n_b: Optional[int] = None, level: float = 0.99) -> float:
    """Asymptotic Kolmogorov critical value for the one- or two-sample statistic."""
    k = stats.kstwobign.ppf(level)
    n_eff = n_a if n_b is None else n_a * n_b / (n_a + n_b)
    return float(k / math.sqrt(n_eff))


def bootstrap_ci(sample, statistic: Callable[[np.ndarray], float], level: float = 0.95,
                 resamples: int = 1000, rng: Optional[np.random.Generator] = None,
                 method: str = "bootstrap") -> StatsSummary:
    """Percentile bootstrap interval; deterministic for a fixed generator state."""
    x = np.asarray(sample)
    if x.shape[0] == 0:
        raise InputError("sample is empty")
    if resamples < 100:
        raise ParameterError("bootstrap needs at least 100 resamples")
    if rng is None:
        rng = np.random.default_rng(0)
    n = x.shape[0]
    est = float(statistic(x))
    reps = np.empty(resamples)
    for b in range(resamples):
        reps[b] = statistic(x[rng.integers(0, n, size=n)])
    lo, hi = np.quantile(reps, [0.5 - level / 2, 0.5 + level / 2])
    se = float(reps.std(ddof=1))
    return StatsSummary(est, se, float(lo), float(hi), n, method, level)


def _transform_summary(values, level, rng, resamples, method):
    v = _nonempty(values)
    if np.ptp(v) == 0.0:
        c = float(v[0])
        return StatsSummary(c, 0.0, c, c, v.size, method, level)
    base = mean_summary(v, method, level)
    if rng is None:
        return base
    boot = bootstrap_ci(v, np.mean, level, resamples, rng, method)
    return StatsSummary(base.estimate, base.std_error, boot.ci_low, boot.ci_high, v.size, method, level)


def empirical_laplace(sample, lam: float, level: float = 0.95,
                      rng: Optional[np.random.Generator] = None, resamples: int = 200) -> StatsSummary:
    """Mean of exp(-lam x). Pass ``rng`` for a bootstrap interval instead of a normal one."""
    if lam < 0:
        raise ParameterError("lambda must be nonnegative")
    x = _nonempty(sample)
    return _transform_summary(np.exp(-lam * x), level, rng, resamples, "laplace")


def empirical_charfn(sample, xi, level: float = 0.95, rng: Optional[np.random.Generator] = None,
                     resamples: int = 200, imag_tol_se: float = 6.0) -> StatsSummary:
    """Real part of the empirical characteristic function at ``xi``.

    The laws in scope are symmetric, so only cos(xi . x) is reported; the
    imaginary part and the modulus are kept in ``extras`` and a warning is
    logged when the imaginary part sits far from zero.
    """
    x = np.asarray(sample, dtype=float)
    if x.size == 0:
        raise InputError("sample is empty")
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[1] != xi.shape[0]:
        raise ParameterError("xi dimension does not match the sample")
    phase = x @ xi
    re = np.cos(phase)
    im = np.sin(phase)
    out = _transform_summary(re, level, rng, resamples, "charfn")
    im_mean = float(im.mean())
    im_se = float(im.std(ddof=1) / math.sqrt(im.size)) if im.size > 1 else 0.0
    if im_se > 0 and abs(im_mean) > imag_tol_se * im_se:
        log.warning("imaginary part %.3g is %.1f standard errors from zero", im_mean, abs(im_mean) / im_se)
    out.extras = {"imag": im_mean, "imag_se": im_se, "modulus": float(math.hypot(out.estimate, im_mean))}
    return out


def ecdf(sample):
    """Sorted values and ECDF heights, for plotting."""
    x = stable_sort(_nonempty(sample))
    return x, np.arange(1, x.size + 1) / x.size


def loglog_slope(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])
