"""
Diagnostics for the noise in an estimated log-target.

Draws W* are collected at a fixed anchor point. From them: the variance against
the number of particles m, QQ data against a Gaussian, and two empirical
moment-generating-function curves. With L = log pi(x) and L_hat = L + W*,

    M1(t) = mean exp(t (L_hat + shift))
    M2(t) = M1(t) / mean exp((t + 1) W*)

If the noise is independent of L, M2 estimates the shifted MGF of L whatever
the noise law, so M2 curves for different m should coincide.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats
from scipy.special import logsumexp

from noise_models import recentre_log_weights

logger = logging.getLogger(__name__)

MIN_NOISE_SAMPLES = 100
DEFAULT_BOOTSTRAP_RESAMPLES = 200
# exp() overflows a double just past 709.78
_LOG_MAX_FLOAT = math.log(np.finfo(float).max)


class NoiseDiagnosticsError(ValueError):
    """Raised for diagnostics on unusable noise samples."""


class MGFOverflowError(NoiseDiagnosticsError):
    """An empirical MGF left the floating-point range at grid point t."""

    def __init__(self, t: float, what: str):
        super().__init__(f"{what} overflows at t={t:g}; narrow the t grid or adjust the shift")
        self.t = t


@dataclass(frozen=True, eq=False)
class NoiseSample:
    """
    Draws of W* at an anchor point.

    When recentred, the sample mean of exp(w*) is 1 and the draws stand in for
    W* without knowing the exact log-target.
    """

    w_star_draws: np.ndarray
    m: Optional[int] = None
    anchor_point: Optional[np.ndarray] = field(default=None, repr=False)
    recentred: bool = True
    log_target_draws: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        draws = np.asarray(self.w_star_draws, dtype=float)
        if draws.ndim != 1 or draws.size == 0:
            raise NoiseDiagnosticsError("noise sample needs a non-empty 1-D array of draws")
        if not np.all(np.isfinite(draws)):
            raise NoiseDiagnosticsError("noise sample contains non-finite draws")
        object.__setattr__(self, "w_star_draws", draws)

    def __len__(self) -> int:
        return self.w_star_draws.size

    @property
    def variance(self) -> float:
        return float(np.var(self.w_star_draws, ddof=1))

    @property
    def skewness(self) -> float:
        return float(stats.skew(self.w_star_draws))

    @classmethod
    def from_draws(cls, draws, m: Optional[int] = None, recentre: bool = True) -> "NoiseSample":
        draws = np.asarray(draws, dtype=float)
        return cls(recentre_log_weights(draws) if recentre else draws, m=m, recentred=recentre)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"w_star": self.w_star_draws})


def collect_noise_sample(
    estimator,
    anchor,
    exact_log_target_at_anchor: Optional[float] = None,
    n: int = 1000,
    rng: Optional[np.random.Generator] = None,
    m: Optional[int] = None,
) -> NoiseSample:
    """
    n fresh estimator evaluations at a fixed anchor.

    With the exact log-target the draws are exact W* values; otherwise they are
    recentred so the sample mean of exp(w*) is 1.
    """
    if n < MIN_NOISE_SAMPLES:
        raise NoiseDiagnosticsError(f"need n >= {MIN_NOISE_SAMPLES} evaluations, got {n}")
    rng = rng if rng is not None else np.random.default_rng()
    anchor = np.asarray(anchor, dtype=float)

    estimates = np.array([estimator.evaluate(anchor, rng)[0] for _ in range(n)], dtype=float)
    if not np.all(np.isfinite(estimates)):
        bad = int(np.sum(~np.isfinite(estimates)))
        raise NoiseDiagnosticsError(f"{bad} of {n} estimates at the anchor were not finite")

    if exact_log_target_at_anchor is not None:
        draws = estimates - exact_log_target_at_anchor
        recentred = False
    else:
        draws = recentre_log_weights(estimates)
        recentred = True
    logger.debug("collected %d noise draws, variance %.4g", n, float(np.var(draws)))
    return NoiseSample(
        draws,
        m=m,
        anchor_point=anchor,
        recentred=recentred,
        log_target_draws=estimates,
    )


def variance_vs_m_slope(samples: Sequence[NoiseSample]) -> tuple[float, float]:
    """Least-squares fit log Var[W*] = slope * log m + intercept."""
    ms = [s.m for s in samples]
    if any(m is None for m in ms):
        raise NoiseDiagnosticsError("every noise sample needs its particle count m")
    if len(set(ms)) < 3:
        raise NoiseDiagnosticsError(f"need at least 3 distinct m values, got {sorted(set(ms))}")
    log_m = np.log(np.asarray(ms, dtype=float))
    log_var = np.log([s.variance for s in samples])
    slope, intercept = np.polyfit(log_m, log_var, 1)
    return float(slope), float(intercept)


def default_t_grid(n_points: int = 21, half_width: float = 1.0) -> np.ndarray:
    return np.linspace(-half_width, half_width, n_points)


@dataclass(frozen=True, eq=False)
class MGFCurves:
    t_grid: np.ndarray
    m1: np.ndarray
    m2: np.ndarray
    shift: float = 0.0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t": self.t_grid, "m1": self.m1, "m2": self.m2})


def _log_mean_exp(values: np.ndarray) -> float:
    return float(logsumexp(values) - math.log(values.size))


def _mgf_logs(
    l_hat: np.ndarray,
    w_star: np.ndarray,
    t_grid: np.ndarray,
    shift: float,
) -> tuple[np.ndarray, np.ndarray]:
    log_m1 = np.array([_log_mean_exp(t * (l_hat + shift)) for t in t_grid])
    log_noise = np.array([_log_mean_exp((t + 1.0) * w_star) for t in t_grid])
    return log_m1, log_m1 - log_noise


def mgf_curves(
    l_hat_draws,
    noise: NoiseSample,
    t_grid=None,
    shift: float = 0.0,
) -> MGFCurves:
    """
    M1 and M2 on the t grid.

    Averages are formed in the log domain; a curve value outside the double
    range raises MGFOverflowError naming the first offending t.
    """
    l_hat = np.asarray(l_hat_draws, dtype=float)
    if l_hat.size == 0 or not np.all(np.isfinite(l_hat)):
        raise NoiseDiagnosticsError("l_hat draws must be a non-empty finite array")
    t_grid = default_t_grid() if t_grid is None else np.asarray(t_grid, dtype=float)

    log_m1, log_m2 = _mgf_logs(l_hat, noise.w_star_draws, t_grid, shift)
    for t, a, b in zip(t_grid, log_m1, log_m2):
        if a > _LOG_MAX_FLOAT:
            raise MGFOverflowError(float(t), "M1")
        if b > _LOG_MAX_FLOAT:
            raise MGFOverflowError(float(t), "M2")
    return MGFCurves(t_grid=t_grid, m1=np.exp(log_m1), m2=np.exp(log_m2), shift=shift)


@dataclass(frozen=True, eq=False)
class MGFBand:
    t_grid: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    std_error: np.ndarray

    def contains(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        return (values >= self.lower) & (values <= self.upper)


def bootstrap_mgf_band(
    l_hat_draws,
    noise: NoiseSample,
    t_grid=None,
    shift: float = 0.0,
    n_resamples: int = DEFAULT_BOOTSTRAP_RESAMPLES,
    level: float = 0.95,
    rng: Optional[np.random.Generator] = None,
) -> MGFBand:
    """
    Percentile bootstrap band for M2.

    L_hat and W* draws are resampled independently. The randomness is the
    explicit rng; the curves themselves stay deterministic.
    """
    if n_resamples < 2:
        raise NoiseDiagnosticsError(f"need at least 2 bootstrap resamples, got {n_resamples}")
    rng = rng if rng is not None else np.random.default_rng()
    l_hat = np.asarray(l_hat_draws, dtype=float)
    w_star = noise.w_star_draws
    t_grid = default_t_grid() if t_grid is None else np.asarray(t_grid, dtype=float)

    log_m2 = np.empty((n_resamples, t_grid.size))
    for i in range(n_resamples):
        l_boot = rng.choice(l_hat, size=l_hat.size, replace=True)
        w_boot = rng.choice(w_star, size=w_star.size, replace=True)
        log_m2[i] = _mgf_logs(l_boot, w_boot, t_grid, shift)[1]

    m2 = np.exp(log_m2)
    tail = 100.0 * (1.0 - level) / 2.0
    lower, upper = np.percentile(m2, [tail, 100.0 - tail], axis=0)
    return MGFBand(t_grid=t_grid, lower=lower, upper=upper, std_error=m2.std(axis=0, ddof=1))


def qq_against_gaussian(sample: NoiseSample) -> pd.DataFrame:
    """
    Standardised empirical quantiles against N(0, 1) quantiles at (i - 0.5) / n.

    Returned as columns q_theory, q_emp.
    """
    n = len(sample)
    if n < MIN_NOISE_SAMPLES:
        raise NoiseDiagnosticsError(f"QQ data needs n >= {MIN_NOISE_SAMPLES}, got {n}")
    draws = sample.w_star_draws
    sd = draws.std(ddof=1)
    if sd == 0:
        raise NoiseDiagnosticsError("QQ data needs draws with non-zero spread")
    standardised = np.sort((draws - draws.mean()) / sd)
    theoretical = stats.norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    return pd.DataFrame({"q_theory": theoretical, "q_emp": standardised})


def ks_gaussian_distance(sample: NoiseSample) -> tuple[float, float]:
    """Kolmogorov-Smirnov statistic and p-value of the standardised draws against N(0, 1)."""
    draws = sample.w_star_draws
    result = stats.kstest((draws - draws.mean()) / draws.std(ddof=1), "norm")
    return float(result.statistic), float(result.pvalue)
