"""
Optima of the pseudo-marginal efficiency surfaces.

All searches are derivative-free: bounded Brent (golden-section steps with
parabolic interpolation) for one-dimensional maximisation, Brent's root finder
for the first-order conditions, and nested one-dimensional searches (a profile
over sigma2 of the conditional optimum in ell) for joint problems.

Search brackets: ell in [1e-3, 20], sigma2 in [1e-3, 50].
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Optional

from scipy import optimize

from limit_theory import (
    QuadSpec,
    finite_d_esjd,
    finite_d_gaussian,
    log_normal_cdf,
    normal_cdf,
    sar_efficiency,
    sar_efficiency_with_overhead,
    sar_esjd,
)

logger = logging.getLogger(__name__)

ELL_BOUNDS = (1e-3, 20.0)
SIGMA2_BOUNDS = (1e-3, 50.0)
MAX_ITERATIONS = 500
REPORT_DECIMALS = 3

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class OptimizationError(RuntimeError):
    """Raised when a search fails; carries the best iterate found."""

    def __init__(self, message: str, best: Optional[dict] = None):
        super().__init__(message if best is None else f"{message} (best iterate: {best})")
        self.best = best


@dataclass(frozen=True)
class OptimumReport:
    ell_opt: float
    sigma2_opt: float
    alpha_at_opt: float
    eff_at_opt: float
    iterations: int
    converged: bool
    d: Optional[int] = None
    t_rat: Optional[float] = None

    def to_dict(self) -> dict:
        """JSON report form, values rounded to the reported precision."""
        return {
            "d": self.d,
            "ell_opt": round(self.ell_opt, REPORT_DECIMALS),
            "sigma2_opt": round(self.sigma2_opt, REPORT_DECIMALS),
            "alpha_opt": round(self.alpha_at_opt, REPORT_DECIMALS + 2),
            "eff_opt": round(self.eff_at_opt, REPORT_DECIMALS + 2),
            "t_rat": self.t_rat,
            "iterations": self.iterations,
            "converged": self.converged,
        }

    def raw(self) -> dict:
        return asdict(self)


def _maximize_scalar(
    objective: Callable[[float], float],
    bounds: tuple[float, float],
    tol: float,
    what: str,
) -> optimize.OptimizeResult:
    result = optimize.minimize_scalar(
        lambda x: -objective(x),
        bounds=bounds,
        method="bounded",
        options={"xatol": tol, "maxiter": MAX_ITERATIONS},
    )
    if not result.success:
        raise OptimizationError(
            f"{what} search did not converge: {result.message}",
            best={"x": float(result.x), "objective": float(-result.fun)},
        )
    return result


def _stationarity_residual(x: float, other_sq: float) -> float:
    """
    log of both sides of the first-order condition in x for fixed other^2.

    Eff is symmetric in (ell^2, tau^2); its derivative in x vanishes where
    Phi(-s/2) = x^2 phi(s/2) / (4 s) with s = sqrt(x^2 + other^2). Working on
    the log scale keeps the condition usable when both sides underflow.
    """
    s = math.sqrt(x * x + other_sq)
    lhs = float(log_normal_cdf(-0.5 * s))
    rhs = math.log(x * x / 4.0) - 0.125 * s * s - _LOG_SQRT_2PI - math.log(s)
    return lhs - rhs


def _stationary_root(other_sq: float, bounds: tuple[float, float], tol: float, what: str) -> float:
    lo, hi = bounds
    f_lo = _stationarity_residual(lo, other_sq)
    f_hi = _stationarity_residual(hi, other_sq)
    if f_lo * f_hi > 0:
        raise OptimizationError(
            f"{what}: first-order condition has no sign change on [{lo}, {hi}]",
            best={"residual_lo": f_lo, "residual_hi": f_hi},
        )
    return optimize.brentq(
        _stationarity_residual, lo, hi, args=(other_sq,), xtol=tol, maxiter=MAX_ITERATIONS
    )


def optimize_ell_given_sigma2(sigma2: float, tol: float = 1e-10) -> float:
    """Scale ell maximising Eff (equivalently J) at fixed noise variance sigma2."""
    if sigma2 < 0:
        raise ValueError(f"sigma2 must be non-negative, got {sigma2}")
    return _stationary_root(2.0 * sigma2, ELL_BOUNDS, tol, "ell given sigma2")


def optimize_sigma2_given_ell(ell: float, tol: float = 1e-10) -> float:
    """Noise variance maximising Eff at fixed ell, found through tau = sqrt(2 sigma2)."""
    if not ell > 0:
        raise ValueError(f"ell must be positive, got {ell}")
    tau_bounds = tuple(math.sqrt(2.0 * s) for s in SIGMA2_BOUNDS)
    tau = _stationary_root(ell * ell, tau_bounds, tol, "sigma2 given ell")
    return tau * tau / 2.0


def optimize_sar_joint(tol: float = 1e-9) -> OptimumReport:
    """
    Joint optimum of Eff over (ell, sigma2) under Gaussian noise.

    For fixed tau^2 + ell^2 the product tau^2 ell^2 peaks at tau^2 = ell^2, which
    leaves sigma^4 Phi(-sigma) to maximise in one dimension.
    """
    if tol > 1e-6:
        raise ValueError(f"tol must be <= 1e-6, got {tol}")

    sigma_bounds = tuple(math.sqrt(s) for s in SIGMA2_BOUNDS)
    result = _maximize_scalar(
        lambda sigma: 4.0 * math.log(sigma) + float(log_normal_cdf(-sigma)),
        sigma_bounds,
        tol,
        "joint SAR",
    )
    sigma = float(result.x)
    sigma2 = sigma * sigma
    ell = sigma * math.sqrt(2.0)
    return OptimumReport(
        ell_opt=ell,
        sigma2_opt=sigma2,
        alpha_at_opt=float(2.0 * normal_cdf(-sigma)),
        eff_at_opt=sar_efficiency(ell, sigma2),
        iterations=int(result.nfev),
        converged=True,
    )


def _profile_maximize(
    objective: Callable[[float, float], float],
    conditional_ell: Callable[[float], tuple[float, int]],
    log_sigma2_bounds: tuple[float, float],
    tol: float,
    what: str,
) -> tuple[float, float, float, int]:
    """Maximise objective(ell, sigma2) over log sigma2, ell profiled out."""
    evaluations = 0

    def profile(log_sigma2: float) -> float:
        nonlocal evaluations
        sigma2 = math.exp(log_sigma2)
        ell, used = conditional_ell(sigma2)
        evaluations += used
        return objective(ell, sigma2)

    result = _maximize_scalar(profile, log_sigma2_bounds, tol, what)
    sigma2 = math.exp(float(result.x))
    ell, used = conditional_ell(sigma2)
    return ell, sigma2, objective(ell, sigma2), evaluations + used + int(result.nfev)


def optimize_with_overhead(t_rat: float, tol: float = 1e-8) -> OptimumReport:
    """
    Joint optimum of J_{sigma2}(ell) / (1 + t_rat / sigma2).

    The conditional optimum in ell of the overhead-adjusted objective is the same
    as that of J, so the search is over sigma2 alone. With no overhead J is
    decreasing in sigma2 and the optimum sits at sigma2 = 0.
    """
    if t_rat < 0:
        raise ValueError(f"t_rat must be non-negative, got {t_rat}")
    if t_rat == 0:
        ell = optimize_ell_given_sigma2(0.0)
        return OptimumReport(
            ell_opt=ell,
            sigma2_opt=0.0,
            alpha_at_opt=sar_esjd(ell, 0.0) / ell**2,
            eff_at_opt=sar_esjd(ell, 0.0),
            iterations=1,
            converged=True,
            t_rat=t_rat,
        )

    def conditional_ell(sigma2: float) -> tuple[float, int]:
        return optimize_ell_given_sigma2(sigma2), 1

    # the optimum moves towards sigma2 ~ sqrt(t_rat) as t_rat shrinks
    lower = max(min(SIGMA2_BOUNDS[0], 1e-2 * math.sqrt(t_rat)), 1e-12)
    log_bounds = (math.log(lower), math.log(SIGMA2_BOUNDS[1]))
    ell, sigma2, value, evaluations = _profile_maximize(
        lambda ell, sigma2: sar_efficiency_with_overhead(ell, sigma2, t_rat),
        conditional_ell,
        log_bounds,
        tol,
        f"overhead t_rat={t_rat}",
    )
    alpha = sar_esjd(ell, sigma2) / ell**2
    return OptimumReport(
        ell_opt=ell,
        sigma2_opt=sigma2,
        alpha_at_opt=alpha,
        eff_at_opt=value,
        iterations=evaluations,
        converged=True,
        t_rat=t_rat,
    )


def optimize_finite_d(
    d: int,
    tol: float = 1e-6,
    quad_spec: QuadSpec = QuadSpec(),
) -> OptimumReport:
    """
    Optimum of sigma2 * ESJD(lambda, d) for a N(0, I_d) target, reported as ell = lambda sqrt(d).
    """
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    root_d = math.sqrt(d)

    def objective(ell: float, sigma2: float) -> float:
        return sigma2 * finite_d_esjd(ell / root_d, d, sigma2, quad_spec)

    def conditional_ell(sigma2: float) -> tuple[float, int]:
        result = _maximize_scalar(
            lambda ell: objective(ell, sigma2), ELL_BOUNDS, tol, f"ell at d={d}"
        )
        return float(result.x), int(result.nfev)

    log_bounds = tuple(math.log(s) for s in SIGMA2_BOUNDS)
    ell, sigma2, value, evaluations = _profile_maximize(
        objective, conditional_ell, log_bounds, tol, f"finite d={d}"
    )
    report = finite_d_gaussian(ell / root_d, d, sigma2, quad_spec)
    logger.debug("d=%d optimum ell=%.4f sigma2=%.4f after %d evaluations", d, ell, sigma2, evaluations)
    return OptimumReport(
        ell_opt=ell,
        sigma2_opt=sigma2,
        alpha_at_opt=report.acceptance,
        eff_at_opt=value,
        iterations=evaluations,
        converged=True,
        d=d,
    )
