"""
High-dimensional limits for pseudo-marginal random-walk Metropolis.

With jump size lambda = ell / s(d) and additive log-target noise B = W* - W,
as d grows the chain has:

    alpha(ell) = 2 E[Phi(B/ell - ell/2)]          limiting acceptance rate
    J(ell)     = ell^2 alpha(ell)                  limiting ESJD
    J_rel(ell) = E[Phi(B/ell - ell/2)] / Phi(-ell/2)
    alpha_max  = lim_{ell -> 0} alpha(ell) = 2 P[B > 0]
    h(ell)     = J(ell) / I                        diffusion speed, I the roughness

Gaussian and zero noise have closed forms; Laplace and empirical noise are
evaluated by Monte Carlo over draws of B and always report a standard error.

Under Gaussian noise with tau^2 = 2 sigma^2 the rescaled efficiency is

    Eff(ell, sigma2) = sigma2 J(ell) = tau^2 ell^2 Phi(-sqrt(tau^2 + ell^2)/2),

so the closed form and sigma2 * J agree exactly (not just up to a constant).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, stats
from scipy.special import log_ndtr, ndtr

from noise_models import (
    NoiseKind,
    NoiseModel,
    sample_noise_difference,
)

logger = logging.getLogger(__name__)

DEFAULT_MC_BUDGET = 1_000_000
MIN_MC_BUDGET = 1_000
DEFAULT_SEED = 20140101


class LimitTheoryError(ValueError):
    """Raised for invalid arguments to a limit formula."""


class QuadratureError(RuntimeError):
    """Raised when two refinements of a 1-D quadrature disagree."""

    def __init__(self, message: str, first: float, second: float):
        super().__init__(f"{message}: {first!r} vs {second!r}")
        self.first = first
        self.second = second


@dataclass(frozen=True)
class Estimate:
    """A point value with its Monte Carlo standard error (0 for closed forms)."""

    value: float
    std_error: float = 0.0

    def __float__(self) -> float:
        return self.value

    def scaled(self, factor: float) -> "Estimate":
        return Estimate(self.value * factor, self.std_error * abs(factor))


@dataclass(frozen=True)
class TuningPoint:
    """
    A (ell, sigma2) pair with the noise law it refers to.

    sigma2 must be the variance of that noise law; build points with `of` or
    `gaussian` to keep the two in step.
    """

    ell: float
    sigma2: float
    noise: NoiseModel = field(default_factory=NoiseModel.none)

    def __post_init__(self):
        if not self.ell > 0:
            raise LimitTheoryError(f"ell must be positive, got {self.ell}")
        if self.sigma2 < 0:
            raise LimitTheoryError(f"sigma2 must be non-negative, got {self.sigma2}")
        if not math.isclose(self.sigma2, self.noise.sigma2, rel_tol=1e-12, abs_tol=1e-15):
            raise LimitTheoryError(
                f"sigma2 = {self.sigma2} does not match the {self.noise.kind.value} "
                f"noise variance {self.noise.sigma2}"
            )

    @property
    def tau2(self) -> float:
        return 2.0 * self.sigma2

    @classmethod
    def of(cls, ell: float, noise: NoiseModel) -> "TuningPoint":
        return cls(float(ell), noise.sigma2, noise)

    @classmethod
    def gaussian(cls, ell: float, sigma2: float) -> "TuningPoint":
        return cls.of(ell, NoiseModel.from_variance(NoiseKind.GAUSSIAN, sigma2))

    def require_closed_form(self):
        if not self.noise.has_closed_form:
            raise LimitTheoryError(
                f"closed forms need gaussian or none noise, got {self.noise.kind.value}"
            )

    def sar_efficiency(self) -> float:
        """Closed-form Eff at this point; gaussian or none noise only."""
        self.require_closed_form()
        return sar_efficiency(self.ell, self.sigma2)

    def report(
        self,
        roughness_I: float = 1.0,
        mc_budget: int = DEFAULT_MC_BUDGET,
        rng: Optional[np.random.Generator] = None,
    ) -> "LimitReport":
        return limit_report(self.ell, self.noise, roughness_I=roughness_I, mc_budget=mc_budget, rng=rng)


@dataclass(frozen=True)
class LimitReport:
    """All limiting quantities at one tuning point."""

    ell: float
    sigma2: float
    alpha: float
    esjd: float
    j_rel: float
    eff: float
    alpha_max: float
    diffusion_speed: float
    std_error: float = 0.0

    def as_row(self) -> dict:
        return {
            "ell": self.ell,
            "sigma2": self.sigma2,
            "alpha": self.alpha,
            "esjd": self.esjd,
            "j_rel": self.j_rel,
            "eff": self.eff,
        }


@dataclass(frozen=True)
class QuadSpec:
    """Settings for the chi-radius quadrature used at finite dimension."""

    epsrel: float = 1e-9
    truncation_sds: float = 12.0
    limit: int = 200
    agreement_rtol: float = 1e-6


@dataclass(frozen=True)
class FiniteDimReport:
    lam: float
    d: int
    sigma2: float
    esjd: float
    acceptance: float

    @property
    def ell(self) -> float:
        return self.lam * math.sqrt(self.d)

    @property
    def efficiency(self) -> float:
        return self.sigma2 * self.esjd


def normal_cdf(x):
    """Standard Normal CDF; scipy's ndtr stays accurate deep in the tails."""
    return ndtr(x)


def log_normal_cdf(x):
    """log Phi(x) without underflow for very negative x."""
    return log_ndtr(x)


def _check_ell(ell: float):
    if not ell > 0:
        raise LimitTheoryError(f"ell must be positive, got {ell}")


def _default_rng(rng: Optional[np.random.Generator]) -> np.random.Generator:
    return rng if rng is not None else np.random.default_rng(DEFAULT_SEED)


def _draw_b(
    noise: NoiseModel,
    mc_budget: int,
    rng: Optional[np.random.Generator],
) -> np.ndarray:
    if mc_budget < MIN_MC_BUDGET:
        raise LimitTheoryError(
            f"mc_budget must be at least {MIN_MC_BUDGET} for {noise.kind.value} noise, "
            f"got {mc_budget}"
        )
    logger.debug("Drawing %d values of B for %s noise", mc_budget, noise.kind.value)
    return sample_noise_difference(noise, _default_rng(rng), mc_budget).b


def _phi_mean_from_draws(ell: float, b: np.ndarray) -> Estimate:
    terms = normal_cdf(b / ell - ell / 2.0)
    return Estimate(float(terms.mean()), float(terms.std(ddof=1) / math.sqrt(terms.size)))


def _phi_mean(
    ell: float,
    noise: NoiseModel,
    mc_budget: int,
    rng: Optional[np.random.Generator],
    b: Optional[np.ndarray] = None,
) -> Estimate:
    """E[Phi(B/ell - ell/2)]."""
    _check_ell(ell)
    if noise.kind is NoiseKind.NONE:
        return Estimate(float(normal_cdf(-ell / 2.0)))
    if noise.kind is NoiseKind.GAUSSIAN:
        return Estimate(float(normal_cdf(-0.5 * math.sqrt(ell**2 + 2.0 * noise.sigma2))))
    if b is None:
        b = _draw_b(noise, mc_budget, rng)
    return _phi_mean_from_draws(ell, b)


def limiting_acceptance(
    ell: float,
    noise: NoiseModel,
    mc_budget: int = DEFAULT_MC_BUDGET,
    rng: Optional[np.random.Generator] = None,
) -> Estimate:
    """Limiting acceptance rate alpha(ell) = 2 E[Phi(B/ell - ell/2)]."""
    return _phi_mean(ell, noise, mc_budget, rng).scaled(2.0)


def limiting_esjd(
    ell: float,
    noise: NoiseModel,
    mc_budget: int = DEFAULT_MC_BUDGET,
    rng: Optional[np.random.Generator] = None,
) -> Estimate:
    """Limiting expected squared jump distance J(ell) = ell^2 alpha(ell)."""
    return limiting_acceptance(ell, noise, mc_budget, rng).scaled(ell**2)


def relative_efficiency(
    ell: float,
    noise: NoiseModel,
    mc_budget: int = DEFAULT_MC_BUDGET,
    rng: Optional[np.random.Generator] = None,
) -> Estimate:
    """J_rel(ell) = J(ell) / J_0(ell), the cost of noise relative to the exact chain."""
    if noise.kind is NoiseKind.NONE:
        _check_ell(ell)
        return Estimate(1.0)
    return _phi_mean(ell, noise, mc_budget, rng).scaled(1.0 / float(normal_cdf(-ell / 2.0)))


def alpha_max(
    noise: NoiseModel,
    mc_budget: int = DEFAULT_MC_BUDGET,
    rng: Optional[np.random.Generator] = None,
    b: Optional[np.ndarray] = None,
) -> Estimate:
    """
    The ell -> 0 limit of alpha(ell), equal to 2 P[B > 0] for non-degenerate noise.

    For the zero-noise model 2 P[B > 0] would be 0, but alpha_0(ell) -> 1 as
    ell -> 0, and 1 is what is reported.
    """
    if noise.kind is NoiseKind.NONE:
        return Estimate(1.0)
    if noise.kind is NoiseKind.GAUSSIAN:
        return Estimate(float(2.0 * normal_cdf(-math.sqrt(noise.sigma2 / 2.0))))
    if b is None:
        b = _draw_b(noise, mc_budget, rng)
    p = float(np.mean(b > 0))
    return Estimate(2.0 * p, 2.0 * math.sqrt(p * (1.0 - p) / b.size))


def diffusion_speed(
    ell: float,
    noise: NoiseModel,
    roughness_I: float = 1.0,
    mc_budget: int = DEFAULT_MC_BUDGET,
    rng: Optional[np.random.Generator] = None,
) -> Estimate:
    """Speed h(ell) = J(ell) / I of the limiting diffusion, I = E[((log f)'(X))^2]."""
    if not roughness_I > 0:
        raise LimitTheoryError(f"roughness_I must be positive, got {roughness_I}")
    return limiting_esjd(ell, noise, mc_budget, rng).scaled(1.0 / roughness_I)


def limit_report(
    ell: float,
    noise: NoiseModel,
    roughness_I: float = 1.0,
    mc_budget: int = DEFAULT_MC_BUDGET,
    rng: Optional[np.random.Generator] = None,
) -> LimitReport:
    """Every limiting quantity at ell, sharing one set of B draws for MC noise."""
    _check_ell(ell)
    if not roughness_I > 0:
        raise LimitTheoryError(f"roughness_I must be positive, got {roughness_I}")

    b = None if noise.has_closed_form else _draw_b(noise, mc_budget, rng)
    phi_mean = _phi_mean(ell, noise, mc_budget, rng, b=b)
    alpha = phi_mean.scaled(2.0)
    esjd = alpha.value * ell**2
    j_rel = 1.0 if noise.kind is NoiseKind.NONE else phi_mean.value / float(normal_cdf(-ell / 2.0))

    return LimitReport(
        ell=ell,
        sigma2=noise.sigma2,
        alpha=alpha.value,
        esjd=esjd,
        j_rel=j_rel,
        eff=noise.sigma2 * esjd,
        alpha_max=alpha_max(noise, mc_budget, rng, b=b).value,
        diffusion_speed=esjd / roughness_I,
        std_error=alpha.std_error,
    )


def sar_efficiency(ell: float, sigma2: float) -> float:
    """tau^2 ell^2 Phi(-sqrt(tau^2 + ell^2)/2) with tau^2 = 2 sigma2."""
    _check_ell(ell)
    if sigma2 < 0:
        raise LimitTheoryError(f"sigma2 must be non-negative, got {sigma2}")
    tau2 = 2.0 * sigma2
    return tau2 * ell**2 * float(normal_cdf(-0.5 * math.sqrt(tau2 + ell**2)))


def sar_esjd(ell: float, sigma2: float) -> float:
    """J_{sigma2}(ell) under Gaussian noise."""
    _check_ell(ell)
    return 2.0 * ell**2 * float(normal_cdf(-0.5 * math.sqrt(ell**2 + 2.0 * sigma2)))


def sar_efficiency_with_overhead(ell: float, sigma2: float, t_rat: float) -> float:
    """
    J_{sigma2}(ell) / (1 + t_rat / sigma2).

    t_rat is the cost of one unbiased estimate relative to the rest of an
    iteration; estimate cost is taken as proportional to 1/sigma2.
    """
    if t_rat < 0:
        raise LimitTheoryError(f"t_rat must be non-negative, got {t_rat}")
    if sigma2 < 0:
        raise LimitTheoryError(f"sigma2 must be non-negative, got {sigma2}")
    j = sar_esjd(ell, sigma2)
    if t_rat == 0:
        return j
    if sigma2 == 0:
        return 0.0
    return j / (1.0 + t_rat / sigma2)


def _radius_bounds(d: int, truncation_sds: float) -> tuple[float, float, float]:
    radius = stats.chi(d)
    mean, sd = radius.mean(), radius.std()
    lo = max(0.0, mean - truncation_sds * sd)
    hi = mean + truncation_sds * sd
    # split point for the refinement check: the mode of chi(d)
    mode = math.sqrt(d - 1) if d > 1 else 0.5 * (lo + hi)
    return lo, min(max(mode, lo), hi), hi


def _chi_pdf(d: int):
    """Scalar chi(d) density; frozen scipy distributions are too slow inside quad."""
    log_norm = (d / 2.0 - 1.0) * math.log(2.0) + math.lgamma(d / 2.0)

    def pdf(r: float) -> float:
        if d == 1:
            return math.exp(-0.5 * r * r - log_norm)
        if r <= 0.0:
            return 0.0
        return math.exp((d - 1) * math.log(r) - 0.5 * r * r - log_norm)

    return pdf


def _refined_quad(func, lo: float, mid: float, hi: float, spec: QuadSpec, what: str) -> float:
    whole, _ = integrate.quad(func, lo, hi, epsrel=spec.epsrel, epsabs=0.0, limit=spec.limit)
    left, _ = integrate.quad(func, lo, mid, epsrel=spec.epsrel, epsabs=0.0, limit=spec.limit)
    right, _ = integrate.quad(func, mid, hi, epsrel=spec.epsrel, epsabs=0.0, limit=spec.limit)
    split = left + right
    scale = max(abs(whole), abs(split), np.finfo(float).tiny)
    if abs(whole - split) > spec.agreement_rtol * scale:
        raise QuadratureError(f"{what} quadrature did not converge", whole, split)
    return split


def _check_finite_d(lam: float, d: int, sigma2: float):
    if not lam > 0:
        raise LimitTheoryError(f"lambda must be positive, got {lam}")
    if d < 1:
        raise LimitTheoryError(f"dimension must be >= 1, got {d}")
    if sigma2 < 0:
        raise LimitTheoryError(f"sigma2 must be non-negative, got {sigma2}")


def _radius_expectation(
    lam: float,
    d: int,
    sigma2: float,
    power: int,
    quad_spec: QuadSpec,
    what: str,
) -> float:
    """E[R^power * 2 Phi(-sqrt(lam^2 R^2 + 2 sigma2)/2)] for R ~ chi(d)."""
    pdf = _chi_pdf(d)
    lo, mid, hi = _radius_bounds(d, quad_spec.truncation_sds)

    def integrand(r: float) -> float:
        accept = 2.0 * float(normal_cdf(-0.5 * math.sqrt((lam * r) ** 2 + 2.0 * sigma2)))
        return r**power * pdf(r) * accept

    return _refined_quad(integrand, lo, mid, hi, quad_spec, what)


def finite_d_esjd(
    lam: float,
    d: int,
    sigma2: float,
    quad_spec: QuadSpec = QuadSpec(),
) -> float:
    """ESJD(lam, d) alone; the optimizer does not need the acceptance rate."""
    _check_finite_d(lam, d, sigma2)
    return lam**2 * _radius_expectation(lam, d, sigma2, 2, quad_spec, "ESJD")


def finite_d_gaussian(
    lam: float,
    d: int,
    sigma2: float,
    quad_spec: QuadSpec = QuadSpec(),
) -> FiniteDimReport:
    """
    ESJD and acceptance rate at dimension d for a N(0, I_d) target under Gaussian noise.

    With R = ||Z|| ~ chi(d) and B ~ N(-sigma2, 2 sigma2),

        alpha(lam, d) = 2 E[Phi(-(lam/2) R + B/(lam R))]
        ESJD(lam, d)  = lam^2 E[R^2 * 2 Phi(-(lam/2) R + B/(lam R))]

    The B expectation is closed form, E_B[Phi(-(a/2) + B/a)] = Phi(-sqrt(a^2 + 2 sigma2)/2)
    with a = lam R, so each quantity is a single quadrature over R.
    """
    _check_finite_d(lam, d, sigma2)
    acceptance = _radius_expectation(lam, d, sigma2, 0, quad_spec, "acceptance")
    esjd = lam**2 * _radius_expectation(lam, d, sigma2, 2, quad_spec, "ESJD")
    return FiniteDimReport(lam=lam, d=d, sigma2=sigma2, esjd=esjd, acceptance=acceptance)


def _tilted_laplace_pdf(w: float, location: float, scale: float) -> float:
    if w < location:
        rate = 1.0 + 1.0 / scale
        mass = (1.0 - scale) / 2.0
        return mass * rate * math.exp(rate * (w - location))
    rate = 1.0 / scale - 1.0
    mass = (1.0 + scale) / 2.0
    return mass * rate * math.exp(-rate * (w - location))


def limiting_acceptance_quadrature(ell: float, noise: NoiseModel) -> float:
    """
    alpha(ell) for Laplace noise by direct integration over W and W*.

    Independent of the Monte Carlo path: the tilted density of W is integrated
    against the proposal-noise Laplace density, split at the shared kink.
    """
    _check_ell(ell)
    if noise.kind is not NoiseKind.LAPLACE:
        raise LimitTheoryError("quadrature evaluation is implemented for laplace noise only")

    location, scale = noise.laplace_location, noise.laplace_scale
    slowest_rate = min(1.0 / scale, 1.0 / scale - 1.0)
    width = 45.0 / slowest_rate
    lo, hi = location - width, location + width
    proposal = stats.laplace(loc=location, scale=scale)

    def inner(w: float) -> float:
        def integrand(v: float) -> float:
            return float(normal_cdf((v - w) / ell - ell / 2.0)) * proposal.pdf(v)

        left, _ = integrate.quad(integrand, lo, location, epsabs=1e-13, limit=200)
        right, _ = integrate.quad(integrand, location, hi, epsabs=1e-13, limit=200)
        return (left + right) * _tilted_laplace_pdf(w, location, scale)

    left, _ = integrate.quad(inner, lo, location, epsabs=1e-12, limit=200)
    right, _ = integrate.quad(inner, location, hi, epsabs=1e-12, limit=200)
    return 2.0 * (left + right)

