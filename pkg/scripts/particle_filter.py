"""
Bootstrap particle filter likelihood estimates for state-space models.

The estimate of the likelihood (not of its log) is unbiased, which is what a
pseudo-marginal chain needs. Weights stay in the log domain throughout and are
normalised with log-sum-exp. Resampling happens after every observation.

Also holds a scalar linear-Gaussian model whose exact likelihood comes from the
Kalman filter, used as an oracle for the particle estimates.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Optional

import numpy as np
from scipy import stats
from scipy.special import logsumexp, softmax

logger = logging.getLogger(__name__)


class ParticleFilterError(ValueError):
    """Raised for invalid particle filter configuration or model input."""


class ResamplingScheme(str, Enum):
    MULTINOMIAL = "multinomial"
    SYSTEMATIC = "systematic"


@dataclass(frozen=True)
class ParticleFilterConfig:
    m: int
    resampling: ResamplingScheme = ResamplingScheme.SYSTEMATIC
    seed: Optional[int] = None

    def __post_init__(self):
        if int(self.m) < 1:
            raise ParticleFilterError(f"particle count m must be >= 1, got {self.m}")
        try:
            object.__setattr__(self, "resampling", ResamplingScheme(self.resampling))
        except ValueError as e:
            raise ParticleFilterError(f"unknown resampling scheme: {self.resampling!r}") from e

    @classmethod
    def from_dict(cls, data: dict) -> "ParticleFilterConfig":
        return cls(
            m=int(data["m"]),
            resampling=data.get("resampling", ResamplingScheme.SYSTEMATIC.value),
            seed=data.get("seed"),
        )


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    """
    Latent Markov process observed with noise at fixed times.

    The callables act on a whole particle array at once:
        initial_state_sampler(params, m, rng) -> particles
        transition_simulator(particles, t0, t1, params, rng) -> particles
        observation_log_density(y, particles, params) -> log densities, shape (m,)
    """

    initial_state_sampler: Callable[[Any, int, np.random.Generator], np.ndarray]
    transition_simulator: Callable[..., np.ndarray]
    observation_log_density: Callable[[np.ndarray, np.ndarray, Any], np.ndarray]
    observation_times: np.ndarray
    observations: np.ndarray
    initial_time: float = 0.0
    latent_states: Optional[np.ndarray] = None

    def __post_init__(self):
        times = np.asarray(self.observation_times, dtype=float)
        observations = np.asarray(self.observations, dtype=float)
        if times.ndim != 1 or times.size == 0:
            raise ParticleFilterError("observation_times must be a non-empty 1-D sequence")
        if observations.shape[0] != times.size:
            raise ParticleFilterError(
                f"{observations.shape[0]} observations for {times.size} observation times"
            )
        if np.any(np.diff(times) <= 0):
            raise ParticleFilterError("observation_times must be strictly increasing")
        if times[0] < self.initial_time:
            raise ParticleFilterError("first observation precedes the initial time")
        object.__setattr__(self, "observation_times", times)
        object.__setattr__(self, "observations", observations)

    @property
    def n_intervals(self) -> int:
        return self.observation_times.size


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Ancestor indices from one uniform offset on a regular grid of m points."""
    m = weights.size
    positions = (rng.random() + np.arange(m)) / m
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions, side="right")


def multinomial_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    m = weights.size
    return rng.choice(m, size=m, replace=True, p=weights)


_RESAMPLERS = {
    ResamplingScheme.SYSTEMATIC: systematic_resample,
    ResamplingScheme.MULTINOMIAL: multinomial_resample,
}


def bootstrap_log_likelihood(
    model: StateSpaceModel,
    params,
    config: ParticleFilterConfig,
    rng: Optional[np.random.Generator] = None,
) -> tuple[float, float]:
    """
    Log of the bootstrap particle filter likelihood estimate.

    Returns (log_estimate, cost) with cost = m x number of observation intervals.
    A step where every particle has zero weight gives -inf, a valid value for a
    chain to reject.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    m = config.m
    cost = float(m * model.n_intervals)
    resample = _RESAMPLERS[config.resampling]
    log_m = math.log(m)

    particles = model.initial_state_sampler(params, m, rng)
    t_prev = model.initial_time
    log_likelihood = 0.0
    last = model.n_intervals - 1

    for k, (t, y) in enumerate(zip(model.observation_times, model.observations)):
        particles = model.transition_simulator(particles, t_prev, t, params, rng)
        log_w = np.asarray(model.observation_log_density(y, particles, params), dtype=float)
        log_w = np.where(np.isnan(log_w), -np.inf, log_w)
        if not np.any(np.isfinite(log_w)):
            logger.debug("all particle weights vanished at t=%g", t)
            return -math.inf, cost

        log_likelihood += float(logsumexp(log_w)) - log_m
        # resampling after the last observation cannot change the estimate
        if k < last:
            particles = particles[resample(softmax(log_w), rng)]
        t_prev = t

    return log_likelihood, cost


@dataclass(frozen=True, eq=False)
class ParticleMarginalEstimator:
    """
    Noisy log-posterior theta -> log prior(theta) + log p_hat(y | theta) for a pseudo-marginal chain.

    Points outside the prior support return -inf at no cost, without running the filter.
    """

    model: StateSpaceModel
    config: ParticleFilterConfig
    dimension: int
    to_params: Callable[[np.ndarray], Any]
    log_prior: Callable[[np.ndarray], float]

    def evaluate(self, theta: np.ndarray, rng: np.random.Generator) -> tuple[float, float]:
        log_prior = self.log_prior(theta)
        if not math.isfinite(log_prior):
            return -math.inf, 0.0
        log_likelihood, cost = bootstrap_log_likelihood(
            self.model, self.to_params(theta), self.config, rng
        )
        return log_prior + log_likelihood, cost


# Linear-Gaussian oracle model


@dataclass(frozen=True)
class LinearGaussianSpec:
    """
    x_0 ~ N(m0, p0),  x_t = a x_{t-1} + N(0, q),  y_t = c x_t + N(0, r),  t = 1..n.
    """

    a: float = 0.9
    c: float = 1.0
    q: float = 1.0
    r: float = 1.0
    m0: float = 0.0
    p0: float = 1.0

    def __post_init__(self):
        for name in ("q", "r", "p0"):
            value = getattr(self, name)
            if not value > 0:
                raise ParticleFilterError(f"variance {name} must be positive, got {value}")


def kalman_log_likelihood(spec: LinearGaussianSpec, observations) -> float:
    """Exact marginal log-likelihood by the prediction/update recursions."""
    mean, var = spec.m0, spec.p0
    total = 0.0
    for y in np.asarray(observations, dtype=float):
        mean_pred = spec.a * mean
        var_pred = spec.a**2 * var + spec.q
        innovation_var = spec.c**2 * var_pred + spec.r
        total += float(stats.norm.logpdf(y, spec.c * mean_pred, math.sqrt(innovation_var)))
        gain = var_pred * spec.c / innovation_var
        mean = mean_pred + gain * (y - spec.c * mean_pred)
        var = (1.0 - gain * spec.c) * var_pred
    return total


def simulate_linear_gaussian(
    spec: LinearGaussianSpec,
    n: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw (latent x_1..x_n, observations y_1..y_n)."""
    x = rng.normal(spec.m0, math.sqrt(spec.p0))
    latent = np.empty(n)
    for t in range(n):
        x = spec.a * x + rng.normal(0.0, math.sqrt(spec.q))
        latent[t] = x
    observations = spec.c * latent + rng.normal(0.0, math.sqrt(spec.r), size=n)
    return latent, observations


def _lg_initial(spec: LinearGaussianSpec, m: int, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(spec.m0, math.sqrt(spec.p0), size=m)


def _lg_transition(particles, t0, t1, spec: LinearGaussianSpec, rng) -> np.ndarray:
    return spec.a * particles + rng.normal(0.0, math.sqrt(spec.q), size=particles.size)


def _lg_observation(y, particles, spec: LinearGaussianSpec) -> np.ndarray:
    return stats.norm.logpdf(y, spec.c * particles, math.sqrt(spec.r))


def linear_gaussian_model(observations, latent_states=None) -> StateSpaceModel:
    """
    State-space model for observations at t = 1..n; the LinearGaussianSpec is
    passed as `params` to the filter.
    """
    observations = np.asarray(observations, dtype=float)
    return StateSpaceModel(
        initial_state_sampler=_lg_initial,
        transition_simulator=_lg_transition,
        observation_log_density=_lg_observation,
        observation_times=np.arange(1, observations.size + 1, dtype=float),
        observations=observations,
        latent_states=latent_states,
    )
