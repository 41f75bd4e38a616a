"""
Stochastic Lotka-Volterra model as a Markov jump process.

State u = (u1, u2): u1 predators, u2 prey. Transitions and rates:

    (u1, u2) -> (u1 + 1, u2 - 1)   at x1 u1 u2   (predation)
    (u1, u2) -> (u1 - 1, u2)       at x2 u1      (predator death)
    (u1, u2) -> (u1, u2 + 1)       at x3 u2      (prey birth)

Observations Y(t) ~ N((u1(t), u2(t)), diag(x4, x5)) at regular times; the
initial state is known. Paths are simulated exactly, event by event.
"""

from __future__ import annotations

import logging
import math
from dataclasses import astuple, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from numba import njit

from particle_filter import (
    ParticleFilterConfig,
    ParticleMarginalEstimator,
    StateSpaceModel,
)

logger = logging.getLogger(__name__)

TRUE_PARAMS = (0.006, 0.6, 0.3, 25.0, 49.0)
INITIAL_STATE = (70, 70)
FULL_SCALE_T_MAX = 50.0
PRIOR_SUPPORT = (-8.0, 8.0)
N_PARAMS = 5

# Events allowed per particle per observation interval before the particle is
# declared exploded (state -1, zero observation density).
MAX_EVENTS = 200_000

_UPDATES = np.array([[1, -1], [-1, 0], [0, 1]], dtype=np.int64)


@dataclass(frozen=True)
class LVParams:
    """
    x1 predation, x2 predator death, x3 prey birth, x4 and x5 observation variances.

    Rate constants may be zero (for degenerate test chains); variances must be positive.
    """

    x1: float
    x2: float
    x3: float
    x4: float
    x5: float

    def __post_init__(self):
        for name in ("x1", "x2", "x3"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"rate {name} must be finite and non-negative, got {value}")
        for name in ("x4", "x5"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"observation variance {name} must be positive, got {value}")

    @classmethod
    def from_sequence(cls, values) -> "LVParams":
        values = [float(v) for v in values]
        if len(values) != N_PARAMS:
            raise ValueError(f"expected {N_PARAMS} parameters, got {len(values)}")
        return cls(*values)

    @classmethod
    def from_log(cls, theta) -> "LVParams":
        return cls.from_sequence(np.exp(np.asarray(theta, dtype=float)))

    def to_log(self) -> np.ndarray:
        return np.log(self.as_array())

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)


def lv_rates(state, params: LVParams) -> np.ndarray:
    u1, u2 = state
    return np.array([params.x1 * u1 * u2, params.x2 * u1, params.x3 * u2], dtype=float)


def lv_next_event(
    state,
    params: LVParams,
    rng: np.random.Generator,
) -> tuple[float, int]:
    """Holding time and transition index of the next event; (inf, -1) when absorbed."""
    rates = lv_rates(state, params)
    total = rates.sum()
    if total <= 0:
        return math.inf, -1
    holding = rng.exponential(1.0 / total)
    event = int(np.searchsorted(np.cumsum(rates), rng.random() * total, side="right"))
    return holding, min(event, 2)


@njit(nogil=True)
def _lv_advance(u1, u2, x1, x2, x3, t, t_end, rng, max_events):
    events = 0
    while True:
        r1 = x1 * u1 * u2
        r2 = x2 * u1
        r3 = x3 * u2
        total = r1 + r2 + r3
        if total <= 0.0:
            return u1, u2
        t += rng.exponential(1.0 / total)
        if t > t_end:
            return u1, u2
        v = rng.random() * total
        if v < r1:
            u1 += 1
            u2 -= 1
        elif v < r1 + r2:
            u1 -= 1
        else:
            u2 += 1
        events += 1
        if events >= max_events:
            return -1, -1


@njit(nogil=True)
def _lv_propagate(states, x1, x2, x3, t0, t1, rng, max_events):
    out = np.empty_like(states)
    for i in range(states.shape[0]):
        u1 = states[i, 0]
        u2 = states[i, 1]
        if u1 < 0:
            out[i, 0] = u1
            out[i, 1] = u2
            continue
        u1, u2 = _lv_advance(u1, u2, x1, x2, x3, t0, t1, rng, max_events)
        out[i, 0] = u1
        out[i, 1] = u2
    return out


def gillespie_step(
    state,
    params: LVParams,
    t_end: float,
    rng: np.random.Generator,
    t_start: float = 0.0,
    max_events: int = MAX_EVENTS,
) -> tuple[int, int]:
    """Exact simulation of the state from t_start to t_end; (-1, -1) if max_events is hit."""
    if t_end < t_start:
        raise ValueError(f"t_end {t_end} precedes the current time {t_start}")
    u1, u2 = _lv_advance(
        int(state[0]), int(state[1]),
        params.x1, params.x2, params.x3,
        float(t_start), float(t_end), rng, max_events,
    )
    return int(u1), int(u2)


def gillespie_path(
    state,
    params: LVParams,
    t_end: float,
    rng: np.random.Generator,
    max_events: int = MAX_EVENTS,
) -> tuple[np.ndarray, np.ndarray]:
    """Every event time (starting with 0) and the state entered at it."""
    times = [0.0]
    states = [tuple(int(v) for v in state)]
    t = 0.0
    current = np.array(states[0], dtype=np.int64)
    for _ in range(max_events):
        holding, event = lv_next_event(current, params, rng)
        if t + holding > t_end:
            break
        t += holding
        current = current + _UPDATES[event]
        times.append(t)
        states.append(tuple(int(v) for v in current))
    else:
        logger.warning("path stopped after %d events before t=%g", max_events, t_end)
    return np.array(times), np.array(states, dtype=np.int64)


def lv_observation_logpdf(y, u, params: LVParams) -> float:
    """log N(y; u, diag(x4, x5))."""
    return float(_observation_logpdf(np.asarray(y, dtype=float), np.asarray(u, dtype=float)[None, :], params)[0])


def _observation_logpdf(y: np.ndarray, states: np.ndarray, params: LVParams) -> np.ndarray:
    r1 = y[0] - states[:, 0]
    r2 = y[1] - states[:, 1]
    log_density = (
        -0.5 * math.log(2.0 * math.pi * params.x4) - 0.5 * r1 * r1 / params.x4
        - 0.5 * math.log(2.0 * math.pi * params.x5) - 0.5 * r2 * r2 / params.x5
    )
    # exploded particles carry no weight
    return np.where(states[:, 0] < 0, -np.inf, log_density)


def _make_initial_sampler(u0):
    u0 = np.asarray(u0, dtype=np.int64)

    def initial_state_sampler(params: LVParams, m: int, rng: np.random.Generator) -> np.ndarray:
        return np.tile(u0, (m, 1))

    return initial_state_sampler


def _transition(states, t0, t1, params: LVParams, rng) -> np.ndarray:
    return _lv_propagate(
        np.ascontiguousarray(states, dtype=np.int64),
        params.x1, params.x2, params.x3,
        float(t0), float(t1), rng, MAX_EVENTS,
    )


def lv_state_space_model(
    observation_times,
    observations,
    u0=INITIAL_STATE,
    latent_states: Optional[np.ndarray] = None,
) -> StateSpaceModel:
    """LV state-space model with the known initial state u0 at time 0."""
    return StateSpaceModel(
        initial_state_sampler=_make_initial_sampler(u0),
        transition_simulator=_transition,
        observation_log_density=lambda y, states, params: _observation_logpdf(
            np.asarray(y, dtype=float), states, params
        ),
        observation_times=observation_times,
        observations=observations,
        latent_states=latent_states,
    )


def lv_synthesize_data(
    params: LVParams,
    u0=INITIAL_STATE,
    t_max: float = FULL_SCALE_T_MAX,
    dt: float = 1.0,
    rng: Optional[np.random.Generator] = None,
) -> StateSpaceModel:
    """Simulate a path from u0 and observe it with Gaussian noise at dt, 2 dt, ..., t_max."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    rng = rng if rng is not None else np.random.default_rng()
    n = int(round(t_max / dt))
    times = dt * np.arange(1, n + 1)

    latent = np.empty((n, 2), dtype=np.int64)
    state = tuple(int(v) for v in u0)
    t_prev = 0.0
    for k, t in enumerate(times):
        state = gillespie_step(state, params, t, rng, t_start=t_prev)
        latent[k] = state
        t_prev = t

    noise_sd = np.sqrt([params.x4, params.x5])
    observations = latent + rng.normal(size=(n, 2)) * noise_sd
    logger.debug("synthesized %d observations up to t=%g", n, t_max)
    return lv_state_space_model(times, observations, u0=u0, latent_states=latent)


def lv_data_frame(model: StateSpaceModel) -> pd.DataFrame:
    """Observations as columns t, y1, y2."""
    return pd.DataFrame(
        {
            "t": model.observation_times,
            "y1": model.observations[:, 0],
            "y2": model.observations[:, 1],
        }
    )


def lv_model_from_frame(frame: pd.DataFrame, u0=INITIAL_STATE) -> StateSpaceModel:
    missing = {"t", "y1", "y2"} - set(frame.columns)
    if missing:
        raise ValueError(f"LV data is missing columns: {sorted(missing)}")
    return lv_state_space_model(
        frame["t"].to_numpy(dtype=float),
        frame[["y1", "y2"]].to_numpy(dtype=float),
        u0=u0,
    )


def log_uniform_prior(prior_support: tuple[float, float] = PRIOR_SUPPORT):
    """Log density of independent Unif[lo, hi] priors on each log-parameter."""
    lo, hi = prior_support
    if not hi > lo:
        raise ValueError(f"invalid prior support {prior_support}")
    log_density = -N_PARAMS * math.log(hi - lo)

    def log_prior(theta) -> float:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (N_PARAMS,) or np.any(theta < lo) or np.any(theta > hi):
            return -math.inf
        return log_density

    return log_prior


def pmrwm_log_posterior_estimator(
    model: StateSpaceModel,
    config: ParticleFilterConfig,
    prior_support: tuple[float, float] = PRIOR_SUPPORT,
) -> ParticleMarginalEstimator:
    """Estimator of the LV log-posterior over theta = (log x1, ..., log x5)."""
    return ParticleMarginalEstimator(
        model=model,
        config=config,
        dimension=N_PARAMS,
        to_params=LVParams.from_log,
        log_prior=log_uniform_prior(prior_support),
    )


def lv_data_from_config(section: dict, base_dir: Path, u0=INITIAL_STATE) -> StateSpaceModel:
    """
    LV data from a config section: {"path": csv} read relative to base_dir, or
    {"synthesize": {"params", "t_max", "dt", "seed"}} simulated on the spot.
    """
    if "path" in section:
        path = Path(section["path"])
        if not path.is_absolute():
            path = base_dir / path
        return lv_model_from_frame(pd.read_csv(path, comment="#"), u0=u0)

    synth = section["synthesize"]
    params = LVParams.from_sequence(synth.get("params", TRUE_PARAMS))
    rng = np.random.default_rng(synth.get("seed", 0))
    return lv_synthesize_data(params, u0, float(synth["t_max"]), float(synth.get("dt", 1.0)), rng)
