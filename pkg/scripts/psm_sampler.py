"""
Pseudo-marginal random-walk Metropolis kernel and chain statistics.

The kernel works with any object satisfying LogTargetEstimator: each call to
evaluate(x, rng) returns a fresh noisy estimate of log pi(x) and the cost of
producing it. The estimate accepted with a position is carried forward
unchanged until the next acceptance; it is never recomputed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Protocol, Union, runtime_checkable

import numpy as np
import pandas as pd
from numpy.fft import irfft, rfft

from limit_theory import normal_cdf
from noise_models import NoiseModel, sample_proposal_noise

logger = logging.getLogger(__name__)

# Scaling constant of the proposal covariance gamma^2 (2.56^2 / d) Var(X)
PROPOSAL_SCALE_CONSTANT = 2.56

_LOG_2PI = math.log(2.0 * math.pi)


class SamplerError(ValueError):
    """Raised for invalid sampler inputs or a chain that cannot start."""


@runtime_checkable
class LogTargetEstimator(Protocol):
    """Noisy log-target: fresh auxiliary randomness on every evaluate call."""

    dimension: int

    def evaluate(self, x: np.ndarray, rng: np.random.Generator) -> tuple[float, float]:
        """Return (log pi_hat(x), cost)."""
        ...


def standard_gaussian_log_density(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    return float(-0.5 * (x @ x) - 0.5 * x.size * _LOG_2PI)


@dataclass(frozen=True)
class ExactTarget:
    """A log density evaluated without noise; cost one unit per call."""

    log_density: Callable[[np.ndarray], float]
    dimension: int

    def evaluate(self, x: np.ndarray, rng: np.random.Generator) -> tuple[float, float]:
        return float(self.log_density(x)), 1.0


@dataclass(frozen=True)
class NoisyGaussianTarget:
    """
    Standard Gaussian target in `dimension` coordinates with independent
    additive log-noise W* drawn from `noise` at every evaluation.

    Without an explicit cost, each evaluation costs 1/sigma2 units (the standard
    asymptotic regime, where sigma2 ~ c/m), or one unit when noise-free.
    """

    dimension: int
    noise: NoiseModel = field(default_factory=NoiseModel.none)
    cost: Optional[float] = None

    def __post_init__(self):
        if self.dimension < 1:
            raise SamplerError(f"dimension must be >= 1, got {self.dimension}")

    @property
    def evaluation_cost(self) -> float:
        if self.cost is not None:
            return float(self.cost)
        return 1.0 / self.noise.sigma2 if self.noise.sigma2 > 0 else 1.0

    def exact_log_density(self, x: np.ndarray) -> float:
        return standard_gaussian_log_density(x)

    def evaluate(self, x: np.ndarray, rng: np.random.Generator) -> tuple[float, float]:
        w_star = sample_proposal_noise(self.noise, rng, 1)[0]
        return standard_gaussian_log_density(x) + float(w_star), self.evaluation_cost


def _check_vector(x, dimension: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (dimension,):
        raise SamplerError(f"{what} must have shape ({dimension},), got {x.shape}")
    return x


@dataclass(frozen=True, eq=False)
class ProposalSpec:
    """Random-walk proposal x* = x + scale_lambda * covariance_root @ z, z ~ N(0, I)."""

    scale_lambda: float
    covariance_root: np.ndarray

    def __post_init__(self):
        if not (math.isfinite(self.scale_lambda) and self.scale_lambda > 0):
            raise SamplerError(f"scale_lambda must be positive, got {self.scale_lambda}")
        root = np.asarray(self.covariance_root, dtype=float)
        if root.ndim != 2 or root.shape[0] != root.shape[1]:
            raise SamplerError(f"covariance_root must be square, got shape {root.shape}")
        if not np.allclose(root, np.tril(root)):
            raise SamplerError("covariance_root must be lower triangular")
        if not np.all(np.diag(root) > 0):
            raise SamplerError("covariance_root must have a strictly positive diagonal")
        object.__setattr__(self, "covariance_root", root)

    @property
    def dimension(self) -> int:
        return self.covariance_root.shape[0]

    @classmethod
    def identity(cls, scale_lambda: float, dimension: int) -> "ProposalSpec":
        return cls(scale_lambda, np.eye(dimension))

    @classmethod
    def from_covariance(cls, scale_lambda: float, covariance) -> "ProposalSpec":
        try:
            root = np.linalg.cholesky(np.asarray(covariance, dtype=float))
        except np.linalg.LinAlgError as e:
            raise SamplerError(f"proposal covariance is not positive definite: {e}") from e
        return cls(scale_lambda, root)

    @classmethod
    def scaled(
        cls,
        gamma: float,
        covariance=None,
        dimension: Optional[int] = None,
    ) -> "ProposalSpec":
        """Proposal with covariance gamma^2 (2.56^2 / d) covariance; identity when none is given."""
        if covariance is None:
            if dimension is None:
                raise SamplerError("need a covariance or a dimension")
            covariance = np.eye(dimension)
        covariance = np.atleast_2d(np.asarray(covariance, dtype=float))
        d = covariance.shape[0]
        return cls.from_covariance(gamma * PROPOSAL_SCALE_CONSTANT / math.sqrt(d), covariance)

    def draw(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal(self.dimension)
        return x + self.scale_lambda * (self.covariance_root @ z)


@dataclass(frozen=True)
class ChainState:
    position: np.ndarray
    stored_log_estimate: float
    iteration: int = 0


@dataclass(frozen=True)
class ProposalRecord:
    position: np.ndarray
    log_estimate: float
    cost: float
    log_ratio: float


class StepResult(NamedTuple):
    state: ChainState
    accepted: bool
    proposal: ProposalRecord


def initialize_chain(
    initial,
    estimator: LogTargetEstimator,
    rng: np.random.Generator,
) -> tuple[ChainState, float]:
    """Evaluate the estimator once at the start point; returns the state and the cost."""
    x = _check_vector(initial, estimator.dimension, "initial position")
    log_estimate, cost = estimator.evaluate(x, rng)
    if not math.isfinite(log_estimate):
        raise SamplerError(
            f"log-target estimate at the initial position is {log_estimate}; "
            "a chain needs a positive density estimate to start"
        )
    return ChainState(x.copy(), float(log_estimate)), float(cost)


def step(
    state: ChainState,
    estimator: LogTargetEstimator,
    proposal: ProposalSpec,
    rng: np.random.Generator,
) -> StepResult:
    """One pseudo-marginal Metropolis update."""
    if state.position.shape != (estimator.dimension,):
        raise SamplerError(
            f"state has dimension {state.position.size}, estimator expects {estimator.dimension}"
        )
    if proposal.dimension != estimator.dimension:
        raise SamplerError(
            f"proposal has dimension {proposal.dimension}, estimator expects {estimator.dimension}"
        )

    x_star = proposal.draw(state.position, rng)
    log_estimate, cost = estimator.evaluate(x_star, rng)
    log_estimate = float(log_estimate)
    u = rng.random()

    # NaN and -inf estimates are certain rejections
    if math.isnan(log_estimate) or log_estimate == -math.inf:
        log_ratio = -math.inf
        accepted = False
    else:
        log_ratio = log_estimate - state.stored_log_estimate
        accepted = log_ratio >= 0 or u < math.exp(log_ratio)

    record = ProposalRecord(x_star, log_estimate, float(cost), log_ratio)
    if accepted:
        new_state = ChainState(x_star, log_estimate, state.iteration + 1)
    else:
        new_state = ChainState(state.position, state.stored_log_estimate, state.iteration + 1)
    return StepResult(new_state, accepted, record)


@dataclass(frozen=True, eq=False)
class ChainTrace:
    """Thinned record of a run: one row per kept iteration."""

    iterations: np.ndarray
    accepted: np.ndarray
    log_estimates: np.ndarray
    positions: np.ndarray

    def __len__(self) -> int:
        return self.iterations.size

    @property
    def is_complete(self) -> bool:
        """True when every iteration 1..n has a row, so rejection runs are intact."""
        return bool(self.iterations.size) and np.array_equal(
            self.iterations, np.arange(1, self.iterations.size + 1)
        )

    def to_frame(self) -> pd.DataFrame:
        """Columns iter, accepted, log_estimate, x_1..x_d."""
        frame = pd.DataFrame(
            {
                "iter": self.iterations,
                "accepted": self.accepted.astype(int),
                "log_estimate": self.log_estimates,
            }
        )
        for j in range(self.positions.shape[1]):
            frame[f"x_{j + 1}"] = self.positions[:, j]
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "ChainTrace":
        x_columns = sorted(
            (c for c in frame.columns if c.startswith("x_")),
            key=lambda c: int(c[2:]),
        )
        return cls(
            iterations=frame["iter"].to_numpy(dtype=int),
            accepted=frame["accepted"].to_numpy(dtype=bool),
            log_estimates=frame["log_estimate"].to_numpy(dtype=float),
            positions=frame[x_columns].to_numpy(dtype=float),
        )


@dataclass(frozen=True, eq=False)
class RunStatistics:
    acceptance_rate: float
    esjd: float
    esjd_metric: np.ndarray
    ess_per_coordinate: np.ndarray
    total_cost: float
    n_iters: int
    n_accepted: int
    accepted: np.ndarray = field(repr=False)
    samples: np.ndarray = field(repr=False)
    final_state: ChainState = field(repr=False)
    trace: Optional[ChainTrace] = field(default=None, repr=False)

    @property
    def min_ess(self) -> float:
        return float(np.min(self.ess_per_coordinate))

    @property
    def min_ess_per_cost(self) -> float:
        """Minimum effective sample size per declared cost unit."""
        return self.min_ess / self.total_cost if self.total_cost > 0 else math.nan

    @property
    def acceptance_std_error(self) -> float:
        return batch_means_std_error(self.accepted.astype(float))

    @property
    def sticky_histogram(self) -> np.ndarray:
        """Rejection-run counts over every iteration, whatever the thinning."""
        return sticky_patch_histogram(self.accepted)

    @property
    def max_sticky_patch(self) -> int:
        return max_sticky_patch(self.accepted)

    def summary(self) -> dict:
        return {
            "n_iters": self.n_iters,
            "n_accepted": self.n_accepted,
            "acceptance_rate": self.acceptance_rate,
            "acceptance_std_error": self.acceptance_std_error,
            "esjd": self.esjd,
            "min_ess": self.min_ess,
            "ess_per_coordinate": self.ess_per_coordinate.tolist(),
            "total_cost": self.total_cost,
            "min_ess_per_cost": self.min_ess_per_cost,
            "max_sticky_patch": self.max_sticky_patch,
        }


def run_chain(
    initial: Union[np.ndarray, ChainState],
    estimator: LogTargetEstimator,
    proposal: ProposalSpec,
    n_iters: int,
    metric: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
    record: bool = False,
    thin: int = 1,
) -> RunStatistics:
    """
    Run n_iters pseudo-marginal updates.

    Args:
        initial: start position (evaluated once, cost included) or a ChainState
            whose stored estimate is reused
        metric: matrix T for the jump distance <dx, T dx>; identity by default
        record: keep a thinned ChainTrace
        thin: keep every thin-th iteration for ESS and the trace

    ESS is computed on the kept (thinned) positions.
    """
    if n_iters < 1:
        raise SamplerError(f"n_iters must be >= 1, got {n_iters}")
    if thin < 1:
        raise SamplerError(f"thin must be >= 1, got {thin}")
    rng = rng if rng is not None else np.random.default_rng()
    d = estimator.dimension

    if metric is None:
        metric = np.eye(d)
    metric = np.asarray(metric, dtype=float)
    if metric.shape != (d, d):
        raise SamplerError(f"metric must have shape ({d}, {d}), got {metric.shape}")

    if isinstance(initial, ChainState):
        state = initial
        _check_vector(state.position, d, "initial position")
        total_cost = 0.0
    else:
        state, total_cost = initialize_chain(initial, estimator, rng)

    n_kept = n_iters // thin
    accepted = np.zeros(n_iters, dtype=bool)
    samples = np.empty((n_kept, d))
    kept_estimates = np.empty(n_kept)
    jump_total = 0.0

    for i in range(n_iters):
        previous = state.position
        state, was_accepted, proposed = step(state, estimator, proposal, rng)
        total_cost += proposed.cost
        if was_accepted:
            accepted[i] = True
            delta = state.position - previous
            jump_total += float(delta @ metric @ delta)
        if (i + 1) % thin == 0:
            k = (i + 1) // thin - 1
            samples[k] = state.position
            kept_estimates[k] = state.stored_log_estimate

    n_accepted = int(accepted.sum())
    ess = effective_sample_size(samples) if n_kept >= 4 else np.full(d, float(n_kept))

    trace = None
    if record:
        kept_iters = np.arange(1, n_kept + 1) * thin
        trace = ChainTrace(
            iterations=kept_iters,
            accepted=accepted[kept_iters - 1],
            log_estimates=kept_estimates,
            positions=samples,
        )

    logger.debug(
        "chain finished: %d iterations, %d accepted, cost %.3g", n_iters, n_accepted, total_cost
    )
    return RunStatistics(
        acceptance_rate=n_accepted / n_iters,
        esjd=jump_total / n_iters,
        esjd_metric=metric,
        ess_per_coordinate=np.atleast_1d(ess),
        total_cost=total_cost,
        n_iters=n_iters,
        n_accepted=n_accepted,
        accepted=accepted,
        samples=samples,
        final_state=state,
        trace=trace,
    )


def _autocorrelation(x: np.ndarray) -> np.ndarray:
    """Normalised autocorrelation of a 1-D series via zero-padded FFT."""
    n = x.size
    centred = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    spectrum = rfft(centred, n=size)
    acov = irfft(spectrum * np.conjugate(spectrum), n=size)[:n]
    return acov / acov[0]


def _ess_1d(x: np.ndarray) -> float:
    n = x.size
    if np.ptp(x) == 0:
        return 1.0
    rho = _autocorrelation(x)
    # Geyer: sum pairs rho[2k] + rho[2k+1] while they stay positive
    n_pairs = n // 2
    pairs = rho[: 2 * n_pairs].reshape(n_pairs, 2).sum(axis=1)
    non_positive = np.flatnonzero(pairs <= 0)
    cutoff = non_positive[0] if non_positive.size else n_pairs
    tau = -1.0 + 2.0 * pairs[:cutoff].sum()
    return n / tau if tau > 0 else float(n)


def effective_sample_size(chain) -> np.ndarray | float:
    """
    Effective sample size by Geyer's initial positive sequence.

    A 1-D chain gives a float; an (n, d) array gives one value per column.
    """
    x = np.asarray(chain, dtype=float)
    if x.shape[0] < 4:
        raise SamplerError(f"need at least 4 samples for an ESS estimate, got {x.shape[0]}")
    if x.ndim == 1:
        return _ess_1d(x)
    return np.array([_ess_1d(x[:, j]) for j in range(x.shape[1])])


def batch_means_std_error(values, n_batches: int = 50) -> float:
    """Standard error of the mean of a correlated series by non-overlapping batch means."""
    values = np.asarray(values, dtype=float)
    batch = values.size // n_batches
    if batch < 1:
        return float(np.std(values, ddof=1) / math.sqrt(values.size)) if values.size > 1 else math.nan
    means = values[: batch * n_batches].reshape(n_batches, batch).mean(axis=1)
    return float(np.std(means, ddof=1) / math.sqrt(n_batches))


def _accepted_flags(trace) -> np.ndarray:
    if isinstance(trace, ChainTrace):
        if not trace.is_complete:
            raise SamplerError(
                "sticky patch histogram needs every iteration; this trace is thinned "
                "(use RunStatistics.sticky_histogram or a thin=1 trace)"
            )
        return np.asarray(trace.accepted, dtype=bool)
    if isinstance(trace, RunStatistics):
        return np.asarray(trace.accepted, dtype=bool)
    return np.asarray(trace, dtype=bool)


def sticky_patch_histogram(trace) -> np.ndarray:
    """
    Counts of consecutive-rejection run lengths; entry k is the number of runs of length k.

    Each acceptance closes the run of rejections since the previous acceptance
    (length 0 when two acceptances are adjacent); a trailing run of rejections
    counts as a run of its own. Accepts a ChainTrace, RunStatistics or a
    boolean accepted array; a thinned ChainTrace raises SamplerError.
    """
    flags = _accepted_flags(trace)
    if flags.size == 0:
        raise SamplerError("sticky patch histogram needs a non-empty trace")
    accept_idx = np.flatnonzero(flags)
    # rejections between consecutive acceptances, including before the first one
    gaps = np.diff(np.concatenate(([-1], accept_idx))) - 1
    trailing = flags.size - 1 - (accept_idx[-1] if accept_idx.size else -1)
    if trailing > 0:
        gaps = np.append(gaps, trailing)
    return np.bincount(gaps.astype(int))


def max_sticky_patch(trace) -> int:
    return int(sticky_patch_histogram(trace).size - 1)


def predicted_acceptance(sigma2: float, gamma: float) -> float:
    """Limiting acceptance 2 Phi(-sqrt(2 sigma2 + gamma^2 2.56^2) / 2) of a study cell."""
    if sigma2 < 0 or gamma < 0:
        raise SamplerError("sigma2 and gamma must be non-negative")
    scale2 = (gamma * PROPOSAL_SCALE_CONSTANT) ** 2
    return float(2.0 * normal_cdf(-0.5 * math.sqrt(2.0 * sigma2 + scale2)))
