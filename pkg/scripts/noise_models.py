"""
Noise laws for the estimated log-target.

A pseudo-marginal chain sees log pi_hat(x) = log pi(x) + W. This module holds the
law g* of the proposal-side noise W*, the exponentially tilted law e^w g*(w)
that W follows at stationarity, and the difference B = W* - W that perturbs the
acceptance ratio.

Supported families:
- none:      W* = 0
- gaussian:  W* ~ N(-sigma2/2, sigma2)
- laplace:   W* ~ Laplace(log(1 - sigma2/2), sqrt(sigma2/2)), sigma2 in (0, 2)
- empirical: resampled draws, recentred so the sample mean of e^{w*} is 1

Laplace noise needs sigma2 < 2 for the location to exist.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from scipy import stats
from scipy.special import logsumexp, softmax

logger = logging.getLogger(__name__)


class NoiseModelError(ValueError):
    """Raised for an invalid noise model or an unsupported operation on one."""


class NoiseKind(str, Enum):
    NONE = "none"
    GAUSSIAN = "gaussian"
    LAPLACE = "laplace"
    EMPIRICAL = "empirical"


def recentre_log_weights(w: np.ndarray) -> np.ndarray:
    """Shift log-noise draws so that the sample mean of exp(w) is exactly 1."""
    w = np.asarray(w, dtype=float)
    return w - (logsumexp(w) - math.log(w.size))


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """
    Distribution of the additive noise W* in the estimated log-target.

    Build instances through the classmethods rather than the constructor.
    """

    kind: NoiseKind
    sigma2: float = 0.0
    raw_samples: Optional[np.ndarray] = field(default=None, repr=False)
    samples: Optional[np.ndarray] = field(default=None, repr=False)
    samples_path: Optional[str] = None

    def __post_init__(self):
        if self.kind is NoiseKind.NONE:
            if self.sigma2 != 0.0:
                raise NoiseModelError("none noise model must have sigma2 = 0")
        elif self.kind is NoiseKind.GAUSSIAN:
            if not self.sigma2 > 0:
                raise NoiseModelError(f"gaussian noise needs sigma2 > 0, got {self.sigma2}")
        elif self.kind is NoiseKind.LAPLACE:
            if not 0 < self.sigma2 < 2:
                raise NoiseModelError(
                    f"laplace noise needs 0 < sigma2 < 2 so that log(1 - sigma2/2) "
                    f"exists, got {self.sigma2}"
                )
        elif self.kind is NoiseKind.EMPIRICAL:
            if self.samples is None or self.samples.size == 0:
                raise NoiseModelError("empirical noise model needs at least one sample")

    # Construction

    @classmethod
    def none(cls) -> "NoiseModel":
        return cls(NoiseKind.NONE)

    @classmethod
    def gaussian(cls, sigma2: float) -> "NoiseModel":
        return cls(NoiseKind.GAUSSIAN, float(sigma2))

    @classmethod
    def laplace(cls, sigma2: float) -> "NoiseModel":
        return cls(NoiseKind.LAPLACE, float(sigma2))

    @classmethod
    def empirical(
        cls,
        samples,
        samples_path: Optional[str] = None,
    ) -> "NoiseModel":
        """Build an empirical model from raw w* draws; recentring happens once here."""
        raw = np.array(samples, dtype=float).ravel()
        if raw.size == 0:
            raise NoiseModelError("empirical noise model needs at least one sample")
        if not np.all(np.isfinite(raw)):
            raise NoiseModelError("empirical noise samples must be finite")
        recentred = recentre_log_weights(raw)
        raw.setflags(write=False)
        recentred.setflags(write=False)
        return cls(
            NoiseKind.EMPIRICAL,
            float(np.var(recentred)),
            raw_samples=raw,
            samples=recentred,
            samples_path=samples_path,
        )

    @classmethod
    def from_variance(cls, kind: str | NoiseKind, sigma2: float) -> "NoiseModel":
        """Parametric model with the none model standing in for sigma2 = 0."""
        kind = NoiseKind(kind)
        if sigma2 == 0 or kind is NoiseKind.NONE:
            return cls.none()
        if kind is NoiseKind.GAUSSIAN:
            return cls.gaussian(sigma2)
        if kind is NoiseKind.LAPLACE:
            return cls.laplace(sigma2)
        raise NoiseModelError(f"no variance parameterisation for {kind.value} noise")

    @classmethod
    def from_dict(cls, data: dict, base_dir: Optional[Path] = None) -> "NoiseModel":
        """Load from the JSON form {"kind", "sigma2", "samples_path"}."""
        try:
            kind = NoiseKind(data["kind"])
        except (KeyError, ValueError) as e:
            raise NoiseModelError(f"invalid noise kind: {data.get('kind')!r}") from e

        if kind is NoiseKind.EMPIRICAL:
            path = data.get("samples_path")
            if not path:
                raise NoiseModelError("empirical noise model needs samples_path")
            resolved = Path(path)
            if base_dir is not None and not resolved.is_absolute():
                resolved = base_dir / resolved
            samples = load_noise_samples(resolved)
            logger.debug("Loaded %d noise samples from %s", samples.size, resolved)
            return cls.empirical(samples, samples_path=str(path))
        if kind is NoiseKind.NONE:
            return cls.none()
        return cls(kind, float(data.get("sigma2", 0.0)))

    def to_dict(self) -> dict:
        data = {"kind": self.kind.value, "sigma2": self.sigma2}
        if self.samples_path is not None:
            data["samples_path"] = self.samples_path
        return data

    # Derived quantities

    @property
    def has_closed_form(self) -> bool:
        """Whether acceptance-type expectations have a closed form."""
        return self.kind in (NoiseKind.NONE, NoiseKind.GAUSSIAN)

    @property
    def laplace_location(self) -> float:
        return math.log(1.0 - self.sigma2 / 2.0)

    @property
    def laplace_scale(self) -> float:
        return math.sqrt(self.sigma2 / 2.0)


@dataclass(frozen=True)
class NoiseDifferenceSample:
    """Draws of B = W* - W with the W* and W draws that produced them."""

    b: np.ndarray
    w_star: np.ndarray
    w: np.ndarray

    def __len__(self) -> int:
        return self.b.size


def load_noise_samples(path: Path) -> np.ndarray:
    """Read a one-column CSV of w* values (an optional header row is skipped)."""
    frame = pd.read_csv(path, header=None, comment="#")
    values = pd.to_numeric(frame.iloc[:, 0], errors="coerce").dropna()
    if values.empty:
        raise NoiseModelError(f"no numeric noise samples in {path}")
    return values.to_numpy(dtype=float)


def _check_count(n: int):
    if n < 1:
        raise NoiseModelError(f"sample count must be >= 1, got {n}")


def sample_proposal_noise(
    model: NoiseModel,
    rng: np.random.Generator,
    n: int,
) -> np.ndarray:
    """Draw n i.i.d. values of W* from g*."""
    _check_count(n)
    if model.kind is NoiseKind.NONE:
        return np.zeros(n)
    if model.kind is NoiseKind.GAUSSIAN:
        return rng.normal(-model.sigma2 / 2.0, math.sqrt(model.sigma2), size=n)
    if model.kind is NoiseKind.LAPLACE:
        return rng.laplace(model.laplace_location, model.laplace_scale, size=n)
    return rng.choice(model.samples, size=n, replace=True)


def _sample_tilted_laplace(
    location: float,
    scale: float,
    rng: np.random.Generator,
    n: int,
) -> np.ndarray:
    """
    Exact draws from the density proportional to e^w Laplace(w; location, scale).

    The tilted density is piecewise exponential around the location: rate
    1 + 1/scale to the left (mass (1 - scale)/2) and rate 1/scale - 1 to the
    right (mass (1 + scale)/2). Each side is sampled by inverting its CDF.
    """
    left_rate = 1.0 + 1.0 / scale
    right_rate = 1.0 / scale - 1.0
    p_left = (1.0 - scale) / 2.0

    side = rng.random(n)
    u = rng.random(n)
    # -log(1 - u) is the inverse CDF of a unit exponential
    excursion = -np.log1p(-u)
    return np.where(
        side < p_left,
        location - excursion / left_rate,
        location + excursion / right_rate,
    )


def sample_stationary_noise(
    model: NoiseModel,
    rng: np.random.Generator,
    n: int,
) -> np.ndarray:
    """Draw n i.i.d. values of W from the tilted law e^w g*(w)."""
    _check_count(n)
    if model.kind is NoiseKind.NONE:
        return np.zeros(n)
    if model.kind is NoiseKind.GAUSSIAN:
        return rng.normal(model.sigma2 / 2.0, math.sqrt(model.sigma2), size=n)
    if model.kind is NoiseKind.LAPLACE:
        return _sample_tilted_laplace(model.laplace_location, model.laplace_scale, rng, n)
    weights = softmax(model.samples)
    return rng.choice(model.samples, size=n, replace=True, p=weights)


def sample_noise_difference(
    model: NoiseModel,
    rng: np.random.Generator,
    n: int,
) -> NoiseDifferenceSample:
    """Draw W at stationarity and an independent W*, returning B = W* - W."""
    w = sample_stationary_noise(model, rng, n)
    w_star = sample_proposal_noise(model, rng, n)
    return NoiseDifferenceSample(b=w_star - w, w_star=w_star, w=w)


def b_log_density(model: NoiseModel, b) -> np.ndarray:
    """Log density of B; closed form only for Gaussian noise, B ~ N(-sigma2, 2 sigma2)."""
    if model.kind is not NoiseKind.GAUSSIAN:
        raise NoiseModelError(
            f"closed-form density of B is only available for gaussian noise, "
            f"not {model.kind.value}"
        )
    return stats.norm.logpdf(b, loc=-model.sigma2, scale=math.sqrt(2.0 * model.sigma2))


def b_density_ratio_check(model: NoiseModel, b: float) -> tuple[float, float]:
    """Both sides of rho(b) = e^{-b} rho(-b)."""
    lhs = math.exp(float(b_log_density(model, b)))
    rhs = math.exp(-b + float(b_log_density(model, -b)))
    return lhs, rhs
