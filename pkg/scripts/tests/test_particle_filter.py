"""
Tests for the bootstrap particle filter.

These tests validate:
- Unbiasedness of the likelihood estimate against the Kalman filter
- The variance of the log estimate falling like 1/m
- Systematic and multinomial resampling
- Zero-weight steps, prior support and configuration errors
"""

import math

import numpy as np
import pytest
from scipy import stats

from particle_filter import (
    LinearGaussianSpec,
    ParticleFilterConfig,
    ParticleFilterError,
    ParticleMarginalEstimator,
    ResamplingScheme,
    StateSpaceModel,
    bootstrap_log_likelihood,
    kalman_log_likelihood,
    linear_gaussian_model,
    multinomial_resample,
    simulate_linear_gaussian,
    systematic_resample,
)

SPEC = LinearGaussianSpec()


@pytest.fixture
def lg_data(rng):
    """Twenty observations from the default linear-Gaussian model."""
    latent, observations = simulate_linear_gaussian(SPEC, 20, rng)
    return linear_gaussian_model(observations, latent_states=latent)


def log_estimates(model, m, runs, rng, scheme=ResamplingScheme.SYSTEMATIC) -> np.ndarray:
    config = ParticleFilterConfig(m=m, resampling=scheme)
    return np.array([bootstrap_log_likelihood(model, SPEC, config, rng)[0] for _ in range(runs)])


class TestKalmanOracle:
    """Tests for the exact linear-Gaussian likelihood."""

    def test_single_observation(self):
        """Verify one step reduces to a single normal density."""
        spec = LinearGaussianSpec(a=0.5, c=2.0, q=0.3, r=0.7, m0=1.0, p0=2.0)
        variance = spec.c**2 * (spec.a**2 * spec.p0 + spec.q) + spec.r
        expected = stats.norm.logpdf(1.2, spec.c * spec.a * spec.m0, math.sqrt(variance))
        assert kalman_log_likelihood(spec, [1.2]) == pytest.approx(expected, rel=1e-12)

    def test_nonpositive_variance(self):
        """Verify q, r and p0 must be positive."""
        with pytest.raises(ParticleFilterError):
            LinearGaussianSpec(q=0.0)


class TestUnbiasedness:
    """Tests for E[exp(log estimate - exact)] = 1."""

    def test_density_domain_unbiased(self, lg_data, rng):
        """Verify the likelihood ratio averages to one at m = 100."""
        exact = kalman_log_likelihood(SPEC, lg_data.observations)
        ratios = np.exp(log_estimates(lg_data, 100, 2000, rng) - exact)
        std_error = ratios.std(ddof=1) / math.sqrt(ratios.size)
        assert abs(ratios.mean() - 1.0) <= 4 * std_error

    @pytest.mark.slow
    @pytest.mark.parametrize("m", [10, 100])
    def test_unbiased_many_runs(self, lg_data, m: int, rng):
        """Verify unbiasedness over 10^4 runs at small and moderate m."""
        exact = kalman_log_likelihood(SPEC, lg_data.observations)
        ratios = np.exp(log_estimates(lg_data, m, 10_000, rng) - exact)
        std_error = ratios.std(ddof=1) / math.sqrt(ratios.size)
        assert abs(ratios.mean() - 1.0) <= 4 * std_error

    def test_schemes_agree(self, lg_data, rng):
        """Verify systematic and multinomial resampling give the same mean estimate."""
        exact = kalman_log_likelihood(SPEC, lg_data.observations)
        systematic = np.exp(log_estimates(lg_data, 50, 1500, rng) - exact)
        multinomial = np.exp(log_estimates(lg_data, 50, 1500, rng, ResamplingScheme.MULTINOMIAL) - exact)
        difference = systematic.mean() - multinomial.mean()
        std_error = math.sqrt(systematic.var(ddof=1) / systematic.size + multinomial.var(ddof=1) / multinomial.size)
        assert abs(difference) <= 4 * std_error

    @pytest.mark.slow
    def test_variance_slope(self, rng):
        """Verify log Var of the log estimate falls with slope -1 in log m."""
        _, observations = simulate_linear_gaussian(SPEC, 10, rng)
        model = linear_gaussian_model(observations)
        ms = np.array([25, 50, 100, 200, 400])
        variances = [log_estimates(model, int(m), 800, rng).var(ddof=1) for m in ms]
        slope, _ = np.polyfit(np.log(ms), np.log(variances), 1)
        assert slope == pytest.approx(-1.0, abs=0.1)


class TestFilter:
    """Tests for the filter mechanics."""

    def test_cost(self, lg_data, rng):
        """Verify cost is m times the number of observation intervals."""
        _, cost = bootstrap_log_likelihood(lg_data, SPEC, ParticleFilterConfig(m=30), rng)
        assert cost == 30 * 20

    def test_config_seed_reproducible(self, lg_data):
        """Verify the config seed fixes the estimate when no generator is passed."""
        config = ParticleFilterConfig(m=40, seed=7)
        first, _ = bootstrap_log_likelihood(lg_data, SPEC, config)
        second, _ = bootstrap_log_likelihood(lg_data, SPEC, config)
        assert first == second

    def test_all_weights_zero(self, rng):
        """Verify an impossible observation gives -inf."""
        model = StateSpaceModel(
            initial_state_sampler=lambda p, m, r: np.zeros(m),
            transition_simulator=lambda x, t0, t1, p, r: x,
            observation_log_density=lambda y, x, p: np.full(x.size, -np.inf),
            observation_times=np.array([1.0, 2.0]),
            observations=np.array([0.0, 0.0]),
        )
        log_estimate, cost = bootstrap_log_likelihood(model, None, ParticleFilterConfig(m=5), rng)
        assert log_estimate == -math.inf
        assert cost == 10

    def test_nan_weights_are_zero(self, rng):
        """Verify NaN log weights count as zero weight."""
        model = StateSpaceModel(
            initial_state_sampler=lambda p, m, r: np.arange(m, dtype=float),
            transition_simulator=lambda x, t0, t1, p, r: x,
            observation_log_density=lambda y, x, p: np.where(x == 0, 0.0, np.nan),
            observation_times=np.array([1.0]),
            observations=np.array([0.0]),
        )
        log_estimate, _ = bootstrap_log_likelihood(model, None, ParticleFilterConfig(m=4), rng)
        assert log_estimate == pytest.approx(math.log(1 / 4))

    def test_times_must_increase(self):
        """Verify repeated observation times are rejected."""
        with pytest.raises(ParticleFilterError):
            StateSpaceModel(None, None, None, np.array([1.0, 1.0]), np.array([0.0, 0.0]))

    def test_observation_count_mismatch(self):
        """Verify observations and times must line up."""
        with pytest.raises(ParticleFilterError):
            StateSpaceModel(None, None, None, np.array([1.0, 2.0]), np.array([0.0]))


class TestResampling:
    """Tests for the resampling schemes."""

    def test_systematic_counts(self, rng):
        """Verify each index is copied floor or ceil of m w_i times."""
        weights = np.array([0.1, 0.25, 0.05, 0.6])
        m = weights.size
        for _ in range(50):
            counts = np.bincount(systematic_resample(weights, rng), minlength=m)
            assert counts.sum() == m
            assert np.all(counts >= np.floor(m * weights))
            assert np.all(counts <= np.ceil(m * weights))

    def test_point_mass(self, rng):
        """Verify a single non-zero weight is always selected."""
        weights = np.array([0.0, 1.0, 0.0])
        assert systematic_resample(weights, rng).tolist() == [1, 1, 1]
        assert multinomial_resample(weights, rng).tolist() == [1, 1, 1]

    def test_systematic_indices_in_range(self, rng):
        """Verify rounding in the cumulative sum never yields index m."""
        weights = np.full(7, 1 / 7)
        assert systematic_resample(weights, rng).max() < 7


class TestConfig:
    """Tests for filter configuration."""

    def test_bad_particle_count(self):
        """Verify m < 1 is rejected."""
        with pytest.raises(ParticleFilterError):
            ParticleFilterConfig(m=0)

    def test_unknown_scheme(self):
        """Verify an unknown resampling scheme is rejected."""
        with pytest.raises(ParticleFilterError):
            ParticleFilterConfig(m=10, resampling="stratified")

    def test_from_dict(self):
        """Verify config dicts are parsed with a systematic default."""
        config = ParticleFilterConfig.from_dict({"m": 25})
        assert config.m == 25
        assert config.resampling is ResamplingScheme.SYSTEMATIC
        assert ParticleFilterConfig.from_dict({"m": 5, "resampling": "multinomial"}).resampling is ResamplingScheme.MULTINOMIAL


class TestMarginalEstimator:
    """Tests for the pseudo-marginal wrapper."""

    def test_outside_prior(self, lg_data, rng):
        """Verify points outside the prior skip the filter."""
        estimator = ParticleMarginalEstimator(
            model=lg_data,
            config=ParticleFilterConfig(m=10),
            dimension=1,
            to_params=lambda theta: SPEC,
            log_prior=lambda theta: 0.0 if abs(theta[0]) < 1 else -math.inf,
        )
        assert estimator.evaluate(np.array([2.0]), rng) == (-math.inf, 0.0)
        log_estimate, cost = estimator.evaluate(np.array([0.5]), rng)
        assert math.isfinite(log_estimate)
        assert cost == 10 * 20
