"""
Tests for the command scripts.

These tests validate:
- Shared argument parsing, config loading and the JSON error line on failure
- The theory grid, including Laplace warning rows and seeded reproducibility
- The optimizer report and the finite-dimension table
- The pilot run and the (m, gamma) simulation study on small settings
- Diagnostics computed from the files the study writes
"""

import json
import math
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from diagnose import apply_path_overrides, diagnose, load_noise_samples_by_m
from finite_d_table import finite_d_table
from limit_theory import finite_d_gaussian
from lotka_volterra import TRUE_PARAMS, lv_data_from_config, pmrwm_log_posterior_estimator
from noise_diagnostics import collect_noise_sample
from optimize_tuning import optimize_report
from particle_filter import ParticleFilterConfig
from pilot_run import pilot_run
from pmrwm_run import CELL_COLUMNS, STICKY_COLUMNS, run_simulation_study, write_study_outputs
from psm_sampler import PROPOSAL_SCALE_CONSTANT
from run_io import (
    Command,
    ConfigError,
    RunManifest,
    build_parser,
    load_json,
    read_csv,
    run_command,
    scaled_settings,
    start_run,
    write_csv,
)
from theory_grid import COLUMNS, LAPLACE_WARNING, best_ell_by_row, grid_cells, theory_grid

GRID_CONFIG = {
    "ell": {"min": 0.5, "max": 3.0, "n": 6},
    "sigma": [0.0, 1.0, 1.5],
    "noise_kinds": ["gaussian", "laplace"],
    "mc_budget": 2000,
}

GAUSSIAN_STUDY = {
    "target": "gaussian",
    "gaussian": {"dimension": 2, "variance_constant": 40.0},
    "m_grid": [20, 40, 80],
    "gamma_grid": [1.0],
    "n_iters": 1500,
    "noise_samples": 150,
    "write_traces": True,
}


def manifest_for(command: Command, tmp_path: Path, config: dict) -> RunManifest:
    return RunManifest(
        command=command,
        config_path="test.json",
        seed=0,
        output_dir=str(tmp_path),
        config=config,
        timestamp="20240101T000000",
    )


class TestSharedPlumbing:
    """Tests for the flags and error handling every command shares."""

    def test_parser_defaults(self):
        """Verify the default config path, seed and thread count."""
        args = build_parser(Command.OPTIMIZE, "test").parse_args([])
        assert args.config == Command.OPTIMIZE.default_config
        assert args.seed == 0
        assert args.threads == 1
        assert not hasattr(args, "paper_scale")

    def test_paper_scale_flag(self):
        """Verify commands with a full-size variant accept --paper-scale."""
        args = build_parser(Command.PMRWM_RUN, "test", paper_scale=True).parse_args(["--paper-scale"])
        assert args.paper_scale

    def test_start_run(self, tmp_path: Path):
        """Verify start_run validates the config and records seed and output dir."""
        args = build_parser(Command.OPTIMIZE, "test").parse_args(["--seed", "5", "--out", str(tmp_path)])
        manifest = start_run(Command.OPTIMIZE, args)
        assert manifest.seed == 5
        assert manifest.output_dir == str(tmp_path)
        assert manifest.config["tol"] > 0

    def test_bad_thread_count(self, tmp_path: Path):
        """Verify --threads 0 is a config error."""
        args = build_parser(Command.OPTIMIZE, "test").parse_args(["--threads", "0"])
        with pytest.raises(ConfigError):
            start_run(Command.OPTIMIZE, args)

    def test_error_line(self, capsys):
        """Verify a failing command prints one JSON error line and exits 1."""

        def failing():
            raise ConfigError(["tol: too large"])

        with pytest.raises(SystemExit) as excinfo:
            run_command(Command.OPTIMIZE, failing)
        assert excinfo.value.code == 1
        error = json.loads(capsys.readouterr().err.strip())
        assert error["error"] == "ConfigError"
        assert error["command"] == "optimize"
        assert "tol" in error["message"]


class TestTheoryGrid:
    """Tests for the (ell, sigma) sweep."""

    def test_layout(self):
        """Verify columns and one warning row for Laplace sigma2 >= 2."""
        frame = theory_grid(GRID_CONFIG, seed=1)
        assert list(frame.columns) == COLUMNS
        assert COLUMNS[:6] == ["ell", "sigma2", "alpha", "esjd", "j_rel", "eff"]
        assert len(frame) == 3 * 6 + 2 * 6 + 1
        warnings = frame[frame["warning"] != ""]
        assert len(warnings) == 1
        assert warnings.iloc[0]["warning"] == LAPLACE_WARNING
        assert warnings.iloc[0]["sigma2"] == pytest.approx(2.25)
        assert math.isnan(warnings.iloc[0]["alpha"])

    def test_cells_in_order(self):
        """Verify cells run over noise kind, then sigma, then ell."""
        cells = grid_cells(GRID_CONFIG)
        assert cells[0].noise == "gaussian"
        assert cells[0].sigma2 == 0.0
        assert cells[0].ell == 0.5
        assert cells[6].sigma2 == 1.0
        assert cells[-1].ell is None

    def test_seeded(self):
        """Verify the same seed gives the same grid and a new seed moves Monte Carlo rows."""
        first = theory_grid(GRID_CONFIG, seed=3)
        second = theory_grid(GRID_CONFIG, seed=3, threads=2)
        assert first.equals(second)
        other = theory_grid(GRID_CONFIG, seed=4)
        laplace = (first["noise"] == "laplace") & (first["sigma2"] == 1.0)
        assert not np.allclose(first.loc[laplace, "alpha"], other.loc[laplace, "alpha"])

    def test_noise_lowers_acceptance(self):
        """Verify Gaussian noise lowers the acceptance at every ell."""
        frame = theory_grid(GRID_CONFIG, seed=0)
        gaussian = frame[frame["noise"] == "gaussian"]
        exact = gaussian[gaussian["sigma2"] == 0.0]["alpha"].to_numpy()
        noisy = gaussian[gaussian["sigma2"] == 1.0]["alpha"].to_numpy()
        assert np.all(noisy < exact)

    def test_best_ell(self):
        """Verify the noise-free ESJD peaks at the grid point next to 2.38."""
        best = best_ell_by_row(theory_grid(GRID_CONFIG, seed=0))
        assert len(best) == 5
        exact = best[(best["noise"] == "gaussian") & (best["sigma2"] == 0.0)]
        assert exact.iloc[0]["ell"] == pytest.approx(2.5)

    def test_empirical_noise_models(self, tmp_path: Path, rng):
        """Verify noise_models entries add rows read from a CSV of draws."""
        np.savetxt(tmp_path / "noise.csv", rng.normal(-0.5, 1.0, size=500))
        config = {
            **GRID_CONFIG,
            "sigma": [1.0],
            "noise_kinds": ["gaussian"],
            "noise_models": [{"kind": "empirical", "samples_path": "noise.csv"}],
        }
        frame = theory_grid(config, seed=0, base_dir=tmp_path)
        empirical = frame[frame["noise"] == "empirical"]
        assert len(empirical) == 6
        assert empirical["alpha"].between(0, 1).all()

    def test_bad_noise_model(self, tmp_path: Path):
        """Verify an invalid noise_models entry is a config error."""
        config = {**GRID_CONFIG, "noise_models": [{"kind": "empirical"}]}
        with pytest.raises(ConfigError):
            grid_cells(config, tmp_path)


class TestOptimizeCommands:
    """Tests for the optimizer report and the finite-d table."""

    def test_optimize_report(self):
        """Verify the report sections and the rounded joint optimum."""
        report = optimize_report(
            {"tol": 1e-9, "sigma2_values": [1.0], "ell_values": [2.0], "t_rat_values": [1.0]}
        )
        assert set(report) == {"joint", "ell_given_sigma2", "sigma2_given_ell", "overhead"}
        assert report["joint"]["sigma2_opt"] == pytest.approx(3.283, abs=1e-3)
        assert 0 < report["ell_given_sigma2"][0]["alpha_opt"] < 1
        assert report["sigma2_given_ell"][0]["ell"] == 2.0
        assert report["overhead"][0]["t_rat"] == 1.0

    @pytest.mark.slow
    def test_finite_d_table(self):
        """Verify one row per dimension plus the limit row."""
        frame = finite_d_table({"dimensions": [1], "tol": 1e-6, "include_limit": True})
        assert frame["d"].tolist() == [1, "inf"]
        assert frame.iloc[1]["alpha_opt"] == pytest.approx(0.07, abs=1e-3)
        assert frame.iloc[0]["alpha_opt"] > frame.iloc[1]["alpha_opt"]


class TestFullScaleOverlay:
    """Tests for the --paper-scale settings overlay."""

    def test_lv_overlay(self):
        """Verify the full-size section replaces desk settings only when asked."""
        config = {"params": [1, 1, 1, 1, 1], "u0": [70, 70], "t_max": 10, "dt": 1, "paper": {"t_max": 50}}
        assert scaled_settings(config, False)["t_max"] == 10
        assert scaled_settings(config, True)["t_max"] == 50
        assert "paper" not in scaled_settings(config, True)

    def test_study_overlay(self):
        """Verify study grids come from the full-size section when asked."""
        config = {**GAUSSIAN_STUDY, "paper": {"m_grid": [50, 100], "n_iters": 250000}}
        assert scaled_settings(config, False)["m_grid"] == [20, 40, 80]
        assert scaled_settings(config, True)["n_iters"] == 250000


class TestPilotRun:
    """Tests for the LV pilot run."""

    def test_pilot_outputs(self, tmp_path: Path):
        """Verify x_hat and Var(X) have the five log-parameter dimensions."""
        config = {
            "data": {"synthesize": {"t_max": 3, "dt": 1, "seed": 2}},
            "m": 20,
            "proposal_sd": 0.05,
            "n_iters": 300,
            "burn_in": 100,
        }
        result = pilot_run(config, seed=1, base_dir=tmp_path)
        assert len(result["x_hat"]) == 5
        assert np.asarray(result["covariance"]).shape == (5, 5)
        assert result["n_samples"] > 0
        assert 0 <= result["statistics"]["acceptance_rate"] <= 1

    def test_burn_in_too_long(self, tmp_path: Path):
        """Verify burn_in >= n_iters is refused."""
        config = {
            "data": {"synthesize": {"t_max": 2, "seed": 2}},
            "m": 10,
            "proposal_sd": 0.05,
            "n_iters": 50,
            "burn_in": 50,
        }
        with pytest.raises(ValueError):
            pilot_run(config, seed=1, base_dir=tmp_path)


@pytest.fixture(scope="module")
def gaussian_report():
    """A small Gaussian-target study shared by the study and diagnostics tests."""
    return run_simulation_study(GAUSSIAN_STUDY, seed=11)


class TestSimulationStudy:
    """Tests for the (m, gamma) study on the Gaussian target."""

    def test_cells(self, gaussian_report):
        """Verify one row per (m, gamma) with the finite-d prediction column."""
        cells = gaussian_report.cells
        assert list(cells.columns) == CELL_COLUMNS + ["predicted_acceptance_finite_d"]
        assert cells["m"].tolist() == [20, 40, 80]
        assert (cells["total_cost"] > 0).all()
        assert gaussian_report.proposal_source == "target"
        assert gaussian_report.warnings == []

    def test_noise_variance_tracks_m(self, gaussian_report):
        """Verify sigma2_hat falls like c/m."""
        cells = gaussian_report.cells
        assert cells["sigma2_hat"].to_numpy() == pytest.approx([2.0, 1.0, 0.5], rel=0.4)
        slope = gaussian_report.slope()
        assert slope["slope"] == pytest.approx(-1.0, abs=0.4)

    def test_acceptance_matches_finite_d(self, gaussian_report):
        """Verify observed acceptance is within 3 standard errors of the exact finite-d prediction."""
        cells = gaussian_report.cells
        assert np.all(cells["predicted_acceptance_finite_d"].between(0, 1))
        lam = PROPOSAL_SCALE_CONSTANT / math.sqrt(2)
        for _, cell in cells.iterrows():
            # true noise variance, so sigma2_hat sampling error stays out of the comparison
            expected = finite_d_gaussian(lam, 2, 40.0 / cell["m"]).acceptance
            assert abs(cell["acceptance_rate"] - expected) <= 3 * cell["acceptance_std_error"]

    def test_sticky_histograms(self, gaussian_report):
        """Verify one full-chain histogram per cell, consistent with max_sticky_patch."""
        sticky = gaussian_report.sticky
        assert list(sticky.columns) == STICKY_COLUMNS
        for _, cell in gaussian_report.cells.iterrows():
            rows = sticky[sticky["m"] == cell["m"]]
            assert rows["run_length"].max() == cell["max_sticky_patch"]
            assert rows["count"].sum() >= round(cell["acceptance_rate"] * GAUSSIAN_STUDY["n_iters"])

    def test_outputs_written(self, gaussian_report, tmp_path: Path):
        """Verify every study file is written, with fixed-name copies of the noise and sticky files."""
        manifest = manifest_for(Command.PMRWM_RUN, tmp_path, GAUSSIAN_STUDY)
        paths = write_study_outputs(gaussian_report, manifest)
        assert paths["latest_noise"].name == "pmrwm-run-0-latest-noise.csv"
        assert paths["latest_sticky"].name == "pmrwm-run-0-latest-sticky.csv"
        assert read_csv(paths["latest_noise"]).equals(read_csv(paths["noise"]))
        assert list(read_csv(paths["sticky"]).columns) == STICKY_COLUMNS
        assert len(list(tmp_path.glob("*-trace-*.csv"))) == 3
        assert load_json(paths["report"])["manifest"]["seed"] == 0

    def test_traces_kept(self, gaussian_report):
        """Verify write_traces keeps one trace per cell."""
        assert set(gaussian_report.traces) == {(20, 1.0), (40, 1.0), (80, 1.0)}
        trace = gaussian_report.traces[(20, 1.0)]
        assert {"iter", "accepted", "log_estimate", "x_1", "x_2"} <= set(trace.columns)

    def test_report_dict(self, gaussian_report):
        """Verify the JSON report sections."""
        data = gaussian_report.to_dict()
        assert len(data["noise"]) == 3
        assert len(data["cells"]) == 3
        assert data["variance_vs_m"] is not None

    def test_seeded(self):
        """Verify the study is reproducible from its seed."""
        config = {**GAUSSIAN_STUDY, "n_iters": 200, "write_traces": False}
        first = run_simulation_study(config, seed=2)
        second = run_simulation_study(config, seed=2, threads=3)
        assert first.cells.equals(second.cells)

    def test_lv_without_pilot_warns(self, tmp_path: Path):
        """Verify an LV study without a pilot covariance falls back to the identity with a warning."""
        config = {
            "target": "lv",
            "data": {"synthesize": {"t_max": 2, "seed": 1}},
            "m_grid": [10],
            "gamma_grid": [0.1],
            "n_iters": 20,
            "noise_samples": 100,
        }
        report = run_simulation_study(config, seed=0, base_dir=tmp_path)
        assert report.proposal_source == "identity"
        assert len(report.warnings) == 1
        assert report.slope() is None


class TestDiagnoseCommand:
    """Tests for diagnostics on files written by the study."""

    def write_study(self, report, tmp_path: Path) -> dict:
        manifest = manifest_for(Command.PMRWM_RUN, tmp_path, GAUSSIAN_STUDY)
        noise_path = write_csv(report.noise_frame(), tmp_path / "noise.csv", manifest)
        traces = []
        for (m, gamma), frame in report.traces.items():
            path = write_csv(frame, tmp_path / f"trace-m{m}.csv", manifest)
            traces.append({"m": m, "path": path.name})
        return {
            "noise_samples_path": noise_path.name,
            "t_grid": {"min": -0.5, "max": 0.5, "n": 5},
            "bootstrap_resamples": 20,
            "traces": traces,
        }

    def test_noise_by_m(self, gaussian_report, tmp_path: Path):
        """Verify the long noise file splits back into one recentred sample per m."""
        config = self.write_study(gaussian_report, tmp_path)
        samples = load_noise_samples_by_m(tmp_path / config["noise_samples_path"])
        assert sorted(samples) == [20, 40, 80]
        assert len(samples[20]) == 150
        assert np.mean(np.exp(samples[40].w_star_draws)) == pytest.approx(1.0)

    def test_tables(self, gaussian_report, tmp_path: Path):
        """Verify QQ, MGF and sticky-patch tables and the summary."""
        config = self.write_study(gaussian_report, tmp_path)
        summary, tables = diagnose(config, seed=0, base_dir=tmp_path)
        assert set(tables) == {"qq", "mgf", "sticky"}
        assert len(tables["qq"]) == 3 * 150
        assert list(tables["mgf"].columns) == ["m", "t", "m1", "m2", "m2_lower", "m2_upper"]
        assert len(tables["mgf"]) == 3 * 5
        assert [row["m"] for row in summary["noise"]] == [20, 40, 80]
        assert "variance_vs_m" in summary
        assert summary["warnings"] == []
        assert list(tables["sticky"].columns) == ["m", "gamma", "run_length", "count"]

    def test_missing_columns(self, tmp_path: Path):
        """Verify a noise file without w_star is refused."""
        (tmp_path / "noise.csv").write_text("m,value\n20,0.1\n")
        with pytest.raises(ValueError):
            load_noise_samples_by_m(tmp_path / "noise.csv")

    def test_thinned_traces_use_study_histograms(self, tmp_path: Path):
        """Verify thinned traces are skipped for sticky patches and the study's file is used instead."""
        report = run_simulation_study({**GAUSSIAN_STUDY, "n_iters": 600, "thin": 10}, seed=4)
        config = self.write_study(report, tmp_path)
        manifest = manifest_for(Command.PMRWM_RUN, tmp_path, GAUSSIAN_STUDY)
        config["sticky_path"] = write_csv(report.sticky, tmp_path / "sticky.csv", manifest).name

        summary, tables = diagnose(config, seed=0, base_dir=tmp_path)
        assert len(summary["warnings"]) == 3
        assert "thinned" in summary["warnings"][0]
        pd.testing.assert_frame_equal(
            tables["sticky"].reset_index(drop=True), report.sticky.reset_index(drop=True), check_dtype=False
        )

    def test_path_overrides(self, tmp_path: Path):
        """Verify --noise and --sticky replace the config paths with absolute ones."""
        config = {"noise_samples_path": "old.csv"}
        updated = apply_path_overrides(config, tmp_path / "new-noise.csv", tmp_path / "new-sticky.csv")
        assert updated["noise_samples_path"] == str((tmp_path / "new-noise.csv").resolve())
        assert Path(updated["sticky_path"]).is_absolute()
        assert config == {"noise_samples_path": "old.csv"}
        assert apply_path_overrides(config, None, None) == config

    def test_default_config_reads_latest_files(self, configs_dir: Path):
        """Verify the shipped config points at the fixed-name files the study writes for seed 0."""
        config = load_json(configs_dir / "diagnose.json")
        assert config["noise_samples_path"].endswith("pmrwm-run-0-latest-noise.csv")
        assert config["sticky_path"].endswith("pmrwm-run-0-latest-sticky.csv")


@pytest.mark.slow
class TestDeskScaleStudies:
    """Tests for the shipped study configs at desk scale."""

    def test_gaussian_surrogate(self, configs_dir: Path):
        """Verify the 5-D study acceptance against the finite-d and limiting formulas."""
        config = load_json(configs_dir / "gaussian_study.json")
        report = run_simulation_study(config, seed=0, threads=4)
        cells = report.cells
        assert len(cells) == 12
        se = cells["acceptance_std_error"]
        finite_d_gap = (cells["acceptance_rate"] - cells["predicted_acceptance_finite_d"]).abs()
        assert (finite_d_gap <= 3 * se).all()

        best = cells.loc[cells["min_ess_per_cost"].idxmax()]
        # at d = 5 the limit formula carries the finite-d correction on top of Monte Carlo error
        correction = abs(best["predicted_acceptance_finite_d"] - best["predicted_acceptance"])
        assert abs(best["acceptance_rate"] - best["predicted_acceptance"]) <= 3 * best["acceptance_std_error"] + correction

    def test_lv_study_completes(self, configs_dir: Path):
        """Verify the T = 10 LV study over m in {20, 50, 100} emits the full report."""
        config = load_json(configs_dir / "pmrwm_run.json")
        assert config["n_iters"] == 20_000
        # a pilot-sized covariance keeps proposals near the posterior mode
        config["covariance"] = (0.01 * np.eye(5)).tolist()
        report = run_simulation_study(config, seed=0, base_dir=configs_dir, threads=4)
        assert report.proposal_source == "config"
        data = report.to_dict()
        assert sorted(row["m"] for row in data["noise"]) == [20, 50, 100]
        assert len(data["cells"]) == 9
        assert not report.sticky.empty
        assert report.cells["acceptance_rate"].between(0, 1).all()

    def test_lv_noise_variance_falls_with_m(self, configs_dir: Path):
        """Verify the gamma = 0 noise variance strictly falls over m in {20, 50, 100} for most of 10 seeds."""
        config = load_json(configs_dir / "pmrwm_run.json")
        model = lv_data_from_config(config["data"], configs_dir, u0=tuple(config["u0"]))
        anchor = np.log(TRUE_PARAMS)
        decreasing = 0
        for seed in range(10):
            rng = np.random.default_rng(seed)
            variances = [
                collect_noise_sample(
                    pmrwm_log_posterior_estimator(model, ParticleFilterConfig(m=m)), anchor, n=200, rng=rng, m=m
                ).variance
                for m in (20, 50, 100)
            ]
            decreasing += variances[0] > variances[1] > variances[2]
        # one-sided sign test, P(X >= 9 | p = 1/2) is about 0.01
        assert decreasing >= 9
