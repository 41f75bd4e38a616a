#!/usr/bin/env python3
"""
Simulation study over particle counts m and proposal scalings gamma.

For every m a batch of estimates at the anchor point x_hat (gamma = 0) gives
the noise variance sigma2_hat(m). For every (m, gamma) cell a PMRWM chain runs
with proposal covariance gamma^2 (2.56^2 / d) Var(X), recording acceptance,
ESJD, minimum ESS and cost.

Targets:
    lv        Lotka-Volterra posterior with a bootstrap particle filter
    gaussian  standard Gaussian in d dimensions with noise variance c/m and
              cost m per evaluation

Usage:
    python scripts/pmrwm_run.py
    python scripts/pmrwm_run.py --threads 4
    python scripts/pmrwm_run.py --paper-scale
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from limit_theory import finite_d_gaussian
from lotka_volterra import INITIAL_STATE, TRUE_PARAMS, lv_data_from_config, pmrwm_log_posterior_estimator
from noise_diagnostics import NoiseSample, collect_noise_sample, variance_vs_m_slope
from noise_models import NoiseModel
from particle_filter import ParticleFilterConfig
from psm_sampler import (
    PROPOSAL_SCALE_CONSTANT,
    NoisyGaussianTarget,
    ProposalSpec,
    predicted_acceptance,
    run_chain,
    standard_gaussian_log_density,
)
from run_io import (
    Command,
    RunManifest,
    build_parser,
    cell_rngs,
    load_json,
    run_command,
    scaled_settings,
    start_run,
    write_csv,
    write_json,
)

logger = logging.getLogger(__name__)

CELL_COLUMNS = [
    "m",
    "gamma",
    "sigma2_hat",
    "acceptance_rate",
    "acceptance_std_error",
    "predicted_acceptance",
    "esjd",
    "min_ess",
    "total_cost",
    "min_ess_per_cost",
    "max_sticky_patch",
]
STICKY_COLUMNS = ["m", "gamma", "run_length", "count"]


@dataclass
class StudyReport:
    cells: pd.DataFrame
    noise_samples: dict[int, NoiseSample]
    proposal_source: str
    warnings: list[str] = field(default_factory=list)
    traces: dict[tuple[int, float], pd.DataFrame] = field(default_factory=dict)
    sticky: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=STICKY_COLUMNS))

    def noise_frame(self) -> pd.DataFrame:
        """Long-format noise draws: columns m, w_star."""
        return pd.concat(
            [pd.DataFrame({"m": m, "w_star": s.w_star_draws}) for m, s in self.noise_samples.items()],
            ignore_index=True,
        )

    def noise_summary(self) -> list[dict]:
        return [
            {"m": m, "n": len(s), "sigma2_hat": s.variance, "skewness": s.skewness}
            for m, s in self.noise_samples.items()
        ]

    def slope(self) -> Optional[dict]:
        if len(self.noise_samples) < 3:
            return None
        slope, intercept = variance_vs_m_slope(list(self.noise_samples.values()))
        return {"slope": slope, "intercept": intercept}

    def to_dict(self) -> dict:
        return {
            "proposal_source": self.proposal_source,
            "warnings": self.warnings,
            "noise": self.noise_summary(),
            "variance_vs_m": self.slope(),
            "cells": self.cells.to_dict(orient="records"),
        }


class _Target:
    """Builds the estimator for a given m and knows the anchor point."""

    def __init__(self, settings: dict, base_dir: Path):
        self.kind = settings.get("target", "lv")
        self.settings = settings
        if self.kind == "lv":
            u0 = tuple(settings.get("u0", INITIAL_STATE))
            self.model = lv_data_from_config(settings["data"], base_dir, u0=u0)
            self.dimension = 5
        else:
            self.gaussian = settings["gaussian"]
            self.dimension = int(self.gaussian["dimension"])

    def estimator(self, m: int):
        if self.kind == "lv":
            config = ParticleFilterConfig(m=m, resampling=self.settings.get("resampling", "systematic"))
            return pmrwm_log_posterior_estimator(self.model, config)
        sigma2 = float(self.gaussian["variance_constant"]) / m
        return NoisyGaussianTarget(self.dimension, NoiseModel.gaussian(sigma2), cost=float(m))

    def exact_log_target(self, anchor: np.ndarray) -> Optional[float]:
        return standard_gaussian_log_density(anchor) if self.kind == "gaussian" else None

    def default_anchor(self) -> np.ndarray:
        if self.kind == "lv":
            return np.asarray(self.settings.get("initial_log_params", np.log(TRUE_PARAMS)), dtype=float)
        return np.zeros(self.dimension)


def resolve_proposal_covariance(
    settings: dict,
    target: _Target,
    base_dir: Path,
    warnings: list[str],
) -> tuple[np.ndarray, np.ndarray, str]:
    """(anchor x_hat, covariance, source) from an inline covariance, a pilot file, or identity."""
    anchor = target.default_anchor()
    if "covariance" in settings:
        covariance = np.asarray(settings["covariance"], dtype=float)
        anchor = np.asarray(settings.get("x_hat", anchor), dtype=float)
        return anchor, covariance, "config"
    if "pilot_path" in settings:
        path = Path(settings["pilot_path"])
        pilot = load_json(path if path.is_absolute() else base_dir / path)
        return np.asarray(pilot["x_hat"], dtype=float), np.asarray(pilot["covariance"], dtype=float), "pilot"
    if target.kind == "gaussian":
        return anchor, np.eye(target.dimension), "target"

    message = "no pilot covariance supplied; using the identity for Var(X)"
    logger.warning(message)
    warnings.append(message)
    return anchor, np.eye(target.dimension), "identity"


def run_simulation_study(
    config: dict,
    seed: int,
    base_dir: Path = Path("."),
    threads: int = 1,
    paper_scale: bool = False,
    progress: bool = False,
) -> StudyReport:
    settings = scaled_settings(config, paper_scale)
    m_grid = [int(m) for m in settings["m_grid"]]
    gamma_grid = [float(g) for g in settings["gamma_grid"]]
    n_iters = int(settings["n_iters"])
    thin = int(settings.get("thin", 1))
    n_noise = int(settings.get("noise_samples", 200))
    keep_traces = bool(settings.get("write_traces", False))

    target = _Target(settings, base_dir)
    warnings: list[str] = []
    anchor, covariance, source = resolve_proposal_covariance(settings, target, base_dir, warnings)

    cells = [(m, gamma) for m in m_grid for gamma in gamma_grid]
    rngs = cell_rngs(seed, len(m_grid) + len(cells))
    noise_rngs, chain_rngs = rngs[: len(m_grid)], rngs[len(m_grid):]
    bar = tqdm(total=len(m_grid) + len(cells), disable=not progress, desc="cells")

    def noise_task(i: int) -> NoiseSample:
        m = m_grid[i]
        sample = collect_noise_sample(
            target.estimator(m),
            anchor,
            exact_log_target_at_anchor=target.exact_log_target(anchor),
            n=n_noise,
            rng=noise_rngs[i],
            m=m,
        )
        bar.update()
        return sample

    def chain_task(i: int):
        m, gamma = cells[i]
        proposal = ProposalSpec.scaled(gamma, covariance)
        stats = run_chain(
            anchor,
            target.estimator(m),
            proposal,
            n_iters,
            rng=chain_rngs[i],
            record=keep_traces,
            thin=thin,
        )
        bar.update()
        return stats

    with ThreadPoolExecutor(max_workers=threads) as pool:
        samples = list(pool.map(noise_task, range(len(m_grid))))
        results = list(pool.map(chain_task, range(len(cells))))
    bar.close()

    noise_samples = dict(zip(m_grid, samples))
    rows = []
    traces = {}
    sticky_frames = []
    for (m, gamma), stats in zip(cells, results):
        sigma2_hat = noise_samples[m].variance
        row = {
            "m": m,
            "gamma": gamma,
            "sigma2_hat": sigma2_hat,
            "acceptance_rate": stats.acceptance_rate,
            "acceptance_std_error": stats.acceptance_std_error,
            "predicted_acceptance": predicted_acceptance(sigma2_hat, gamma),
            "esjd": stats.esjd,
            "min_ess": stats.min_ess,
            "total_cost": stats.total_cost,
            "min_ess_per_cost": stats.min_ess_per_cost,
            "max_sticky_patch": stats.max_sticky_patch,
        }
        if target.kind == "gaussian":
            d = target.dimension
            lam = gamma * PROPOSAL_SCALE_CONSTANT / np.sqrt(d)
            row["predicted_acceptance_finite_d"] = finite_d_gaussian(lam, d, sigma2_hat).acceptance
        rows.append(row)
        histogram = stats.sticky_histogram
        sticky_frames.append(
            pd.DataFrame({"m": m, "gamma": gamma, "run_length": np.arange(histogram.size), "count": histogram})
        )
        if stats.trace is not None:
            traces[(m, gamma)] = stats.trace.to_frame()

    columns = CELL_COLUMNS + (["predicted_acceptance_finite_d"] if target.kind == "gaussian" else [])
    return StudyReport(
        cells=pd.DataFrame(rows, columns=columns),
        noise_samples=noise_samples,
        proposal_source=source,
        warnings=warnings,
        traces=traces,
        sticky=pd.concat(sticky_frames, ignore_index=True)[STICKY_COLUMNS],
    )


def write_study_outputs(report: StudyReport, manifest: RunManifest) -> dict[str, Path]:
    """
    Write cells, noise draws, sticky-patch histograms, traces and the JSON report.

    The noise draws and histograms are also copied to fixed "latest" names so
    diagnose.py can find them without knowing the run timestamp.
    """
    paths = {
        "cells": write_csv(report.cells, manifest.output_path("csv"), manifest),
        "noise": write_csv(report.noise_frame(), manifest.output_path("csv", tag="noise"), manifest),
        "sticky": write_csv(report.sticky, manifest.output_path("csv", tag="sticky"), manifest),
        "latest_noise": write_csv(report.noise_frame(), manifest.latest_path("csv", tag="noise"), manifest),
        "latest_sticky": write_csv(report.sticky, manifest.latest_path("csv", tag="sticky"), manifest),
    }
    for (m, gamma), frame in report.traces.items():
        write_csv(frame, manifest.output_path("csv", tag=f"trace-m{m}-g{gamma:g}"), manifest)
    paths["report"] = write_json(report.to_dict(), manifest.output_path("json"), manifest)
    return paths


def main():
    parser = build_parser(Command.PMRWM_RUN, "PMRWM simulation study over (m, gamma)", paper_scale=True)
    args = parser.parse_args()

    print(f"Loading config from {args.config}...")
    manifest = start_run(Command.PMRWM_RUN, args)
    settings = scaled_settings(manifest.config, manifest.paper_scale)
    print(
        f"Running {len(settings['m_grid'])} x {len(settings['gamma_grid'])} cells, "
        f"{settings['n_iters']} iterations each ({settings.get('target', 'lv')} target)..."
    )

    report = run_simulation_study(
        manifest.config,
        args.seed,
        base_dir=Path(args.config).parent,
        threads=args.threads,
        paper_scale=manifest.paper_scale,
        progress=not args.quiet,
    )
    for warning in report.warnings:
        print(f"  Warning: {warning}")

    paths = write_study_outputs(report, manifest)
    manifest.write()

    print(f"  Saved cell statistics to {paths['cells']}")
    print(f"  Saved noise draws to {paths['noise']} (copy: {paths['latest_noise']})")
    print(f"  Saved sticky-patch histograms to {paths['sticky']}")
    print(f"  Saved report to {paths['report']}")

    best = report.cells.loc[report.cells["min_ess_per_cost"].idxmax()]
    print(
        f"\nBest cell: m={int(best['m'])} gamma={best['gamma']:g} "
        f"sigma2_hat={best['sigma2_hat']:.3f} acceptance={best['acceptance_rate']:.3f} "
        f"(predicted {best['predicted_acceptance']:.3f})"
    )


if __name__ == "__main__":
    run_command(Command.PMRWM_RUN, main)
