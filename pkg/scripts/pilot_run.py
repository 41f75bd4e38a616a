#!/usr/bin/env python3
"""
Pilot particle-marginal RWM run on the Lotka-Volterra posterior.

Produces the posterior medians x_hat and the covariance Var(X) of the
log-parameters that the simulation study uses as its anchor point and
proposal covariance.

Usage:
    python scripts/pilot_run.py
    python scripts/pilot_run.py --seed 11 --out output/
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from lotka_volterra import INITIAL_STATE, TRUE_PARAMS, lv_data_from_config, pmrwm_log_posterior_estimator
from particle_filter import ParticleFilterConfig
from psm_sampler import ProposalSpec, run_chain
from run_io import Command, build_parser, run_command, start_run, write_json


def pilot_run(config: dict, seed: int, base_dir: Path) -> dict:
    """Run the pilot chain; returns x_hat, covariance and run statistics."""
    u0 = tuple(config.get("u0", INITIAL_STATE))
    model = lv_data_from_config(config["data"], base_dir, u0=u0)
    pf_config = ParticleFilterConfig(m=int(config["m"]), resampling=config.get("resampling", "systematic"))
    estimator = pmrwm_log_posterior_estimator(model, pf_config)

    initial = np.asarray(config.get("initial_log_params", np.log(TRUE_PARAMS)), dtype=float)
    proposal = ProposalSpec.identity(float(config["proposal_sd"]), estimator.dimension)
    n_iters = int(config["n_iters"])
    burn_in = int(config.get("burn_in", 0))
    if burn_in >= n_iters:
        raise ValueError(f"burn_in ({burn_in}) must be smaller than n_iters ({n_iters})")

    stats = run_chain(initial, estimator, proposal, n_iters, rng=np.random.default_rng(seed))
    kept = stats.samples[burn_in:]
    return {
        "x_hat": np.median(kept, axis=0).tolist(),
        "covariance": np.cov(kept, rowvar=False).tolist(),
        "n_samples": int(kept.shape[0]),
        "statistics": stats.summary(),
    }


def main():
    parser = build_parser(Command.PILOT_RUN, "Pilot PMRWM run for the anchor point and proposal covariance")
    args = parser.parse_args()

    print(f"Loading config from {args.config}...")
    manifest = start_run(Command.PILOT_RUN, args)

    print(f"Running pilot chain ({manifest.config['n_iters']} iterations, m={manifest.config['m']})...")
    result = pilot_run(manifest.config, args.seed, Path(args.config).parent)
    path = write_json(result, manifest.output_path("json"), manifest)
    manifest.write()

    print(f"  Saved pilot estimates to {path}")
    print(f"\nAcceptance rate: {result['statistics']['acceptance_rate']:.3f}")
    print(f"x_hat (log scale): {np.round(result['x_hat'], 3).tolist()}")


if __name__ == "__main__":
    run_command(Command.PILOT_RUN, main)
