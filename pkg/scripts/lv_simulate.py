#!/usr/bin/env python3
"""
Simulate Lotka-Volterra data: an exact jump-process path from u0 observed with
Gaussian noise at dt, 2 dt, ..., t_max.

Writes the observations as CSV (t, y1, y2) and the latent states alongside
(t, u1, u2).

Usage:
    python scripts/lv_simulate.py
    python scripts/lv_simulate.py --paper-scale --seed 7
"""

from __future__ import annotations

import numpy as np
import pandas as pd

from lotka_volterra import LVParams, lv_data_frame, lv_synthesize_data
from run_io import Command, build_parser, run_command, scaled_settings, start_run, write_csv


def main():
    parser = build_parser(Command.LV_SIMULATE, "Simulate Lotka-Volterra observations", paper_scale=True)
    args = parser.parse_args()

    print(f"Loading config from {args.config}...")
    manifest = start_run(Command.LV_SIMULATE, args)
    settings = scaled_settings(manifest.config, manifest.paper_scale)

    params = LVParams.from_sequence(settings["params"])
    model = lv_synthesize_data(
        params,
        u0=tuple(settings["u0"]),
        t_max=float(settings["t_max"]),
        dt=float(settings["dt"]),
        rng=np.random.default_rng(args.seed),
    )

    path = write_csv(lv_data_frame(model), manifest.output_path("csv"), manifest)
    latent = pd.DataFrame(
        {
            "t": model.observation_times,
            "u1": model.latent_states[:, 0],
            "u2": model.latent_states[:, 1],
        }
    )
    latent_path = write_csv(latent, manifest.output_path("csv", tag="latent"), manifest)
    manifest.write()

    print(f"  Saved {model.n_intervals} observations to {path}")
    print(f"  Saved latent path to {latent_path}")
    print(
        f"\nFinal state at t={model.observation_times[-1]:g}: "
        f"predators={model.latent_states[-1, 0]}, prey={model.latent_states[-1, 1]}"
    )


if __name__ == "__main__":
    run_command(Command.LV_SIMULATE, main)
