#!/usr/bin/env python3
"""
Noise diagnostics from stored study output.

Reads the long-format noise draws (m, w_star) written by pmrwm_run.py and
optionally chain traces, then writes:
- QQ data against a Gaussian per m (m, q_theory, q_emp)
- the variance-versus-m regression
- M1/M2 curves per m with bootstrap bands on M2, when traces supply L_hat draws
- sticky-patch histograms, from the study's sticky file (every iteration)
  and from unthinned traces; a thinned trace has lost its rejection runs

The default config reads the fixed-name "latest" files pmrwm_run.py writes
for seed 0; --noise and --sticky point at other runs.

Usage:
    python scripts/diagnose.py --config data/configs/diagnose.json
    python scripts/diagnose.py --noise output/pmrwm-run-3-latest-noise.csv --sticky output/pmrwm-run-3-latest-sticky.csv
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from noise_diagnostics import (
    NoiseSample,
    bootstrap_mgf_band,
    ks_gaussian_distance,
    mgf_curves,
    qq_against_gaussian,
    variance_vs_m_slope,
)
from psm_sampler import ChainTrace, sticky_patch_histogram
from run_io import Command, build_parser, read_csv, run_command, start_run, write_csv, write_json

logger = logging.getLogger(__name__)

STICKY_COLUMNS = ["m", "gamma", "run_length", "count"]


def _resolve(path: str, base_dir: Path) -> Path:
    path = Path(path)
    return path if path.is_absolute() else base_dir / path


def load_noise_samples_by_m(path: Path, recentre: bool = True) -> dict[int, NoiseSample]:
    frame = read_csv(path)
    missing = {"m", "w_star"} - set(frame.columns)
    if missing:
        raise ValueError(f"noise file {path} is missing columns: {sorted(missing)}")
    return {
        int(m): NoiseSample.from_draws(group["w_star"].to_numpy(), m=int(m), recentre=recentre)
        for m, group in frame.groupby("m", sort=True)
    }


def t_grid_from_config(config: dict) -> np.ndarray:
    spec = config.get("t_grid", {"min": -1.0, "max": 1.0, "n": 21})
    return np.linspace(spec["min"], spec["max"], spec["n"])


def diagnose(config: dict, seed: int, base_dir: Path) -> tuple[dict, dict[str, pd.DataFrame]]:
    """Returns the JSON summary and the CSV tables keyed by output tag."""
    samples = load_noise_samples_by_m(
        _resolve(config["noise_samples_path"], base_dir),
        recentre=config.get("recentre", True),
    )
    tables: dict[str, pd.DataFrame] = {}
    summary: dict = {"noise": []}

    qq_frames = []
    for m, sample in samples.items():
        statistic, pvalue = ks_gaussian_distance(sample)
        summary["noise"].append(
            {
                "m": m,
                "n": len(sample),
                "variance": sample.variance,
                "skewness": sample.skewness,
                "ks_statistic": statistic,
                "ks_pvalue": pvalue,
            }
        )
        qq = qq_against_gaussian(sample)
        qq.insert(0, "m", m)
        qq_frames.append(qq)
    tables["qq"] = pd.concat(qq_frames, ignore_index=True)

    if len(samples) >= 3:
        slope, intercept = variance_vs_m_slope(list(samples.values()))
        summary["variance_vs_m"] = {"slope": slope, "intercept": intercept}

    summary["warnings"] = []
    sticky_frames = []
    if "sticky_path" in config:
        sticky_frames.append(read_csv(_resolve(config["sticky_path"], base_dir))[STICKY_COLUMNS])

    traces = config.get("traces", [])
    t_grid = t_grid_from_config(config)
    shift = float(config.get("shift", 0.0))
    rng = np.random.default_rng(seed)
    mgf_frames = []
    for entry in traces:
        m = int(entry["m"])
        trace = ChainTrace.from_frame(read_csv(_resolve(entry["path"], base_dir)))
        if trace.is_complete:
            histogram = sticky_patch_histogram(trace)
            sticky_frames.append(
                pd.DataFrame(
                    {
                        "m": m,
                        "gamma": entry.get("gamma", np.nan),
                        "run_length": np.arange(histogram.size),
                        "count": histogram,
                    }
                )[STICKY_COLUMNS]
            )
        else:
            message = f"trace {entry['path']} is thinned; sticky patches come from the study's sticky file"
            logger.warning(message)
            summary["warnings"].append(message)
        if m not in samples:
            continue
        curves = mgf_curves(trace.log_estimates, samples[m], t_grid, shift).to_frame()
        band = bootstrap_mgf_band(
            trace.log_estimates,
            samples[m],
            t_grid,
            shift,
            n_resamples=int(config.get("bootstrap_resamples", 200)),
            rng=rng,
        )
        curves["m2_lower"] = band.lower
        curves["m2_upper"] = band.upper
        curves.insert(0, "m", m)
        mgf_frames.append(curves)

    if mgf_frames:
        tables["mgf"] = pd.concat(mgf_frames, ignore_index=True)
    if sticky_frames:
        tables["sticky"] = pd.concat(sticky_frames, ignore_index=True)
    return summary, tables


def apply_path_overrides(config: dict, noise: Optional[Path], sticky: Optional[Path]) -> dict:
    """Replace the config's input files with absolute command-line paths."""
    config = dict(config)
    if noise is not None:
        config["noise_samples_path"] = str(Path(noise).resolve())
    if sticky is not None:
        config["sticky_path"] = str(Path(sticky).resolve())
    return config


def main():
    parser = build_parser(Command.DIAGNOSE, "Noise diagnostics from stored study output")
    parser.add_argument("--noise", type=Path, help="Noise draws (m, w_star) to use instead of the config's")
    parser.add_argument("--sticky", type=Path, help="Study sticky-patch file to use instead of the config's")
    args = parser.parse_args()

    print(f"Loading config from {args.config}...")
    manifest = start_run(Command.DIAGNOSE, args)
    manifest.config = apply_path_overrides(manifest.config, args.noise, args.sticky)

    summary, tables = diagnose(manifest.config, args.seed, Path(args.config).parent)
    for tag, table in tables.items():
        path = write_csv(table, manifest.output_path("csv", tag=tag), manifest)
        print(f"  Saved {tag} table ({len(table)} rows) to {path}")
    path = write_json(summary, manifest.output_path("json"), manifest)
    manifest.write()
    print(f"  Saved summary to {path}")

    for warning in summary["warnings"]:
        print(f"  Warning: {warning}")

    print("\nNoise by m:")
    for row in summary["noise"]:
        print(
            f"  m={row['m']:<5} var={row['variance']:.4f} skew={row['skewness']:+.3f} "
            f"KS p={row['ks_pvalue']:.3f}"
        )
    if "variance_vs_m" in summary:
        print(f"\nlog Var vs log m slope: {summary['variance_vs_m']['slope']:.3f}")


if __name__ == "__main__":
    run_command(Command.DIAGNOSE, main)
