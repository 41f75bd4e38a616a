#!/usr/bin/env python3
"""
Sweep the limiting acceptance, ESJD and efficiency over a grid of scalings ell
and noise standard deviations sigma, for Gaussian and Laplace noise.

Writes one CSV with columns ell, sigma2, alpha, esjd, j_rel, eff followed by
noise, std_error and warning. Laplace noise needs sigma2 < 2; larger grid values become
a single warning row per sigma.

Usage:
    python scripts/theory_grid.py
    python scripts/theory_grid.py --config data/configs/theory_grid.json --seed 3 --threads 4
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from limit_theory import TuningPoint
from noise_models import NoiseKind, NoiseModel
from run_io import (
    Command,
    ConfigError,
    build_parser,
    cell_rngs,
    noise_model_errors,
    run_command,
    start_run,
    write_csv,
)

# ell..eff first; noise, std_error and warning follow
COLUMNS = ["ell", "sigma2", "alpha", "esjd", "j_rel", "eff", "noise", "std_error", "warning"]
LAPLACE_WARNING = "laplace noise needs sigma2 < 2; grid point skipped"


class GridCell(NamedTuple):
    noise: str
    sigma2: float
    point: Optional[TuningPoint] = None

    @property
    def ell(self) -> Optional[float]:
        return None if self.point is None else self.point.ell


def ell_grid(config: dict) -> np.ndarray:
    spec = config["ell"]
    return np.linspace(spec["min"], spec["max"], spec["n"])


def extra_noise_models(config: dict, base_dir: Path) -> list[NoiseModel]:
    """Noise models listed under "noise_models", e.g. empirical draws from a CSV."""
    models = []
    for i, entry in enumerate(config.get("noise_models", [])):
        errors = noise_model_errors(entry)
        if errors:
            raise ConfigError([f"noise_models -> {i} -> {e}" for e in errors])
        models.append(NoiseModel.from_dict(entry, base_dir=base_dir))
    return models


def grid_cells(config: dict, base_dir: Path = Path(".")) -> list[GridCell]:
    """Cells in output order; a Laplace sigma with sigma2 >= 2 gives one cell with ell=None."""
    ells = ell_grid(config)
    cells = []
    for kind in config["noise_kinds"]:
        for sigma in config["sigma"]:
            sigma2 = float(sigma) ** 2
            if NoiseKind(kind) is NoiseKind.LAPLACE and sigma2 >= 2.0:
                cells.append(GridCell(kind, sigma2))
                continue
            model = NoiseModel.from_variance(kind, sigma2)
            cells.extend(GridCell(kind, sigma2, TuningPoint.of(ell, model)) for ell in ells)
    for model in extra_noise_models(config, base_dir):
        cells.extend(GridCell(model.kind.value, model.sigma2, TuningPoint.of(ell, model)) for ell in ells)
    return cells


def evaluate_cell(cell: GridCell, rng: np.random.Generator, mc_budget: int, roughness_I: float) -> dict:
    if cell.point is None:
        row = dict.fromkeys(COLUMNS, math.nan)
        row.update(noise=cell.noise, sigma2=cell.sigma2, warning=LAPLACE_WARNING)
        return row
    report = cell.point.report(roughness_I=roughness_I, mc_budget=mc_budget, rng=rng)
    return {
        "noise": cell.noise,
        **report.as_row(),
        "std_error": report.std_error,
        "warning": "",
    }


def theory_grid(
    config: dict,
    seed: int,
    threads: int = 1,
    progress: bool = False,
    base_dir: Path = Path("."),
) -> pd.DataFrame:
    """The full grid as a DataFrame; row order and values depend only on (config, seed)."""
    cells = grid_cells(config, base_dir)
    rngs = cell_rngs(seed, len(cells))
    mc_budget = int(config["mc_budget"])
    roughness_I = float(config.get("roughness_I", 1.0))

    def run(i: int) -> dict:
        return evaluate_cell(cells[i], rngs[i], mc_budget, roughness_I)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        rows = list(tqdm(pool.map(run, range(len(cells))), total=len(cells), disable=not progress))
    return pd.DataFrame(rows, columns=COLUMNS)


def best_ell_by_row(frame: pd.DataFrame) -> pd.DataFrame:
    """The grid ell maximising J for each (noise, sigma2) row."""
    valid = frame.dropna(subset=["esjd"])
    idx = valid.groupby(["noise", "sigma2"])["esjd"].idxmax()
    return valid.loc[idx, ["noise", "sigma2", "ell", "esjd", "alpha"]].reset_index(drop=True)


def main():
    parser = build_parser(Command.THEORY_GRID, "Limiting acceptance and ESJD over an (ell, sigma) grid")
    args = parser.parse_args()

    print(f"Loading config from {args.config}...")
    manifest = start_run(Command.THEORY_GRID, args)
    config = manifest.config

    print(
        f"Evaluating {len(ell_grid(config))} ell values x {len(config['sigma'])} sigma values "
        f"for {', '.join(config['noise_kinds'])} noise..."
    )
    frame = theory_grid(
        config, args.seed, args.threads, progress=not args.quiet, base_dir=Path(args.config).parent
    )

    skipped = frame[frame["warning"] != ""]
    for _, row in skipped.iterrows():
        print(f"  Warning: {row['noise']} sigma2={row['sigma2']:.3g}: {row['warning']}")

    path = write_csv(frame, manifest.output_path("csv"), manifest)
    manifest.write()
    print(f"  Saved {len(frame)} rows to {path}")

    print("\nBest grid ell per noise row:")
    for _, row in best_ell_by_row(frame).iterrows():
        print(
            f"  {row['noise']:<9} sigma2={row['sigma2']:<6.3g} ell={row['ell']:.3f} "
            f"J={row['esjd']:.4f} alpha={row['alpha']:.4f}"
        )


if __name__ == "__main__":
    run_command(Command.THEORY_GRID, main)
