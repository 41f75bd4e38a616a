#!/usr/bin/env python3
"""
Optimal ell, sigma2 and acceptance rate for a standard Gaussian target in
finite dimension d with Gaussian log-target noise, plus the d -> infinity row.

Usage:
    python scripts/finite_d_table.py
    python scripts/finite_d_table.py --threads 5
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import pandas as pd

from limit_theory import QuadSpec
from run_io import Command, build_parser, run_command, start_run, write_csv
from tuning_optimizer import optimize_finite_d, optimize_sar_joint

COLUMNS = ["d", "ell_opt", "sigma2_opt", "alpha_opt", "eff_opt"]


def finite_d_table(config: dict, threads: int = 1) -> pd.DataFrame:
    tol = float(config.get("tol", 1e-6))
    quad_spec = QuadSpec(**config.get("quadrature", {}))
    dims = [int(d) for d in config["dimensions"]]

    with ThreadPoolExecutor(max_workers=threads) as pool:
        reports = list(pool.map(lambda d: optimize_finite_d(d, tol, quad_spec), dims))
    rows = [{k: r.to_dict()[k] for k in COLUMNS} for r in reports]

    if config.get("include_limit", True):
        limit = optimize_sar_joint().to_dict()
        limit["d"] = "inf"
        rows.append({k: limit[k] for k in COLUMNS})
    return pd.DataFrame(rows, columns=COLUMNS)


def main():
    parser = build_parser(Command.FINITE_D, "Finite-dimension optimal tuning table")
    args = parser.parse_args()

    print(f"Loading config from {args.config}...")
    manifest = start_run(Command.FINITE_D, args)

    print(f"Optimizing for d in {manifest.config['dimensions']}...")
    table = finite_d_table(manifest.config, args.threads)
    path = write_csv(table, manifest.output_path("csv"), manifest)
    manifest.write()
    print(f"  Saved {len(table)} rows to {path}\n")
    print(table.to_string(index=False))


if __name__ == "__main__":
    run_command(Command.FINITE_D, main)
