#!/usr/bin/env python3
"""
Report the optimal tuning under Gaussian log-target noise: the joint optimum of
the efficiency, conditional optima of ell given sigma2 and sigma2 given ell,
and joint optima when each estimate carries a fixed overhead t_rat.

Usage:
    python scripts/optimize_tuning.py
    python scripts/optimize_tuning.py --config data/configs/optimize.json --out results/
"""

from __future__ import annotations

from limit_theory import sar_esjd
from run_io import Command, build_parser, run_command, start_run, write_json
from tuning_optimizer import (
    optimize_ell_given_sigma2,
    optimize_sar_joint,
    optimize_sigma2_given_ell,
    optimize_with_overhead,
)


def optimize_report(config: dict) -> dict:
    tol = float(config.get("tol", 1e-9))
    joint = optimize_sar_joint(tol)

    ell_given_sigma2 = []
    for sigma2 in config.get("sigma2_values", []):
        ell = optimize_ell_given_sigma2(float(sigma2))
        ell_given_sigma2.append(
            {"sigma2": sigma2, "ell_opt": ell, "alpha_opt": sar_esjd(ell, float(sigma2)) / ell**2}
        )

    sigma2_given_ell = [
        {"ell": ell, "sigma2_opt": optimize_sigma2_given_ell(float(ell))}
        for ell in config.get("ell_values", [])
    ]

    overhead = [optimize_with_overhead(float(t)).to_dict() for t in config.get("t_rat_values", [])]

    return {
        "joint": joint.to_dict(),
        "ell_given_sigma2": ell_given_sigma2,
        "sigma2_given_ell": sigma2_given_ell,
        "overhead": overhead,
    }


def main():
    parser = build_parser(Command.OPTIMIZE, "Optimal scaling and noise variance under Gaussian noise")
    args = parser.parse_args()

    print(f"Loading config from {args.config}...")
    manifest = start_run(Command.OPTIMIZE, args)

    print("Optimizing...")
    report = optimize_report(manifest.config)
    path = write_json(report, manifest.output_path("json"), manifest)
    manifest.write()
    print(f"  Saved report to {path}")

    joint = report["joint"]
    print(
        f"\nJoint optimum: sigma2={joint['sigma2_opt']:.3f} ell={joint['ell_opt']:.3f} "
        f"alpha={joint['alpha_opt']:.5f}"
    )
    for row in report["overhead"]:
        print(
            f"  t_rat={row['t_rat']:<8g} sigma2={row['sigma2_opt']:.3f} "
            f"ell={row['ell_opt']:.3f} alpha={row['alpha_opt']:.4f}"
        )


if __name__ == "__main__":
    run_command(Command.OPTIMIZE, main)
