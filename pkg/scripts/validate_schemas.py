#!/usr/bin/env python3
"""
Validate the command configs against their schemas.

Usage:
    python scripts/validate_schemas.py
    python scripts/validate_schemas.py --verbose
"""

import argparse
import json
import sys
from pathlib import Path

from run_io import load_json, noise_model_errors, schema_errors

# Mapping of config files to their schemas
FILE_SCHEMA_MAP = {
    "data/configs/theory_grid.json": "schemas/theory_grid.schema.json",
    "data/configs/optimize.json": "schemas/optimize.schema.json",
    "data/configs/finite_d.json": "schemas/finite_d.schema.json",
    "data/configs/lv_simulate.json": "schemas/lv_simulate.schema.json",
    "data/configs/pilot_run.json": "schemas/pilot_run.schema.json",
    "data/configs/pmrwm_run.json": "schemas/pmrwm_run.schema.json",
    "data/configs/gaussian_study.json": "schemas/pmrwm_run.schema.json",
    "data/configs/diagnose.json": "schemas/diagnose.schema.json",
}

# Noise models sit in an array inside the theory grid config
NOISE_MODEL_FILES = ["data/configs/theory_grid.json"]


def validate_file(data_path: Path, schema_path: Path) -> list[str]:
    """
    Validate a config file against a schema.

    Returns list of error messages (empty if valid).
    """
    try:
        data = load_json(data_path)
    except json.JSONDecodeError as e:
        return [f"Invalid JSON: {e}"]
    except FileNotFoundError:
        return [f"File not found: {data_path}"]

    try:
        schema = load_json(schema_path)
    except (json.JSONDecodeError, FileNotFoundError) as e:
        return [f"Schema error: {e}"]

    return schema_errors(data, schema)


def validate_noise_models(data_path: Path, verbose: bool = False) -> list[str]:
    """Validate each entry of a config's "noise_models" array."""
    try:
        data = load_json(data_path)
    except (json.JSONDecodeError, FileNotFoundError):
        # Reported by validate_file
        return []

    models = data.get("noise_models", [])
    if not models:
        if verbose:
            print(f"  No noise models to validate in {data_path.name}")
        return []

    errors = []
    for i, entry in enumerate(models):
        for error in noise_model_errors(entry):
            errors.append(f"noise_models[{i}] ({entry.get('kind', '?')}) -> {error}")
    return errors


def main():
    parser = argparse.ArgumentParser(description="Validate command configs against schemas")
    parser.add_argument(
        "--verbose", "-v",
        action="store_true",
        help="Show detailed output",
    )
    args = parser.parse_args()

    project_root = Path(__file__).parent.parent
    all_errors = {}
    files_checked = 0

    print("Validating config schemas...\n")

    for config_file, schema_file in FILE_SCHEMA_MAP.items():
        data_path = project_root / config_file
        if not data_path.exists():
            if args.verbose:
                print(f"Skipping (not found): {config_file}")
            continue

        if args.verbose:
            print(f"Validating {config_file}...")

        errors = validate_file(data_path, project_root / schema_file)
        if config_file in NOISE_MODEL_FILES:
            errors += validate_noise_models(data_path, args.verbose)
        files_checked += 1

        if errors:
            all_errors[config_file] = errors
            print(f"  FAIL: {config_file} ({len(errors)} errors)")
        elif args.verbose:
            print(f"  OK: {config_file}")

    print(f"\nValidation complete: {files_checked} files checked")

    if all_errors:
        print(f"\n{len(all_errors)} file(s) with validation errors:\n")
        for file, errors in all_errors.items():
            print(f"{file}:")
            for error in errors[:10]:  # first 10 per file
                print(f"  - {error}")
            if len(errors) > 10:
                print(f"  ... and {len(errors) - 10} more errors")
            print()
        sys.exit(1)
    else:
        print("All files valid!")


if __name__ == "__main__":
    main()
