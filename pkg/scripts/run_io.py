"""
Shared plumbing for the command scripts: argument parsing, config loading with
schema validation, run manifests, seeded substreams and output files.

Every output file carries the seed and a hash of the config: CSV files as
leading `# key: value` comment lines, JSON files under a "manifest" key.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import pandas as pd
from jsonschema import Draft7Validator

PROJECT_ROOT = Path(__file__).parent.parent
SCHEMAS_DIR = PROJECT_ROOT / "schemas"
CONFIGS_DIR = PROJECT_ROOT / "data" / "configs"

FLOAT_FORMAT = "%.10g"
TIMESTAMP_FORMAT = "%Y%m%dT%H%M%S"


class ConfigError(ValueError):
    """Invalid or unreadable command config; holds every validation message."""

    def __init__(self, messages: list[str], path: Optional[Path] = None):
        where = f" in {path}" if path is not None else ""
        super().__init__(f"{len(messages)} config error(s){where}: " + "; ".join(messages))
        self.messages = messages


class Command(str, Enum):
    THEORY_GRID = "theory-grid"
    OPTIMIZE = "optimize"
    FINITE_D = "finite-d"
    LV_SIMULATE = "lv-simulate"
    PILOT_RUN = "pilot-run"
    PMRWM_RUN = "pmrwm-run"
    DIAGNOSE = "diagnose"

    @property
    def slug(self) -> str:
        return self.value.replace("-", "_")

    @property
    def schema_path(self) -> Path:
        return SCHEMAS_DIR / f"{self.slug}.schema.json"

    @property
    def default_config(self) -> Path:
        return CONFIGS_DIR / f"{self.slug}.json"


def load_json(path: Path) -> dict:
    """Load JSON file."""
    with open(path) as f:
        return json.load(f)


def schema_errors(data: dict, schema: dict) -> list[str]:
    """Every validation message as '<path>: <message>'."""
    validator = Draft7Validator(schema)
    errors = []
    for error in validator.iter_errors(data):
        path = " -> ".join(str(p) for p in error.absolute_path) or "(root)"
        errors.append(f"{path}: {error.message}")
    return errors


def load_config(path: Path, command: Command) -> dict:
    """Load a command config and validate it against the command's schema."""
    path = Path(path)
    try:
        config = load_json(path)
    except FileNotFoundError:
        raise ConfigError([f"file not found: {path}"], path)
    except json.JSONDecodeError as e:
        raise ConfigError([f"invalid JSON: {e}"], path)

    errors = schema_errors(config, load_json(command.schema_path))
    if errors:
        raise ConfigError(errors, path)
    return config


def noise_model_errors(data: dict) -> list[str]:
    """Validation messages for a NoiseModel JSON object."""
    return schema_errors(data, load_json(SCHEMAS_DIR / "noise_model.schema.json"))


def config_hash(config: dict) -> str:
    """Short SHA-256 of the canonical JSON form of a config."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def scaled_settings(config: dict, paper_scale: bool) -> dict:
    """Desk-scale settings with the "paper" section laid over them when asked."""
    settings = {k: v for k, v in config.items() if k != "paper"}
    if paper_scale:
        settings.update(config.get("paper", {}))
    return settings


def cell_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """Independent generators, one per cell, fixed by (seed, cell index)."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


@dataclass
class RunManifest:
    command: Command
    config_path: str
    seed: int
    output_dir: str
    config: dict = field(default_factory=dict)
    timestamp: str = field(
        default_factory=lambda: datetime.now(timezone.utc).strftime(TIMESTAMP_FORMAT)
    )
    paper_scale: bool = False

    def __post_init__(self):
        self.command = Command(self.command)

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    @property
    def stem(self) -> str:
        return f"{self.command.value}-{self.seed}-{self.timestamp}"

    def output_path(self, suffix: str, tag: Optional[str] = None) -> Path:
        """<command>-<seed>-<timestamp>[-tag].<suffix> under output_dir."""
        name = self.stem if tag is None else f"{self.stem}-{tag}"
        return Path(self.output_dir) / f"{name}.{suffix}"

    def latest_path(self, suffix: str, tag: Optional[str] = None) -> Path:
        """Fixed name <command>-<seed>-latest[-tag].<suffix>, overwritten by every run."""
        stem = f"{self.command.value}-{self.seed}-latest"
        name = stem if tag is None else f"{stem}-{tag}"
        return Path(self.output_dir) / f"{name}.{suffix}"

    def header(self) -> dict:
        return {
            "command": self.command.value,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "timestamp": self.timestamp,
        }

    def to_dict(self) -> dict:
        data = asdict(self)
        data["command"] = self.command.value
        data["config_hash"] = self.config_hash
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "RunManifest":
        data = {k: v for k, v in data.items() if k != "config_hash"}
        return cls(**data)

    def write(self) -> Path:
        path = self.output_path("json", tag="manifest")
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
        return path

    @classmethod
    def read(cls, path: Path) -> "RunManifest":
        return cls.from_dict(load_json(path))


def write_csv(frame: pd.DataFrame, path: Path, manifest: RunManifest) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        for key, value in manifest.header().items():
            f.write(f"# {key}: {value}\n")
        frame.to_csv(f, index=False, float_format=FLOAT_FORMAT)
    return path


def read_csv(path: Path) -> pd.DataFrame:
    """Read a CSV written by write_csv (header comment lines are skipped)."""
    return pd.read_csv(path, comment="#")


def write_json(data: dict, path: Path, manifest: RunManifest) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump({"manifest": manifest.header(), **data}, f, indent=2, default=_json_default)
    return path


def _json_default(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def build_parser(command: Command, description: str, paper_scale: bool = False) -> argparse.ArgumentParser:
    """Parser with the flags every command shares."""
    parser = argparse.ArgumentParser(prog=command.value, description=description)
    parser.add_argument(
        "--config",
        type=Path,
        default=command.default_config,
        help=f"JSON config (default: {command.default_config.relative_to(PROJECT_ROOT)})",
    )
    parser.add_argument("--seed", type=int, default=0, help="Random seed (default: 0)")
    parser.add_argument(
        "--out",
        type=Path,
        default=PROJECT_ROOT / "output",
        help="Output directory (default: output/)",
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=1,
        help="Worker threads for independent cells (default: 1)",
    )
    parser.add_argument("--quiet", "-q", action="store_true", help="Suppress progress output")
    if paper_scale:
        parser.add_argument(
            "--paper-scale",
            action="store_true",
            help="Use the full-size section of the config instead of the desk-scale one",
        )
    return parser


def start_run(command: Command, args: argparse.Namespace) -> RunManifest:
    """Load and validate the config, returning the run's manifest."""
    config = load_config(args.config, command)
    if args.threads < 1:
        raise ConfigError([f"--threads must be >= 1, got {args.threads}"])
    return RunManifest(
        command=command,
        config_path=str(args.config),
        seed=args.seed,
        output_dir=str(args.out),
        config=config,
        paper_scale=bool(getattr(args, "paper_scale", False)),
    )


def run_command(command: Command, main: Callable[[], None]):
    """
    Run a command's main, turning library errors into a one-line JSON error on
    stderr and exit status 1.
    """
    try:
        main()
    except (ValueError, RuntimeError, OSError) as e:
        error = {"error": type(e).__name__, "message": str(e), "command": command.value}
        print(json.dumps(error), file=sys.stderr)
        sys.exit(1)
