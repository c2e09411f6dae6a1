"""Shared fixtures: datasets are produced by the pipeline's own CLI, so the
trainer is exercised strictly through the documented file formats."""
from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest


def run_pipeline_cli(*args: str) -> None:
    result = subprocess.run(
        [sys.executable, "-m", "planforge.cli", *args],
        capture_output=True,
        text=True,
    )
    assert result.returncode == 0, result.stderr


def build_dataset(root: Path, n_scenarios: int, n_tasks: int, base_seed: int = 9) -> Path:
    config = {
        "dialect": "spine",
        "base_seed": base_seed,
        "output_root": str(root / "out"),
        "n_scenarios": n_scenarios,
        "generator": {"kind": "procedural"},
        "planner": {"kind": "oracle"},
        "generation": {"env_size": 10, "n_tasks": n_tasks},
        "elicit": {"max_iterations": 15, "parallelism": 4},
        "export": {"split_ratio": 1.0},
    }
    config_path = root / "run.json"
    config_path.write_text(json.dumps(config))
    for stage in ("generate", "elicit", "export"):
        run_pipeline_cli(stage, "--config", str(config_path))
    return root / "out" / "dataset" / "train.jsonl"


@pytest.fixture(scope="session")
def dataset_50(tmp_path_factory) -> Path:
    """50 oracle-elicited records, exported by the pipeline CLI."""
    root = tmp_path_factory.mktemp("dataset50")
    train = build_dataset(root, n_scenarios=13, n_tasks=4)
    lines = train.read_text(encoding="utf-8").splitlines()
    assert len(lines) >= 50
    trimmed = root / "train50.jsonl"
    trimmed.write_text("\n".join(lines[:50]) + "\n", encoding="utf-8")
    return trimmed


@pytest.fixture(scope="session")
def dataset_tiny(tmp_path_factory) -> Path:
    """A handful of records for fast unit-level runs."""
    root = tmp_path_factory.mktemp("datasettiny")
    return build_dataset(root, n_scenarios=2, n_tasks=2, base_seed=4)
