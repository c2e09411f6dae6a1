"""Declarative run configuration: one JSON file drives every CLI stage."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .client import BACKEND_KINDS, BackendConfig
from .elicit import ElicitConfig
from .errors import ConfigError, SchemaError
from .plan_io import DIALECTS
from .scenarios import GenConfig


@dataclass
class BenchConfig:
    n_queries: int = 60
    injected_delay_ms: float = 0.0
    service_time_ms: float = 50.0

    def __post_init__(self) -> None:
        if self.n_queries < 1:
            raise ConfigError("/bench/n_queries", "must be >= 1")


@dataclass
class RunConfig:
    dialect: str
    base_seed: int
    output_root: Path
    n_scenarios: int = 5
    generator: BackendConfig | None = None  # None -> procedural source
    planner: BackendConfig = field(default_factory=lambda: BackendConfig(kind="oracle"))
    generation: GenConfig = field(default_factory=GenConfig)
    elicit: ElicitConfig = field(default_factory=ElicitConfig)
    split_ratio: float = 0.9
    eval_suite: Path | None = None
    bench: BenchConfig = field(default_factory=BenchConfig)

    @property
    def run_id(self) -> str:
        return f"run_{self.base_seed}"

    def scenarios_dir(self) -> Path:
        return self.output_root / "scenarios"

    def episodes_dir(self) -> Path:
        return self.output_root / "episodes" / self.run_id

    def dataset_dir(self) -> Path:
        return self.output_root / "dataset"

    def to_dict(self) -> dict:
        return {
            "dialect": self.dialect,
            "base_seed": self.base_seed,
            "output_root": str(self.output_root),
            "n_scenarios": self.n_scenarios,
            "generator": _backend_dict(self.generator) if self.generator else {"kind": "procedural"},
            "planner": _backend_dict(self.planner),
            "generation": {
                "env_size": self.generation.env_size,
                "n_tasks": self.generation.n_tasks,
                "temperature": self.generation.temperature,
                "max_reprompts": self.generation.max_reprompts,
                "restart_on_reprompt": self.generation.restart_on_reprompt,
            },
            "elicit": {
                "max_iterations": self.elicit.max_iterations,
                "mask_fraction_range": list(self.elicit.mask_fraction_range),
                "ablate_masking": self.elicit.ablate_masking,
                "ablate_validation": self.elicit.ablate_validation,
                "parallelism": self.elicit.parallelism,
            },
            "export": {"split_ratio": self.split_ratio},
            "eval_suite": str(self.eval_suite) if self.eval_suite else None,
            "bench": {
                "n_queries": self.bench.n_queries,
                "injected_delay_ms": self.bench.injected_delay_ms,
                "service_time_ms": self.bench.service_time_ms,
            },
        }


def _backend_dict(cfg: BackendConfig) -> dict:
    return {
        "kind": cfg.kind,
        "base_url": cfg.base_url,
        "model_name": cfg.model_name,
        "temperature": cfg.temperature,
        "timeout": cfg.timeout,
        "max_retries": cfg.max_retries,
        "parallelism": cfg.parallelism,
        "backoff_base": cfg.backoff_base,
        "max_tokens": cfg.max_tokens,
        "api_key_env": cfg.api_key_env,
        "strict_replay": cfg.strict_replay,
        "replay_dir": cfg.replay_dir,
    }


def _backend_from_dict(data: dict, path: str) -> BackendConfig:
    if not isinstance(data, dict):
        raise ConfigError(path, "object required")
    kind = data.get("kind")
    if kind not in BACKEND_KINDS:
        raise ConfigError(f"{path}/kind", f"expected one of {BACKEND_KINDS}, got {kind!r}")
    known = {
        "kind", "base_url", "model_name", "temperature", "timeout", "max_retries",
        "parallelism", "backoff_base", "max_tokens", "api_key_env", "strict_replay",
        "replay_dir",
    }
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{path}/{sorted(unknown)[0]}", "unknown backend field")
    try:
        return BackendConfig(**data)
    except SchemaError as exc:
        raise ConfigError(f"{path}{exc.path}", exc.detail) from None
    except TypeError as exc:
        raise ConfigError(path, str(exc)) from None


def load_run_config(path: Path, overrides: dict | None = None) -> RunConfig:
    """Parse the config file; CLI-flag overrides win over file values."""
    path = Path(path)
    if not path.exists():
        raise ConfigError("/", f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError("/", f"config is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("/", "config must be a JSON object")
    if overrides:
        data = _apply_overrides(data, overrides)
    return run_config_from_dict(data)


def _apply_overrides(data: dict, overrides: dict) -> dict:
    merged = json.loads(json.dumps(data))  # deep copy
    if overrides.get("seed") is not None:
        merged["base_seed"] = overrides["seed"]
    if overrides.get("out") is not None:
        merged["output_root"] = overrides["out"]
    if overrides.get("n") is not None:
        merged["n_scenarios"] = overrides["n"]
    if overrides.get("backend") is not None:
        merged.setdefault("planner", {})["kind"] = overrides["backend"]
    if overrides.get("no_masking"):
        merged.setdefault("elicit", {})["ablate_masking"] = True
    if overrides.get("no_validation"):
        merged.setdefault("elicit", {})["ablate_validation"] = True
    if overrides.get("delay_ms") is not None:
        merged.setdefault("bench", {})["injected_delay_ms"] = overrides["delay_ms"]
    return merged


def run_config_from_dict(data: dict) -> RunConfig:
    for key in ("dialect", "base_seed", "output_root"):
        if key not in data:
            raise ConfigError(f"/{key}", "required key missing")
    if data["dialect"] not in DIALECTS:
        raise ConfigError("/dialect", f"expected one of {DIALECTS}")
    if not isinstance(data["base_seed"], int):
        raise ConfigError("/base_seed", "integer required")

    generator = None
    gen_raw = data.get("generator", {"kind": "procedural"})
    if isinstance(gen_raw, dict) and gen_raw.get("kind", "procedural") != "procedural":
        generator = _backend_from_dict(gen_raw, "/generator")

    planner_raw = data.get("planner", {"kind": "oracle"})
    planner = _backend_from_dict(planner_raw, "/planner")

    gen_cfg_raw = dict(data.get("generation", {}))
    gen_cfg_raw["dialect"] = data["dialect"]
    try:
        generation = GenConfig(**gen_cfg_raw)
    except SchemaError as exc:
        raise ConfigError(exc.path, exc.detail) from None
    except TypeError as exc:
        raise ConfigError("/generation", str(exc)) from None

    elicit_raw = dict(data.get("elicit", {}))
    if "mask_fraction_range" in elicit_raw:
        elicit_raw["mask_fraction_range"] = tuple(elicit_raw["mask_fraction_range"])
    try:
        elicit = ElicitConfig(**elicit_raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError("/elicit", str(exc)) from None

    export_raw = data.get("export", {})
    split_ratio = export_raw.get("split_ratio", 0.9)
    if not isinstance(split_ratio, (int, float)) or not 0 <= split_ratio <= 1:
        raise ConfigError("/export/split_ratio", "must be in [0, 1]")

    try:
        bench = BenchConfig(**data.get("bench", {}))
    except TypeError as exc:
        raise ConfigError("/bench", str(exc)) from None

    n_scenarios = data.get("n_scenarios", 5)
    if not isinstance(n_scenarios, int) or n_scenarios < 1:
        raise ConfigError("/n_scenarios", "must be a positive integer")

    return RunConfig(
        dialect=data["dialect"],
        base_seed=data["base_seed"],
        output_root=Path(data["output_root"]),
        n_scenarios=n_scenarios,
        generator=generator,
        planner=planner,
        generation=generation,
        elicit=elicit,
        split_ratio=float(split_ratio),
        eval_suite=Path(data["eval_suite"]) if data.get("eval_suite") else None,
        bench=bench,
    )
