"""Operator entry point: generate / elicit / export / eval / bench / pipeline.

Every stage is idempotent given identical inputs and seed; exit codes are
0 on success, 2 for configuration errors, 3 for stage failures. The resolved
config is copied into the output root for provenance.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .client import Client, HttpClient, BackendConfig, make_client
from .config import RunConfig, load_run_config
from .dataset import export as export_dataset
from .dataset import verify_dataset
from .elicit import collect_dataset
from .errors import ConfigError, PlanforgeError, StageFailure
from .evaluate import bench_latency, evaluate, write_report
from .mockserver import MockChatServer
from .oracle import oracle_for_scenarios
from .scenarios import Scenario, batch_generate, load_scenario, save_scenario

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


def _load_scenarios(directory: Path) -> list[Scenario]:
    paths = sorted(Path(directory).glob("scenario_*.json"))
    if not paths:
        raise StageFailure("elicit", FileNotFoundError(f"no scenario files in {directory}"))
    return [load_scenario(p) for p in paths]


def _planner_client(config: RunConfig, scenarios: list[Scenario]) -> Client:
    backend = config.planner
    if backend.kind == "replay" and not backend.replay_dir:
        backend.replay_dir = str(config.episodes_dir())
    oracle = oracle_for_scenarios(scenarios) if backend.kind == "oracle" else None
    return make_client(backend, dialect=config.dialect, oracle_planner=oracle)


def _copy_config(config: RunConfig) -> None:
    config.output_root.mkdir(parents=True, exist_ok=True)
    (config.output_root / "config.json").write_text(
        json.dumps(config.to_dict(), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def cmd_generate(config: RunConfig, dry_run: bool = False) -> list[Path]:
    if dry_run:
        print(f"would generate {config.n_scenarios} {config.dialect} scenarios "
              f"(seed {config.base_seed}) into {config.scenarios_dir()}")
        return []
    _copy_config(config)
    client = None
    if config.generator is not None:
        client = make_client(config.generator, dialect=config.dialect)
    scenarios = batch_generate(
        config.generation, config.base_seed, config.n_scenarios, client
    )
    paths = [save_scenario(s, config.scenarios_dir()) for s in scenarios]
    print(f"generated {len(paths)} scenarios -> {config.scenarios_dir()}")
    return paths


def cmd_elicit(config: RunConfig, dry_run: bool = False):
    scenarios = _load_scenarios(config.scenarios_dir())
    n_tasks = sum(len(s.tasks) for s in scenarios)
    if dry_run:
        print(f"would run {n_tasks} episodes with the {config.planner.kind} planner "
              f"-> {config.episodes_dir()}")
        return [], None
    _copy_config(config)
    client = _planner_client(config, scenarios)
    try:
        episodes, summary = collect_dataset(
            client, scenarios, config.elicit, config.base_seed, config.episodes_dir()
        )
    finally:
        client.close()
    print(
        f"elicited {summary.total} episodes: {summary.valid} valid, "
        f"{summary.timeout} timeout, {summary.errors} errors -> {config.episodes_dir()}"
    )
    return episodes, summary


def cmd_export(config: RunConfig, episodes=None, dry_run: bool = False):
    if dry_run:
        print(f"would export dataset (split {config.split_ratio}) -> {config.dataset_dir()}")
        return None
    if episodes is None:
        # rebuild episodes deterministically by replaying recorded transcripts
        scenarios = _load_scenarios(config.scenarios_dir())
        replay_cfg = BackendConfig(
            kind="replay", replay_dir=str(config.episodes_dir()),
            strict_replay=config.planner.strict_replay,
        )
        client = make_client(replay_cfg, dialect=config.dialect)
        episodes, _ = collect_dataset(
            client, scenarios, config.elicit, config.base_seed, out_dir=None
        )
    result = export_dataset(
        episodes, config.split_ratio, config.base_seed, config.dataset_dir()
    )
    violations = verify_dataset(result.train_path) + verify_dataset(result.val_path)
    if violations:
        raise StageFailure(
            "export", PlanforgeError(f"{len(violations)} dataset violations: {violations[:3]}")
        )
    print(
        f"exported {result.summary['n_records']} records "
        f"(train {result.summary['split_sizes']['train']}, "
        f"val {result.summary['split_sizes']['val']}) -> {config.dataset_dir()}"
    )
    return result


def cmd_eval(config: RunConfig, dry_run: bool = False):
    suite_dir = config.eval_suite or config.scenarios_dir()
    scenarios = _load_scenarios(suite_dir)
    if dry_run:
        n = sum(len(s.tasks) for s in scenarios)
        print(f"would evaluate {n} tasks from {suite_dir}")
        return None
    _copy_config(config)
    client = _planner_client(config, scenarios)
    try:
        report = evaluate(client, scenarios, config.elicit, config.base_seed)
    finally:
        client.close()
    out_dir = config.output_root / "eval"
    write_report(report, out_dir)
    print(f"evaluated {len(report.rows)} episodes: success_rate="
          f"{report.success_rate:.4f} -> {out_dir}")
    return report


def cmd_bench(config: RunConfig, dry_run: bool = False):
    out_dir = config.output_root / "bench"
    if dry_run:
        print(f"would run {config.bench.n_queries} latency probes "
              f"(injected {config.bench.injected_delay_ms} ms) -> {out_dir}")
        return None
    _copy_config(config)
    csv_path = out_dir / "latencies.csv"
    condition = f"delay_{int(config.bench.injected_delay_ms)}ms"
    if config.planner.kind == "http":
        client: Client = HttpClient(config.planner)
        try:
            stats = bench_latency(
                client, config.bench.n_queries, config.bench.injected_delay_ms,
                csv_path, condition,
            )
        finally:
            client.close()
    else:
        with MockChatServer(
            service_time_ms=config.bench.service_time_ms,
            injected_delay_ms=config.bench.injected_delay_ms,
        ) as server:
            client = HttpClient(BackendConfig(kind="http", base_url=server.url))
            try:
                stats = bench_latency(
                    client, config.bench.n_queries, config.bench.injected_delay_ms,
                    csv_path, condition,
                )
            finally:
                client.close()
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "stats.json").write_text(
        json.dumps({condition: stats.to_dict()}, indent=2) + "\n", encoding="utf-8"
    )
    print(f"bench {condition}: mean={stats.mean_ms:.1f} ms "
          f"stddev={stats.stddev_ms:.1f} ms -> {out_dir}")
    return stats


def cmd_pipeline(config: RunConfig, dry_run: bool = False):
    cmd_generate(config, dry_run)
    episodes, _ = cmd_elicit(config, dry_run)
    cmd_export(config, episodes if episodes else None, dry_run)
    report = cmd_eval(config, dry_run)
    cmd_bench(config, dry_run)
    return report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="planforge",
        description="Synthesize scenarios, elicit closed-loop plans, export "
        "loss-masked fine-tuning data, and benchmark planners.",
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("generate", "synthesize scenario files"),
        ("elicit", "run closed-loop episodes against the planner backend"),
        ("export", "serialize validated episodes into the training dataset"),
        ("eval", "score the planner backend on a goal-carrying suite"),
        ("bench", "measure query latency against the bundled mock server"),
        ("pipeline", "run generate, elicit, export, eval, and bench in order"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="path to the run config JSON")
        cmd.add_argument("--seed", type=int, help="override base_seed")
        cmd.add_argument("--out", help="override output_root")
        cmd.add_argument("--n", type=int, help="override n_scenarios")
        cmd.add_argument("--backend", help="override planner backend kind")
        cmd.add_argument("--no-masking", action="store_true",
                         help="ablation: skip environment masking")
        cmd.add_argument("--no-validation", action="store_true",
                         help="ablation: keep timeout episodes in the export")
        cmd.add_argument("--delay-ms", type=float, help="bench: injected delay override")
        cmd.add_argument("--dry-run", action="store_true", help="print the plan of work")
    return parser


COMMANDS = {
    "generate": cmd_generate,
    "elicit": cmd_elicit,
    "export": cmd_export,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "pipeline": cmd_pipeline,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    overrides = {
        "seed": args.seed,
        "out": args.out,
        "n": args.n,
        "backend": args.backend,
        "no_masking": args.no_masking,
        "no_validation": args.no_validation,
        "delay_ms": args.delay_ms,
    }
    try:
        config = load_run_config(Path(args.config), overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        COMMANDS[args.command](config, dry_run=args.dry_run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageFailure as exc:
        print(f"{exc}", file=sys.stderr)
        return EXIT_STAGE
    except PlanforgeError as exc:
        print(f"stage '{args.command}' failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
