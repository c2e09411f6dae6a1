"""Planner scoring against goal-carrying scenario suites, plus latency benchmarking."""
from __future__ import annotations

import json
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .client import Client
from .elicit import ElicitConfig, Episode, derive_episode_seed, run_episode
from .errors import PlanforgeError, SchemaError
from .goals import GoalSpec
from .scenarios import Scenario


def _is_subsequence(needle: tuple[str, ...], haystack: list[str]) -> bool:
    it = iter(haystack)
    return all(any(item == want for item in it) for want in needle)


def check_goal(episode: Episode, goal: GoalSpec) -> bool:
    """Score one finished episode; timeouts never succeed."""
    if episode.terminal == "timeout":
        return False
    world = episode.final_world
    if goal.kind == "visit_region":
        target = goal.targets[0]
        return world.robot_location == target or target in world.visited
    if goal.kind == "reveal_object":
        return set(goal.targets) <= world.revealed_nodes
    if goal.kind == "answer_mentions":
        message = (world.answer_message or "").lower()
        return all(token.lower() in message for token in goal.tokens)
    if goal.kind == "placement_predicate":
        return all(world.placements.get(obj) == loc for obj, loc in goal.require_placements)
    if goal.kind == "subgoal_sequence":
        return _is_subsequence(goal.subgoals, episode.action_sequence())
    return False


@dataclass
class LatencyStats:
    n: int
    mean_ms: float
    stddev_ms: float
    p50_ms: float
    p95_ms: float

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mean_ms": round(self.mean_ms, 3),
            "stddev_ms": round(self.stddev_ms, 3),
            "p50_ms": round(self.p50_ms, 3),
            "p95_ms": round(self.p95_ms, 3),
        }


def latency_stats(latencies_ms: list[float]) -> LatencyStats:
    ordered = sorted(latencies_ms)
    n = len(ordered)
    return LatencyStats(
        n=n,
        mean_ms=statistics.mean(ordered),
        stddev_ms=statistics.stdev(ordered) if n > 1 else 0.0,
        p50_ms=statistics.median(ordered),
        p95_ms=ordered[max(0, round(0.95 * n) - 1)],
    )


@dataclass
class EvalReport:
    rows: list[dict]
    success_rate: float
    breakdown: dict[str, dict]
    latency: LatencyStats | None = None

    def to_dict(self) -> dict:
        return {
            "success_rate": round(self.success_rate, 4),
            "breakdown": self.breakdown,
            "latency": self.latency.to_dict() if self.latency else None,
            "rows": self.rows,
        }


def evaluate(
    client: Client,
    suite: list[Scenario],
    cfg: ElicitConfig,
    base_seed: int = 0,
    transcript_dir: Path | None = None,
) -> EvalReport:
    """Run every goal-carrying task in the suite and aggregate outcomes.

    Identical base seeds give identical reports for deterministic backends.
    """
    jobs = []
    for scenario in suite:
        if scenario.goals is None or len(scenario.goals) != len(scenario.tasks):
            raise SchemaError(
                "/goals", f"scenario {scenario.scenario_id} carries no per-task goals"
            )
        for index, (task, goal) in enumerate(zip(scenario.tasks, scenario.goals)):
            jobs.append((scenario, task, index, goal))

    def _run(job):
        scenario, task, index, goal = job
        seed = derive_episode_seed(base_seed, scenario.scenario_id, index)
        try:
            episode = run_episode(client, scenario, task, cfg, seed, index, transcript_dir)
        except PlanforgeError as exc:
            return {
                "episode": f"{scenario.scenario_id}_task{index}",
                "task": task,
                "success": False,
                "terminal": "error",
                "turns": 0,
                "latency_s": 0.0,
                "specification": goal.specification,
                "category": goal.category,
                "error": str(exc),
            }
        return {
            "episode": episode.key,
            "task": task,
            "success": check_goal(episode, goal),
            "terminal": episode.terminal,
            "turns": len(episode.turns),
            "latency_s": round(sum(t.latency for t in episode.turns), 6),
            "turn_latencies_s": [round(t.latency, 6) for t in episode.turns],
            "specification": goal.specification,
            "category": goal.category,
        }

    with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
        rows = list(pool.map(_run, jobs))
    rows.sort(key=lambda r: r["episode"])

    by_cell: dict[str, list[bool]] = {}
    for row in rows:
        cell = f"{row['specification']}/{row['category']}"
        by_cell.setdefault(cell, []).append(row["success"])
    breakdown = {
        cell: {
            "total": len(outcomes),
            "successes": sum(outcomes),
            "success_rate": round(sum(outcomes) / len(outcomes), 4),
        }
        for cell, outcomes in sorted(by_cell.items())
    }
    successes = sum(r["success"] for r in rows)
    per_query = [
        t * 1000.0 for row in rows for t in row.get("turn_latencies_s", [])
    ]
    return EvalReport(
        rows=rows,
        success_rate=successes / len(rows) if rows else 0.0,
        breakdown=breakdown,
        latency=latency_stats(per_query) if per_query else None,
    )


def write_report(report: EvalReport, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(
        json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    lines = ["episode,success,terminal,turns,latency_s,specification,category"]
    for row in report.rows:
        lines.append(
            f"{row['episode']},{int(row['success'])},{row['terminal']},"
            f"{row['turns']},{row['latency_s']},{row['specification']},{row['category']}"
        )
    (out_dir / "report.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


PROBE_MESSAGES = [
    {
        "role": "system",
        "content": "You are a robot planner latency probe. Reply with the single word: ok.",
    },
    {"role": "user", "content": "ping"},
]


def bench_latency(
    client: Client,
    n_queries: int,
    injected_delay_ms: float = 0.0,
    csv_path: Path | None = None,
    condition: str | None = None,
) -> LatencyStats:
    """Issue n identical queries strictly sequentially and report latency stats.

    Delay injection happens server-side (the bundled mock server splits the
    configured delay across request and response legs); this function only
    labels the rows with the condition it measured.
    """
    if n_queries < 1:
        raise ValueError("n_queries must be >= 1")
    label = condition or f"delay_{int(injected_delay_ms)}ms"
    latencies_ms: list[float] = []
    for _ in range(n_queries):
        result = client.complete(list(PROBE_MESSAGES))
        latencies_ms.append(result.latency * 1000.0)
    stats = latency_stats(latencies_ms)
    if csv_path is not None:
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        new_file = not csv_path.exists()
        with csv_path.open("a", encoding="utf-8") as handle:
            if new_file:
                handle.write("query_index,latency_ms,condition\n")
            for i, latency in enumerate(latencies_ms):
                handle.write(f"{i},{latency:.3f},{label}\n")
    return stats
