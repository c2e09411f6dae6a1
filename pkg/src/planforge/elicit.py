"""Closed-loop episode runner: seed the planner with a masked observation,
alternate plan/observe through the emulator until termination, validate.

One planner turn consumes one budget step, whether it parsed, acted, or
failed. The scene-graph dialect re-plans after every applied action (each
update is new information); the script dialects (saycan, llm_planner)
execute their whole script up to the first infeasible step.

Episodes whose budget expires without an explicit completion signal are
invalid and excluded from export unless validation is ablated.
"""
from __future__ import annotations

import hashlib
import json
import logging
import random
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

from .client import Client, CompletionResult, prompt_hash
from .emulator import ObservationDelta, WorldState, apply_action, mark_complete, world_from_visible
from .errors import ParseError, PlanforgeError
from .masking import DEFAULT_MASK_RANGE, MaskedEnvironment, initial_observation, mask_environment
from .plan_io import PlannerResponse, parse_response, render_response, render_system_prompt
from .scenarios import Scenario

logger = logging.getLogger(__name__)

PARSE_FEEDBACK_PREFIX = "Your last message failed to parse"


@dataclass
class ElicitConfig:
    max_iterations: int = 10
    mask_fraction_range: tuple[float, float] = DEFAULT_MASK_RANGE
    ablate_masking: bool = False
    ablate_validation: bool = False
    parallelism: int = 4

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        lo, hi = self.mask_fraction_range
        if not (0 <= lo <= hi <= 1):
            raise ValueError("mask_fraction_range must be ordered within [0, 1]")


@dataclass
class Turn:
    observation: str
    raw: str
    response: PlannerResponse | None  # None when the reply failed to parse
    canonical: str | None
    deltas: list[ObservationDelta] = field(default_factory=list)
    latency: float = 0.0


@dataclass
class Episode:
    scenario_id: str
    dialect: str
    task: str
    task_index: int
    seed: int
    mask: MaskedEnvironment
    system_prompt: str
    turns: list[Turn]
    terminal: str  # answered | done | timeout
    valid: bool
    final_world: WorldState
    parse_error_turns: int = 0
    transcript_path: str | None = None

    @property
    def key(self) -> str:
        return episode_key(self.scenario_id, self.task_index)

    def action_sequence(self) -> list[str]:
        """Canonical per-call action strings across all parsed turns, in order."""
        out = []
        for turn in self.turns:
            if turn.response is not None:
                out.extend(c.render(self.dialect) for c in turn.response.plan)
        return out


def episode_key(scenario_id: str, task_index: int) -> str:
    return f"{scenario_id}_task{task_index}"


def derive_episode_seed(base_seed: int, scenario_id: str, task_index: int) -> int:
    digest = hashlib.sha256(f"{base_seed}:{scenario_id}:{task_index}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def run_episode(
    client: Client,
    scenario: Scenario,
    task: str,
    cfg: ElicitConfig,
    seed: int,
    task_index: int = 0,
    transcript_dir: Path | None = None,
) -> Episode:
    """Run one task closed-loop; planner-content problems never raise, backend
    failures do."""
    rng = random.Random(seed)
    if cfg.ablate_masking:
        fraction = 0.0
    else:
        fraction = rng.uniform(*cfg.mask_fraction_range)
    mask = mask_environment(scenario.environment, fraction, seed)
    world = world_from_visible(scenario.dialect, scenario.environment, mask.visible)

    messages = render_system_prompt(scenario.dialect, task)
    system_prompt = messages[0]["content"]
    observation = initial_observation(mask, scenario.dialect)
    session = client.session(episode_key(scenario.scenario_id, task_index))

    turns: list[Turn] = []
    transcript: list[dict] = []
    parse_errors = 0
    terminal = "timeout"

    while world.step_count < cfg.max_iterations:
        messages = messages + [{"role": "user", "content": observation}]
        result = session.complete(messages)
        _record_exchange(transcript, messages, result, client)
        messages = messages + [{"role": "assistant", "content": result.text}]
        world = world.copy()
        world.step_count += 1

        try:
            response = parse_response(result.text, scenario.dialect)
        except ParseError as exc:
            parse_errors += 1
            turns.append(Turn(observation, result.text, None, None, latency=result.latency))
            observation = f"{PARSE_FEEDBACK_PREFIX}: {exc}"
            continue

        world, deltas, finished = _execute_plan(world, response, scenario.dialect)
        turns.append(
            Turn(
                observation,
                result.text,
                response,
                render_response(response),
                deltas,
                latency=result.latency,
            )
        )
        if finished:
            terminal = world.terminal_kind or "done"
            break
        rendered = [d.rendered for d in deltas if d.rendered and d.kind != "terminal"]
        observation = "\n".join(rendered) if rendered else "no change"

    valid = cfg.ablate_validation or terminal != "timeout"
    episode = Episode(
        scenario_id=scenario.scenario_id,
        dialect=scenario.dialect,
        task=task,
        task_index=task_index,
        seed=seed,
        mask=mask,
        system_prompt=system_prompt,
        turns=turns,
        terminal=terminal,
        valid=valid,
        final_world=world,
        parse_error_turns=parse_errors,
    )
    if transcript_dir is not None:
        episode.transcript_path = str(_write_transcript(transcript, episode, transcript_dir))
    return episode


def _execute_plan(
    world: WorldState, response: PlannerResponse, dialect: str
) -> tuple[WorldState, list[ObservationDelta], bool]:
    """Apply a parsed plan; return (world, deltas, episode_finished)."""
    deltas: list[ObservationDelta] = []
    if dialect == "spine":
        # closed loop: every applied action is a re-planning point
        world, delta = apply_action(world, response.plan[0])
        deltas.append(delta)
        return world, deltas, world.terminated
    ran_all = True
    for call in response.plan:
        world, delta = apply_action(world, call)
        deltas.append(delta)
        if delta.kind == "feedback":
            ran_all = False
            break
        if world.terminated:
            return world, deltas, True
    if dialect == "llm_planner" and ran_all:
        # no explicit done verb: a fully executed script completes the task
        world = mark_complete(world)
        return world, deltas, True
    return world, deltas, False


def _record_exchange(
    transcript: list[dict],
    messages: list[dict[str, str]],
    result: CompletionResult,
    client: Client,
) -> None:
    transcript.append(
        {
            "direction": "request",
            "timestamp": result.request_timestamp,
            "payload": {
                "model": client.config.model_name,
                "messages": messages,
                "prompt_sha256": prompt_hash(messages),
            },
        }
    )
    transcript.append(
        {
            "direction": "response",
            "timestamp": result.response_timestamp,
            "payload": {
                "content": result.text,
                "latency": result.latency,
                "attempt_count": result.attempt_count,
            },
        }
    )


def _write_transcript(transcript: list[dict], episode: Episode, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{episode.key}.jsonl"
    with path.open("w", encoding="utf-8") as handle:
        for line in transcript:
            handle.write(json.dumps(line, ensure_ascii=False) + "\n")
    return path


@dataclass
class CollectSummary:
    total: int
    valid: int
    timeout: int
    errors: int
    parse_error_turns: int
    episodes: list[dict]
    interrupted: bool = False

    def to_dict(self) -> dict:
        out = {
            "total": self.total,
            "valid": self.valid,
            "timeout": self.timeout,
            "errors": self.errors,
            "parse_error_turns": self.parse_error_turns,
            "episodes": self.episodes,
        }
        if self.interrupted:
            out["interrupted"] = True
        return out


def collect_dataset(
    client: Client,
    scenarios: list[Scenario],
    cfg: ElicitConfig,
    base_seed: int,
    out_dir: Path | None = None,
) -> tuple[list[Episode], CollectSummary]:
    """Run every (scenario, task) pair; returns exportable episodes + summary.

    Episode seeds derive from (base_seed, scenario_id, task_index), so results
    are independent of worker scheduling. Invalid episodes stay out of the
    returned export list unless validation is ablated.
    """
    jobs = [
        (scenario, task, index)
        for scenario in scenarios
        for index, task in enumerate(scenario.tasks)
    ]

    def _run(job):
        scenario, task, index = job
        seed = derive_episode_seed(base_seed, scenario.scenario_id, index)
        try:
            return run_episode(client, scenario, task, cfg, seed, index, out_dir), None
        except PlanforgeError as exc:
            return None, (scenario.scenario_id, index, str(exc))

    results_map: dict[int, tuple] = {}
    interrupted = False
    with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
        futures = {pool.submit(_run, job): i for i, job in enumerate(jobs)}
        try:
            for future in as_completed(futures):
                results_map[futures[future]] = future.result()
        except KeyboardInterrupt:
            # graceful drain: keep what finished, drop the rest
            interrupted = True
            pool.shutdown(wait=False, cancel_futures=True)
            for future, i in futures.items():
                if i not in results_map and future.done() and not future.cancelled():
                    try:
                        results_map[i] = future.result()
                    except Exception:
                        pass
            logger.warning("interrupted: writing partial summary (%d/%d episodes)",
                           len(results_map), len(jobs))

    episodes: list[Episode] = []
    rows: list[dict] = []
    timeout = errors = parse_error_turns = 0
    for i, (scenario, task, index) in enumerate(jobs):
        if i not in results_map:
            continue
        episode, error = results_map[i]
        if error is not None:
            errors += 1
            rows.append(
                {
                    "episode": episode_key(scenario.scenario_id, index),
                    "terminal": "error",
                    "valid": False,
                    "turns": 0,
                    "error": error[2],
                }
            )
            continue
        parse_error_turns += episode.parse_error_turns
        if episode.terminal == "timeout":
            timeout += 1
        rows.append(
            {
                "episode": episode.key,
                "terminal": episode.terminal,
                "valid": episode.valid,
                "turns": len(episode.turns),
            }
        )
        if episode.valid:
            episodes.append(episode)
    rows.sort(key=lambda r: r["episode"])
    summary = CollectSummary(
        total=len(jobs),
        valid=len(episodes),
        timeout=timeout,
        errors=errors,
        parse_error_turns=parse_error_turns,
        episodes=rows,
        interrupted=interrupted,
    )
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "summary.json").write_text(
            json.dumps(summary.to_dict(), indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
    return episodes, summary
