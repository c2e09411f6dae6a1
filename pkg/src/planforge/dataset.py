"""Loss-masked fine-tuning dataset export and verification.

One JSON-lines record per episode: a system prompt plus strictly alternating
user/assistant turns, loss=true exactly on assistant turns. Assistant
content is the canonical re-rendering of the planner's reply, so training
targets follow the strict grammar the emulator parses. Schema and a golden
sample live in docs/dataset_schema.md.
"""
from __future__ import annotations

import json
import random
import statistics
from dataclasses import dataclass
from pathlib import Path

from .elicit import Episode
from .errors import EmptyDataset, ParseError, Violation
from .plan_io import DIALECTS, parse_response

RECORD_KEYS = ("id", "dialect", "system", "turns", "meta")


def episode_to_record(episode: Episode) -> dict | None:
    """Build the chat-style record; None when no turn parsed (nothing to train on).

    Turns that failed to parse are dropped from the assistant stream; their
    observations are folded into the next user turn so the observation
    history stays complete and alternation holds.
    """
    turns: list[dict] = []
    pending: list[str] = []
    n_actions = 0
    for turn in episode.turns:
        pending.append(turn.observation)
        if turn.canonical is None:
            continue
        turns.append({"role": "user", "content": "\n".join(pending), "loss": False})
        turns.append({"role": "assistant", "content": turn.canonical, "loss": True})
        pending = []
        n_actions += len(turn.response.plan)
    if not any(t["role"] == "assistant" for t in turns):
        return None
    return {
        "id": episode.key,
        "dialect": episode.dialect,
        "system": episode.system_prompt,
        "turns": turns,
        "meta": {
            "scenario_id": episode.scenario_id,
            "task": episode.task,
            "n_actions": n_actions,
            "terminal": episode.terminal,
        },
    }


def _dump_record(record: dict) -> str:
    ordered = {key: record[key] for key in RECORD_KEYS}
    return json.dumps(ordered, ensure_ascii=False)


@dataclass
class ExportResult:
    train_path: Path
    val_path: Path
    summary: dict


def export(
    episodes: list[Episode],
    split_ratio: float,
    seed: int,
    out_dir: Path,
) -> ExportResult:
    """Deterministic shuffle-then-split export of one record per episode."""
    if not 0 <= split_ratio <= 1:
        raise ValueError("split_ratio must be in [0, 1]")
    records = []
    for episode in episodes:
        record = episode_to_record(episode)
        if record is not None:
            records.append(record)
    if not records:
        raise EmptyDataset("no exportable episodes")
    records.sort(key=lambda r: r["id"])
    random.Random(seed).shuffle(records)
    n_train = round(split_ratio * len(records))
    train, val = records[:n_train], records[n_train:]

    out_dir.mkdir(parents=True, exist_ok=True)
    train_path = out_dir / "train.jsonl"
    val_path = out_dir / "val.jsonl"
    train_path.write_text(
        "".join(_dump_record(r) + "\n" for r in train), encoding="utf-8"
    )
    val_path.write_text("".join(_dump_record(r) + "\n" for r in val), encoding="utf-8")

    lengths = [sum(1 for t in r["turns"] if t["loss"]) for r in records]
    histogram: dict[str, int] = {}
    for episode in episodes:
        for action in episode.action_sequence():
            name = action.split("(")[0].split()[0]
            histogram[name] = histogram.get(name, 0) + 1
    summary = {
        "n_records": len(records),
        "n_turns": sum(len(r["turns"]) for r in records),
        "split_sizes": {"train": len(train), "val": len(val)},
        "trajectory_length": {
            "mean": round(statistics.mean(lengths), 3),
            "p50": statistics.median(lengths),
            "p95": sorted(lengths)[max(0, round(0.95 * len(lengths)) - 1)],
            "max": max(lengths),
        },
        "action_histogram": dict(sorted(histogram.items())),
    }
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    return ExportResult(train_path=train_path, val_path=val_path, summary=summary)


def verify_dataset(path: Path) -> list[Violation]:
    """Re-parse an exported file and re-check every record invariant."""
    violations: list[Violation] = []
    path = Path(path)
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path.name}:{lineno}"
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                violations.append(Violation("MalformedRecord", where, str(exc)))
                continue
            missing = [k for k in RECORD_KEYS if k not in record]
            if missing:
                violations.append(
                    Violation("MissingKeys", where, ",".join(missing))
                )
                continue
            if record["dialect"] not in DIALECTS:
                violations.append(Violation("UnknownDialect", where, record["dialect"]))
                continue
            turns = record["turns"]
            if not isinstance(turns, list) or not turns:
                violations.append(Violation("NoTurns", where))
                continue
            expected = "user"
            for i, turn in enumerate(turns):
                role = turn.get("role")
                if role != expected:
                    violations.append(
                        Violation("BrokenAlternation", f"{where}/turns/{i}", f"got {role}")
                    )
                    break
                if turn.get("loss") != (role == "assistant"):
                    violations.append(
                        Violation("LossMaskViolation", f"{where}/turns/{i}")
                    )
                expected = "assistant" if expected == "user" else "user"
            assistant_turns = [t for t in turns if t.get("role") == "assistant"]
            if not assistant_turns:
                violations.append(Violation("NoAssistantTurns", where))
            for i, turn in enumerate(assistant_turns):
                try:
                    parse_response(turn.get("content", ""), record["dialect"])
                except ParseError as exc:
                    violations.append(
                        Violation(
                            "UnparseableAction",
                            f"{where}/assistant/{i}",
                            f"offset {exc.offset}: expected {exc.expected}",
                        )
                    )
    return violations
