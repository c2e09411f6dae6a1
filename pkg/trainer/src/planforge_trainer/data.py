"""Dataset loading against the documented JSON-lines record schema.

The trainer talks to the data pipeline only through its file format (see the
pipeline's docs/dataset_schema.md), so the schema checks are re-implemented
here rather than imported.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .tokenizer import encode_conversation

logger = logging.getLogger(__name__)

REQUIRED_KEYS = ("id", "dialect", "system", "turns", "meta")


class DatasetInvalid(ValueError):
    pass


@dataclass
class Example:
    record_id: str
    ids: list[int]
    labels: list[int]


def validate_record(record: dict, where: str) -> None:
    missing = [k for k in REQUIRED_KEYS if k not in record]
    if missing:
        raise DatasetInvalid(f"{where}: missing keys {missing}")
    turns = record["turns"]
    if not isinstance(turns, list) or not turns:
        raise DatasetInvalid(f"{where}: empty turns")
    expected = "user"
    for i, turn in enumerate(turns):
        if turn.get("role") != expected:
            raise DatasetInvalid(f"{where}: turn {i} expected {expected}")
        if turn.get("loss") != (expected == "assistant"):
            raise DatasetInvalid(f"{where}: turn {i} loss flag wrong")
        if not isinstance(turn.get("content"), str):
            raise DatasetInvalid(f"{where}: turn {i} content missing")
        expected = "assistant" if expected == "user" else "user"
    if not any(t["role"] == "assistant" for t in turns):
        raise DatasetInvalid(f"{where}: no assistant turns")


def load_records(path: Path) -> list[dict]:
    records = []
    with Path(path).open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetInvalid(f"{path.name}:{lineno}: bad JSON ({exc})") from None
            validate_record(record, f"{path.name}:{lineno}")
            records.append(record)
    if not records:
        raise DatasetInvalid(f"{path}: no records")
    return records


def build_examples(records: list[dict], max_seq: int) -> list[Example]:
    """One token sequence per record, truncated from the right if oversized
    (the loss mask survives truncation unchanged on the kept prefix).

    Records whose truncation strips every supervised position are dropped:
    they carry no training signal and would poison batch losses with NaNs.
    """
    examples = []
    dropped = 0
    for record in records:
        ids, labels = encode_conversation(record["system"], record["turns"])
        if len(ids) > max_seq:
            ids, labels = ids[:max_seq], labels[:max_seq]
        if all(label == -100 for label in labels):
            dropped += 1
            continue
        examples.append(Example(record["id"], ids, labels))
    if dropped:
        logger.warning("dropped %d record(s) with no supervised tokens after truncation", dropped)
    if not examples:
        raise DatasetInvalid(f"no trainable records at max_seq={max_seq}")
    return examples
