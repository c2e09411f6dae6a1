"""Supervised fine-tuning with low-rank adapters and assistant-only loss.

Per-dialect hyperparameter presets are baked in as defaults and overridable
through TrainConfig. Each record trains as a single sequence: every action
turn is supervised jointly in one forward pass, with the loss restricted to
assistant tokens by the label mask.
"""
from __future__ import annotations

import csv
import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import nn

from .data import DatasetInvalid, Example, build_examples, load_records
from .model import adapter_state, apply_lora, build_base, merge_lora, save_model
from .tokenizer import PAD

logger = logging.getLogger(__name__)

# per-dialect SFT defaults
PRESETS = {
    "spine": dict(learning_rate=1e-4, weight_decay=1e-3, epochs=5, warmup_steps=5,
                  lora_rank=32, lora_alpha=16),
    "saycan": dict(learning_rate=1e-4, weight_decay=1e-3, epochs=5, warmup_steps=5,
                   lora_rank=32, lora_alpha=16),
    "llm_planner": dict(learning_rate=2e-4, weight_decay=5e-2, epochs=5, warmup_steps=5,
                        lora_rank=16, lora_alpha=16),
}


@dataclass
class TrainConfig:
    train_path: Path
    output_dir: Path
    val_path: Path | None = None
    base_model: str = "tiny-256x2"
    dialect: str = "spine"
    learning_rate: float = 1e-4
    weight_decay: float = 1e-3
    epochs: int = 5
    warmup_steps: int = 5
    lora_rank: int = 32
    lora_alpha: float = 16
    batch_size: int = 8
    max_seq: int = 4096
    seed: int = 0

    def __post_init__(self) -> None:
        positive = ("learning_rate", "epochs", "lora_rank", "lora_alpha",
                    "batch_size", "max_seq")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0 or self.warmup_steps < 0:
            raise ValueError("weight_decay and warmup_steps must be non-negative")


def config_for_dialect(dialect: str, train_path: Path, output_dir: Path, **overrides) -> TrainConfig:
    preset = PRESETS.get(dialect)
    if preset is None:
        raise ValueError(f"no preset for dialect {dialect!r}")
    merged = {**preset, **overrides}
    return TrainConfig(train_path=train_path, output_dir=output_dir, dialect=dialect, **merged)


def _batches(examples: list[Example], batch_size: int, rng: random.Random):
    order = list(range(len(examples)))
    rng.shuffle(order)
    for start in range(0, len(order), batch_size):
        chunk = [examples[i] for i in order[start : start + batch_size]]
        width = max(len(e.ids) for e in chunk)
        ids = torch.full((len(chunk), width), PAD, dtype=torch.long)
        labels = torch.full((len(chunk), width), -100, dtype=torch.long)
        for row, example in enumerate(chunk):
            ids[row, : len(example.ids)] = torch.tensor(example.ids, dtype=torch.long)
            labels[row, : len(example.labels)] = torch.tensor(example.labels, dtype=torch.long)
        yield ids, labels


def sequence_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Next-token cross entropy over supervised positions only."""
    shifted_logits = logits[:, :-1, :].reshape(-1, logits.shape[-1])
    shifted_labels = labels[:, 1:].reshape(-1)
    return nn.functional.cross_entropy(shifted_logits, shifted_labels, ignore_index=-100)


@dataclass
class TrainResult:
    output_dir: Path
    loss_curve: list[tuple[int, float]] = field(default_factory=list)  # (epoch, mean loss)
    initial_loss: float = 0.0  # eval pass before any update
    final_loss: float = 0.0  # eval pass after the last epoch


@torch.no_grad()
def evaluate_loss(model, examples: list[Example], batch_size: int = 8) -> float:
    was_training = model.training
    model.eval()
    total = 0.0
    count = 0
    for ids, labels in _batches(examples, batch_size, random.Random(0)):
        total += sequence_loss(model(ids), labels).item()
        count += 1
    if was_training:
        model.train()
    return total / count


def train(cfg: TrainConfig) -> TrainResult:
    """Fine-tune adapters on the dataset; saves adapter + merged weights and
    the loss curve CSV. Deterministic at a fixed seed on CPU."""
    try:
        records = load_records(Path(cfg.train_path))
    except DatasetInvalid:
        raise
    examples = build_examples(records, cfg.max_seq)
    torch.manual_seed(cfg.seed)
    model = build_base(cfg.base_model, seed=cfg.seed)
    apply_lora(model, cfg.lora_rank, cfg.lora_alpha)
    trainable = [p for p in model.parameters() if p.requires_grad]
    logger.info(
        "training on %d records (%d trainable adapter params)",
        len(examples), sum(p.numel() for p in trainable),
    )
    optimizer = torch.optim.AdamW(
        trainable, lr=cfg.learning_rate, weight_decay=cfg.weight_decay
    )
    # linear warmup, then constant
    def _lr_lambda(step: int) -> float:
        if cfg.warmup_steps and step < cfg.warmup_steps:
            return (step + 1) / cfg.warmup_steps
        return 1.0

    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, _lr_lambda)

    rng = random.Random(cfg.seed)
    result = TrainResult(output_dir=Path(cfg.output_dir))
    result.initial_loss = evaluate_loss(model, examples)
    logger.info("initial loss %.4f", result.initial_loss)
    model.train()
    for epoch in range(1, cfg.epochs + 1):
        total = 0.0
        count = 0
        for ids, labels in _batches(examples, cfg.batch_size, rng):
            optimizer.zero_grad()
            loss = sequence_loss(model(ids), labels)
            loss.backward()
            optimizer.step()
            scheduler.step()
            total += loss.item()
            count += 1
        mean = total / count
        result.loss_curve.append((epoch, mean))
        logger.info("epoch %d: mean loss %.4f", epoch, mean)
    result.final_loss = evaluate_loss(model, examples)
    logger.info("final loss %.4f", result.final_loss)

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.save(adapter_state(model), out / "adapter.pt")
    save_model(merge_lora(model), out / "merged.pt")
    with (out / "loss_curve.csv").open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epoch", "mean_loss"])
        writer.writerows(result.loss_curve)
    (out / "train_config.json").write_text(
        json.dumps(
            {k: str(v) if isinstance(v, Path) else v for k, v in vars(cfg).items()},
            indent=2,
        ) + "\n",
        encoding="utf-8",
    )
    return result
