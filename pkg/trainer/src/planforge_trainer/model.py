"""A small causal transformer and the low-rank adapter machinery.

The base model is deliberately tiny (CPU-trainable in seconds); adapters add
a trainable low-rank update B @ A scaled by alpha/rank to the frozen
attention and MLP projections. Merging folds the update into the base
weights for zero-overhead serving.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
from torch import nn

from .tokenizer import VOCAB_SIZE

LORA_TARGETS = ("q_proj", "k_proj", "v_proj", "o_proj", "up_proj", "down_proj")


@dataclass
class ModelSpec:
    vocab_size: int = VOCAB_SIZE
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    max_seq: int = 4096

    @staticmethod
    def parse(name: str) -> "ModelSpec":
        """'tiny-64x2' -> d_model 64, 2 layers; anything else is a checkpoint dir."""
        if name.startswith("tiny-"):
            dims, _, layers = name.removeprefix("tiny-").partition("x")
            d_model = int(dims)
            return ModelSpec(d_model=d_model, n_layers=int(layers or 2), d_ff=4 * d_model)
        raise ValueError(f"not a builtin model spec: {name!r}")


KVCache = list[tuple[torch.Tensor, torch.Tensor]]


class Attention(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.n_heads = spec.n_heads
        self.head_dim = spec.d_model // spec.n_heads
        self.q_proj = nn.Linear(spec.d_model, spec.d_model, bias=False)
        self.k_proj = nn.Linear(spec.d_model, spec.d_model, bias=False)
        self.v_proj = nn.Linear(spec.d_model, spec.d_model, bias=False)
        self.o_proj = nn.Linear(spec.d_model, spec.d_model, bias=False)

    def forward(
        self, x: torch.Tensor, past: tuple | None = None
    ) -> tuple[torch.Tensor, tuple]:
        b, t, d = x.shape
        shape = (b, t, self.n_heads, self.head_dim)
        q = self.q_proj(x).view(shape).transpose(1, 2)
        k = self.k_proj(x).view(shape).transpose(1, 2)
        v = self.v_proj(x).view(shape).transpose(1, 2)
        if past is not None:
            k = torch.cat([past[0], k], dim=2)
            v = torch.cat([past[1], v], dim=2)
        # with a cache, single-step queries attend the whole prefix unmasked
        out = nn.functional.scaled_dot_product_attention(
            q, k, v, is_causal=(past is None and t > 1)
        )
        return self.o_proj(out.transpose(1, 2).reshape(b, t, d)), (k, v)


class Block(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.ln1 = nn.LayerNorm(spec.d_model)
        self.attn = Attention(spec)
        self.ln2 = nn.LayerNorm(spec.d_model)
        self.up_proj = nn.Linear(spec.d_model, spec.d_ff, bias=False)
        self.down_proj = nn.Linear(spec.d_ff, spec.d_model, bias=False)

    def forward(
        self, x: torch.Tensor, past: tuple | None = None
    ) -> tuple[torch.Tensor, tuple]:
        attended, cache = self.attn(self.ln1(x), past)
        x = x + attended
        x = x + self.down_proj(nn.functional.gelu(self.up_proj(self.ln2(x))))
        return x, cache


class TinyCausalLM(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        self.embed = nn.Embedding(spec.vocab_size, spec.d_model)
        self.pos = nn.Embedding(spec.max_seq, spec.d_model)
        self.blocks = nn.ModuleList(Block(spec) for _ in range(spec.n_layers))
        self.ln_f = nn.LayerNorm(spec.d_model)
        self.lm_head = nn.Linear(spec.d_model, spec.vocab_size, bias=False)

    def forward(
        self,
        ids: torch.Tensor,
        past: KVCache | None = None,
        return_past: bool = False,
    ):
        t = ids.shape[1]
        offset = past[0][0].shape[2] if past else 0
        if offset + t > self.spec.max_seq:
            raise ValueError(
                f"sequence length {offset + t} exceeds max_seq {self.spec.max_seq}"
            )
        positions = torch.arange(offset, offset + t, device=ids.device)
        x = self.embed(ids) + self.pos(positions)
        new_past: KVCache = []
        for i, block in enumerate(self.blocks):
            x, cache = block(x, past[i] if past else None)
            new_past.append(cache)
        logits = self.lm_head(self.ln_f(x))
        if return_past:
            return logits, new_past
        return logits


class LoRALinear(nn.Module):
    """Frozen base linear plus trainable low-rank residual.

    Rank-stabilized scaling (alpha / sqrt(rank)) and unit-gaussian A init:
    at the small ranks and model widths used here, the classic alpha/rank
    convention starves the update path of gradient signal and adapters barely
    move at SFT learning rates. B starts at zero, so the model's initial
    function is exactly the frozen base either way.
    """

    def __init__(self, base: nn.Linear, rank: int, alpha: float):
        super().__init__()
        self.base = base
        self.rank = rank
        self.alpha = alpha
        self.scaling = alpha / math.sqrt(rank)
        self.lora_a = nn.Parameter(torch.empty(rank, base.in_features))
        self.lora_b = nn.Parameter(torch.zeros(base.out_features, rank))
        nn.init.normal_(self.lora_a, std=1.0)
        base.weight.requires_grad_(False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + self.scaling * nn.functional.linear(
            nn.functional.linear(x, self.lora_a), self.lora_b
        )

    def merged_weight(self) -> torch.Tensor:
        return self.base.weight + self.scaling * (self.lora_b @ self.lora_a)


def apply_lora(model: TinyCausalLM, rank: int, alpha: float) -> list[str]:
    """Wrap the attention and MLP projections in-place; returns wrapped names."""
    for param in model.parameters():
        param.requires_grad_(False)
    wrapped = []
    for module in list(model.modules()):
        for name, child in list(module.named_children()):
            if name in LORA_TARGETS and isinstance(child, nn.Linear):
                setattr(module, name, LoRALinear(child, rank, alpha))
                wrapped.append(name)
    return wrapped


def merge_lora(model: TinyCausalLM) -> TinyCausalLM:
    """Fold adapters into a plain copy of the model (no LoRA modules left)."""
    state: dict[str, torch.Tensor] = {}
    for key, value in model.state_dict().items():
        if ".lora_" in key:
            continue
        if key.endswith(".base.weight"):
            continue
        state[key] = value
    for name, module in model.named_modules():
        if isinstance(module, LoRALinear):
            state[f"{name}.weight"] = module.merged_weight().detach()
    merged = TinyCausalLM(model.spec)
    merged.load_state_dict(state)
    return merged


def adapter_state(model: TinyCausalLM) -> dict[str, torch.Tensor]:
    return {k: v for k, v in model.state_dict().items() if ".lora_" in k}


def save_model(model: TinyCausalLM, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"spec": asdict(model.spec), "state": model.state_dict()}, path)


def load_model(path: Path) -> TinyCausalLM:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    model = TinyCausalLM(ModelSpec(**payload["spec"]))
    model.load_state_dict(payload["state"])
    return model


def build_base(name_or_path: str, seed: int = 0) -> TinyCausalLM:
    """A builtin random-initialized spec ('tiny-64x2') or a saved checkpoint."""
    path = Path(name_or_path)
    if path.exists():
        return load_model(path)
    torch.manual_seed(seed)
    return TinyCausalLM(ModelSpec.parse(name_or_path))


def save_spec(spec: ModelSpec, path: Path) -> None:
    path.write_text(json.dumps(asdict(spec), indent=2) + "\n", encoding="utf-8")
