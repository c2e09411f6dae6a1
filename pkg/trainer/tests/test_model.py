"""Model mechanics: adapters, merging, KV-cached decoding."""
from __future__ import annotations

import torch

from planforge_trainer.model import (
    LoRALinear,
    apply_lora,
    adapter_state,
    build_base,
    load_model,
    merge_lora,
    save_model,
)


def _nudge_adapters(model):
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, LoRALinear):
                module.lora_b.normal_(std=0.05)


class TestLora:
    def test_wrapping_freezes_base(self):
        model = build_base("tiny-64x2", seed=0)
        wrapped = apply_lora(model, rank=8, alpha=16)
        assert wrapped
        for name, param in model.named_parameters():
            assert param.requires_grad == (".lora_" in name)

    def test_zero_b_means_identity_function(self):
        torch.manual_seed(1)
        ids = torch.randint(0, 260, (2, 40))
        base = build_base("tiny-64x2", seed=3)
        reference = base(ids).detach().clone()
        apply_lora(base, rank=8, alpha=16)
        assert torch.allclose(base(ids), reference, atol=1e-5)

    def test_merge_matches_adapted_forward(self):
        torch.manual_seed(2)
        model = build_base("tiny-64x2", seed=5)
        apply_lora(model, rank=8, alpha=16)
        _nudge_adapters(model)
        ids = torch.randint(0, 260, (2, 33))
        merged = merge_lora(model)
        assert not any(isinstance(m, LoRALinear) for m in merged.modules())
        assert torch.allclose(merged(ids), model(ids), atol=1e-4)

    def test_adapter_state_contains_only_lora(self):
        model = build_base("tiny-64x2", seed=5)
        apply_lora(model, rank=4, alpha=16)
        state = adapter_state(model)
        assert state
        assert all(".lora_" in k for k in state)


class TestPersistence:
    def test_save_load_round_trip(self, tmp_path):
        model = build_base("tiny-64x2", seed=7)
        save_model(model, tmp_path / "m.pt")
        loaded = load_model(tmp_path / "m.pt")
        ids = torch.randint(0, 260, (1, 17))
        assert torch.allclose(loaded(ids), model(ids))

    def test_seeded_build_is_deterministic(self):
        a = build_base("tiny-64x2", seed=11)
        b = build_base("tiny-64x2", seed=11)
        for (ka, va), (kb, vb) in zip(a.state_dict().items(), b.state_dict().items()):
            assert ka == kb
            assert torch.equal(va, vb)


class TestKVCache:
    def test_incremental_matches_full_forward(self):
        torch.manual_seed(3)
        model = build_base("tiny-64x2", seed=13)
        model.eval()
        ids = torch.randint(0, 260, (1, 25))
        with torch.no_grad():
            full = model(ids)
            logits, past = model(ids[:, :10], return_past=True)
            outputs = [logits]
            for t in range(10, 25):
                logits, past = model(ids[:, t : t + 1], past=past, return_past=True)
                outputs.append(logits)
        stitched = torch.cat(outputs, dim=1)
        assert torch.allclose(stitched, full, atol=1e-4)
