"""Serve a tuned model behind the chat-completion wire format.

Drop-in target: the data pipeline's `http` planner backend can point at this
endpoint unchanged. Accepts POSTs on /chat/completions and
/v1/chat/completions; malformed JSON gets a 400 with an error body.
Generation is KV-cached and runs in a bounded worker pool.
"""
from __future__ import annotations

import json
import logging
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import torch
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .model import TinyCausalLM, load_model
from .tokenizer import BYTE_VOCAB, END, decode, encode_conversation

logger = logging.getLogger(__name__)

DEFAULT_MAX_TOKENS = 128


@torch.no_grad()
def generate(
    model: TinyCausalLM,
    messages: list[dict],
    max_new_tokens: int = DEFAULT_MAX_TOKENS,
    temperature: float = 0.0,
    seed: int | None = None,
) -> str:
    """Greedy (or temperature-sampled) byte generation until <end>."""
    system = ""
    turns = []
    for msg in messages:
        if msg["role"] == "system":
            system = msg["content"]
        else:
            turns.append({"role": msg["role"], "content": msg["content"], "loss": False})
    ids, _ = encode_conversation(system, turns, add_generation_prompt=True)
    budget = model.spec.max_seq - max_new_tokens - 1
    if len(ids) > budget:
        # keep the system block and the most recent context
        try:
            sys_end = ids.index(END) + 1
        except ValueError:
            sys_end = 0
        tail = budget - sys_end
        ids = ids[:sys_end] + ids[-tail:] if tail > 0 else ids[-budget:]
    rng = torch.Generator().manual_seed(seed) if seed is not None else None

    prompt = torch.tensor([ids], dtype=torch.long)
    logits, past = model(prompt, return_past=True)
    out: list[int] = []
    next_logits = logits[0, -1]
    for _ in range(max_new_tokens):
        if temperature and temperature > 0:
            probs = torch.softmax(next_logits / temperature, dim=-1)
            next_id = int(torch.multinomial(probs, 1, generator=rng).item())
        else:
            next_id = int(next_logits.argmax().item())
        if next_id >= BYTE_VOCAB:  # <end> or a stray role marker: stop
            break
        out.append(next_id)
        step = torch.tensor([[next_id]], dtype=torch.long)
        logits, past = model(step, past=past, return_past=True)
        next_logits = logits[0, -1]
    return decode(out)


def create_app(
    artifacts_dir: Path,
    max_concurrent: int = 4,
    max_tokens_cap: int = 256,
) -> FastAPI:
    artifacts_dir = Path(artifacts_dir)
    model_path = artifacts_dir / "merged.pt"
    if not model_path.exists():
        raise FileNotFoundError(f"no merged model at {model_path}")
    model = load_model(model_path)
    model.eval()
    pool = ThreadPoolExecutor(max_workers=max_concurrent)
    lock = threading.Lock()  # tiny model: serialize forward passes, queue in pool

    app = FastAPI(title="planforge-trainer serving")

    def _complete(payload: dict) -> dict:
        messages = payload.get("messages")
        if not isinstance(messages, list) or not messages:
            raise ValueError("'messages' must be a non-empty list")
        for msg in messages:
            if not isinstance(msg, dict) or "role" not in msg or "content" not in msg:
                raise ValueError("each message needs 'role' and 'content'")
        max_new = min(int(payload.get("max_tokens", DEFAULT_MAX_TOKENS)), max_tokens_cap)
        temperature = float(payload.get("temperature", 0.0))
        start = time.perf_counter()
        with lock:
            text = generate(model, messages, max_new, temperature)
        logger.debug("generated %d chars in %.2fs", len(text), time.perf_counter() - start)
        return {
            "id": f"cmpl-{uuid.uuid4().hex[:12]}",
            "object": "chat.completion",
            "model": payload.get("model", "planforge-tuned"),
            "choices": [
                {
                    "index": 0,
                    "finish_reason": "stop",
                    "message": {"role": "assistant", "content": text},
                }
            ],
        }

    async def chat(request: Request):
        raw = await request.body()
        try:
            payload = json.loads(raw)
            if not isinstance(payload, dict):
                raise ValueError("request body must be a JSON object")
        except (json.JSONDecodeError, ValueError) as exc:
            return JSONResponse({"error": f"malformed request: {exc}"}, status_code=400)
        import asyncio

        loop = asyncio.get_running_loop()
        try:
            body = await loop.run_in_executor(pool, _complete, payload)
        except ValueError as exc:
            return JSONResponse({"error": str(exc)}, status_code=400)
        return JSONResponse(body)

    app.post("/chat/completions")(chat)
    app.post("/v1/chat/completions")(chat)

    @app.get("/health")
    def health():
        return {"status": "ok", "model": str(model_path)}

    return app


def serve_adapter(artifacts_dir: Path, port: int, host: str = "127.0.0.1") -> None:
    """Blocking uvicorn server over the artifacts directory."""
    import uvicorn

    app = create_app(artifacts_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
