"""Pluggable completion backends for the planner and the scenario generator.

`http` speaks the de-facto chat-completions wire shape (model/messages/
choices, see docs/wire_format.md) with exponential-backoff retries and a
bounded-parallelism semaphore. `oracle` delegates to the scripted BFS
planner. `replay` re-serves a recorded episode transcript, byte-for-byte.
`repeat` and `null` are scripted degenerate planners used by ablation and
validation experiments.

Deterministic backends report logical (zeroed) timestamps so re-runs write
byte-identical transcripts; http reports wall-clock times.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass

import httpx

from .errors import (
    BackendTimeout,
    BackendUnavailable,
    SchemaError,
    TranscriptMismatch,
)

logger = logging.getLogger(__name__)

BACKEND_KINDS = ("http", "oracle", "replay", "repeat", "null")


@dataclass
class BackendConfig:
    kind: str = "oracle"
    base_url: str = ""
    model_name: str = "planner"
    temperature: float = 0.0
    timeout: float = 30.0
    max_retries: int = 2
    parallelism: int = 4
    backoff_base: float = 1.0
    max_tokens: int = 1024
    api_key_env: str = "PLANFORGE_API_KEY"
    strict_replay: bool = True
    replay_dir: str = ""

    def __post_init__(self) -> None:
        if self.kind not in BACKEND_KINDS:
            raise SchemaError("/backend/kind", f"unknown backend kind {self.kind!r}")
        if self.parallelism < 1:
            raise SchemaError("/backend/parallelism", "must be >= 1")
        if self.timeout <= 0:
            raise SchemaError("/backend/timeout", "must be > 0")


@dataclass
class CompletionResult:
    text: str
    latency: float
    attempt_count: int
    request_timestamp: float = 0.0
    response_timestamp: float = 0.0


def validate_messages(messages: list[dict[str, str]]) -> None:
    if not messages or messages[0].get("role") != "system":
        raise SchemaError("/messages/0", "first message must be system")
    expected = "user"
    for i, msg in enumerate(messages[1:], start=1):
        role = msg.get("role")
        if role != expected:
            raise SchemaError(f"/messages/{i}", f"expected role {expected}, got {role}")
        expected = "assistant" if expected == "user" else "user"
    if not isinstance(messages[-1].get("content"), str):
        raise SchemaError(f"/messages/{len(messages) - 1}/content", "string required")


def prompt_hash(messages: list[dict[str, str]]) -> str:
    blob = json.dumps(
        [[m["role"], m["content"]] for m in messages], ensure_ascii=False
    ).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


class Client:
    """Common surface: complete(messages) plus per-episode session scoping."""

    config: BackendConfig

    def complete(self, messages: list[dict[str, str]]) -> CompletionResult:
        raise NotImplementedError

    def session(self, episode_key: str) -> "Client":
        """Backends that replay per-episode recordings override this."""
        return self

    def close(self) -> None:
        pass


class HttpClient(Client):
    def __init__(self, config: BackendConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        self._semaphore = threading.Semaphore(config.parallelism)
        self._http = httpx.Client(
            timeout=config.timeout,
            transport=transport,
        )

    def _url(self) -> str:
        base = self.config.base_url.rstrip("/")
        if base.endswith("/chat/completions"):
            return base
        return base + "/chat/completions"

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, messages: list[dict[str, str]]) -> CompletionResult:
        validate_messages(messages)
        payload = {
            "model": self.config.model_name,
            "messages": messages,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        }
        attempt = 0
        delay = self.config.backoff_base
        last_error: Exception | None = None
        while attempt <= self.config.max_retries:
            attempt += 1
            request_ts = time.time()
            start = time.perf_counter()
            try:
                with self._semaphore:
                    response = self._http.post(
                        self._url(), json=payload, headers=self._headers()
                    )
            except httpx.TimeoutException as exc:
                last_error = BackendTimeout(str(exc))
            except httpx.HTTPError as exc:
                last_error = BackendUnavailable(str(exc))
            else:
                if response.status_code >= 500:
                    last_error = BackendUnavailable(
                        f"server error {response.status_code}"
                    )
                elif response.status_code >= 400:
                    raise BackendUnavailable(
                        f"request rejected ({response.status_code}): {response.text[:200]}"
                    )
                else:
                    latency = time.perf_counter() - start
                    text = _extract_choice(response)
                    return CompletionResult(
                        text=text,
                        latency=latency,
                        attempt_count=attempt,
                        request_timestamp=request_ts,
                        response_timestamp=time.time(),
                    )
            if attempt > self.config.max_retries:
                break
            logger.debug("attempt %d failed (%s); backing off %.1fs", attempt, last_error, delay)
            time.sleep(delay)
            delay *= 2
        raise last_error if last_error is not None else BackendUnavailable("no attempts made")

    def close(self) -> None:
        self._http.close()


def _extract_choice(response: httpx.Response) -> str:
    try:
        data = response.json()
        return data["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise BackendUnavailable(f"malformed completion response: {exc}") from None


class OracleClient(Client):
    """Wraps the scripted BFS planner; see planforge.oracle."""

    def __init__(self, config: BackendConfig, planner, bound=None) -> None:
        self.config = config
        self.planner = planner
        self._bound = bound

    def session(self, episode_key: str) -> "Client":
        bound = self.planner.bind(episode_key)
        if bound is None:
            return self
        return OracleClient(self.config, self.planner, bound)

    def complete(self, messages: list[dict[str, str]]) -> CompletionResult:
        validate_messages(messages)
        text = self.planner.plan(messages, bound=self._bound)
        return CompletionResult(text=text, latency=0.0, attempt_count=1)


class ReplayClient(Client):
    """Serves recorded transcripts back, one session per episode.

    In strict mode each replayed response checks the live prompt hash against
    the recorded one, so any drift in upstream rendering fails loudly.
    """

    def __init__(self, config: BackendConfig):
        self.config = config
        self._sessions: dict[str, "_ReplaySession"] = {}

    def session(self, episode_key: str) -> "Client":
        path = os.path.join(self.config.replay_dir, episode_key + ".jsonl")
        if not os.path.exists(path):
            raise TranscriptMismatch(f"no recorded transcript for episode {episode_key!r}")
        return _ReplaySession(self.config, path)

    def complete(self, messages: list[dict[str, str]]) -> CompletionResult:
        raise TranscriptMismatch("replay backend requires an episode session")


class _ReplaySession(Client):
    def __init__(self, config: BackendConfig, path: str):
        self.config = config
        self._exchanges = _load_transcript(path)
        self._cursor = 0

    def complete(self, messages: list[dict[str, str]]) -> CompletionResult:
        validate_messages(messages)
        if self._cursor >= len(self._exchanges):
            raise TranscriptMismatch("transcript exhausted")
        request, response = self._exchanges[self._cursor]
        self._cursor += 1
        if self.config.strict_replay:
            live = prompt_hash(messages)
            recorded = request["payload"].get("prompt_sha256")
            if recorded and recorded != live:
                raise TranscriptMismatch(
                    f"prompt diverged from recording at exchange {self._cursor}"
                )
        return CompletionResult(
            text=response["payload"]["content"],
            latency=float(response["payload"].get("latency", 0.0)),
            attempt_count=int(response["payload"].get("attempt_count", 1)),
            request_timestamp=float(request.get("timestamp", 0.0)),
            response_timestamp=float(response.get("timestamp", 0.0)),
        )


def _load_transcript(path: str) -> list[tuple[dict, dict]]:
    lines = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                lines.append(json.loads(line))
    exchanges = []
    pending: dict | None = None
    for entry in lines:
        if entry.get("direction") == "request":
            pending = entry
        elif entry.get("direction") == "response" and pending is not None:
            exchanges.append((pending, entry))
            pending = None
    return exchanges


class RepeatClient(Client):
    """Degenerate planner that re-issues the same feasible action forever."""

    def __init__(self, config: BackendConfig, dialect: str = "spine"):
        self.config = config
        self.dialect = dialect

    def complete(self, messages: list[dict[str, str]]) -> CompletionResult:
        validate_messages(messages)
        if self.dialect == "spine":
            first_obs = next(m["content"] for m in messages if m["role"] == "user")
            robot = json.loads(first_obs)["robot_location"]
            text = json.dumps(
                {"reasoning": "mapping again", "plan": f"[map_region({robot})]"}
            )
        elif self.dialect == "saycan":
            first_obs = next(m["content"] for m in messages if m["role"] == "user")
            listed = first_obs.split("[", 1)[1].rstrip("]").split(", ")
            text = f"robot.pick_and_place({listed[0]}, {listed[-1]})"
        else:
            first_obs = next(m["content"] for m in messages if m["role"] == "user")
            target = first_obs.split(":", 1)[1].split(",")[0].strip()
            text = f"Navigation {target}, Navigation {target}"
        return CompletionResult(text=text, latency=0.0, attempt_count=1)


class NullClient(Client):
    """Planner that terminates immediately without doing anything."""

    def __init__(self, config: BackendConfig, dialect: str = "spine"):
        self.config = config
        self.dialect = dialect

    def complete(self, messages: list[dict[str, str]]) -> CompletionResult:
        validate_messages(messages)
        if self.dialect == "spine":
            text = json.dumps({"plan": "[answer(Nothing to report.)]"})
        elif self.dialect == "saycan":
            text = "done()"
        else:
            first_obs = next(m["content"] for m in messages if m["role"] == "user")
            target = first_obs.split(":", 1)[1].split(",")[0].strip()
            text = f"Navigation {target}"
        return CompletionResult(text=text, latency=0.0, attempt_count=1)


def make_client(
    config: BackendConfig,
    dialect: str = "spine",
    oracle_planner=None,
    transport: httpx.BaseTransport | None = None,
) -> Client:
    if config.kind == "http":
        return HttpClient(config, transport=transport)
    if config.kind == "oracle":
        if oracle_planner is None:
            raise SchemaError("/backend/kind", "oracle backend needs a goal registry")
        return OracleClient(config, oracle_planner)
    if config.kind == "replay":
        return ReplayClient(config)
    if config.kind == "repeat":
        return RepeatClient(config, dialect)
    return NullClient(config, dialect)


def complete(config: BackendConfig, messages: list[dict[str, str]], **kwargs) -> CompletionResult:
    """One-shot convenience wrapper over a throwaway client."""
    client = make_client(config, **kwargs)
    try:
        return client.complete(messages)
    finally:
        client.close()
