"""Bundled mock chat-completion server for offline tests and latency benchmarks.

Serves the documented wire format on 127.0.0.1 with a configurable service
time, optional injected network delay (split half on the request leg, half
on the response leg, mimicking per-packet delay added on both directions),
scriptable failures, and a concurrency gauge for parallelism assertions.
"""
from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

DEFAULT_REPLY = '{"reasoning": "probe reply", "plan": "[answer(ok)]"}'


@dataclass
class MockStats:
    total_requests: int = 0
    in_flight: int = 0
    max_in_flight: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)

    def enter(self) -> None:
        with self.lock:
            self.total_requests += 1
            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)

    def leave(self) -> None:
        with self.lock:
            self.in_flight -= 1


class MockChatServer:
    """Context-managed threaded server on an ephemeral port."""

    def __init__(
        self,
        service_time_ms: float = 50.0,
        injected_delay_ms: float = 0.0,
        reply_text: str = DEFAULT_REPLY,
        fail_first: int = 0,
        reply_fn=None,
    ):
        self.service_time_ms = service_time_ms
        self.injected_delay_ms = injected_delay_ms
        self.reply_text = reply_text
        self.reply_fn = reply_fn
        self.stats = MockStats()
        self._fail_remaining = fail_first
        self._fail_lock = threading.Lock()
        self._server: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    # handler factory bound to this instance
    def _handler(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # keep test output clean
                pass

            def do_GET(self):
                if self.path == "/stats":
                    body = json.dumps(
                        {
                            "total_requests": server.stats.total_requests,
                            "max_in_flight": server.stats.max_in_flight,
                        }
                    ).encode()
                    self.send_response(200)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(body)))
                    self.end_headers()
                    self.wfile.write(body)
                else:
                    self.send_error(404)

            def do_POST(self):
                if self.path not in ("/chat/completions", "/v1/chat/completions"):
                    self.send_error(404)
                    return
                server.stats.enter()
                try:
                    length = int(self.headers.get("Content-Length", "0"))
                    raw = self.rfile.read(length)
                    time.sleep(server.injected_delay_ms / 2000.0)
                    with server._fail_lock:
                        must_fail = server._fail_remaining > 0
                        if must_fail:
                            server._fail_remaining -= 1
                    if must_fail:
                        self.send_error(503, "scripted failure")
                        return
                    try:
                        request = json.loads(raw)
                    except json.JSONDecodeError:
                        body = json.dumps({"error": "malformed JSON body"}).encode()
                        self.send_response(400)
                        self.send_header("Content-Type", "application/json")
                        self.send_header("Content-Length", str(len(body)))
                        self.end_headers()
                        self.wfile.write(body)
                        return
                    time.sleep(server.service_time_ms / 1000.0)
                    content = (
                        server.reply_fn(request) if server.reply_fn else server.reply_text
                    )
                    body = json.dumps(
                        {
                            "id": "mock-1",
                            "object": "chat.completion",
                            "model": request.get("model", "mock"),
                            "choices": [
                                {
                                    "index": 0,
                                    "finish_reason": "stop",
                                    "message": {"role": "assistant", "content": content},
                                }
                            ],
                        }
                    ).encode()
                    time.sleep(server.injected_delay_ms / 2000.0)
                    self.send_response(200)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(body)))
                    self.end_headers()
                    self.wfile.write(body)
                finally:
                    server.stats.leave()

        return Handler

    def start(self) -> "MockChatServer":
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), self._handler())
        self._server.daemon_threads = True
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    @property
    def url(self) -> str:
        assert self._server is not None, "server not started"
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self) -> "MockChatServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
