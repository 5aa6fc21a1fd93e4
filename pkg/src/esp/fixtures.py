"""Scriptable stand-ins for hub-hosted models and the hub listing API.

:class:`FixtureModels` holds per-model behaviour (output, latency, failure)
and bookkeeping (call log, in-flight high-water mark). It is served either
over HTTP by :class:`FixtureModelServer`, which speaks the real invocation
wire contract, or in-process through :class:`InProcessModelClient`.
"""

from __future__ import annotations

import hashlib
import json
import random
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any
from urllib.parse import parse_qs, urlparse

from .executor import ModelFailure, ModelTimeout


@dataclass
class ModelBehavior:
    output: Any = None
    delay_ms: float | tuple[float, float] = 0.0
    fail_status: int | None = None

    @classmethod
    def from_dict(cls, d: dict) -> ModelBehavior:
        delay = d.get("delay_ms", 0.0)
        if isinstance(delay, list):
            delay = (float(delay[0]), float(delay[1]))
        return cls(d.get("output"), delay, d.get("fail_status"))


@dataclass
class CallRecord:
    model_id: str
    body: dict
    started: float
    finished: float = 0.0


@dataclass
class FixtureModels:
    behaviors: dict[str, ModelBehavior] = field(default_factory=dict)
    default: ModelBehavior | None = None
    seed: int = 0
    calls: list[CallRecord] = field(default_factory=list)
    in_flight: int = 0
    max_in_flight: int = 0

    def __post_init__(self):
        self._lock = threading.Lock()
        self._rng = random.Random(self.seed)

    @classmethod
    def from_file(cls, path: str, seed: int = 0) -> FixtureModels:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        default = ModelBehavior.from_dict(doc["default"]) if "default" in doc else None
        return cls({k: ModelBehavior.from_dict(v) for k, v in doc.get("models", {}).items()}, default, seed)

    def behavior(self, model_id: str) -> ModelBehavior:
        b = self.behaviors.get(model_id, self.default)
        if b is None:
            raise KeyError(model_id)
        return b

    def _delay(self, b: ModelBehavior) -> float:
        if isinstance(b.delay_ms, tuple):
            with self._lock:
                return self._rng.uniform(*b.delay_ms)
        return float(b.delay_ms)

    def enter(self, model_id: str, body: dict) -> CallRecord:
        rec = CallRecord(model_id, body, time.monotonic())
        with self._lock:
            self.calls.append(rec)
            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)
        return rec

    def leave(self, rec: CallRecord) -> None:
        with self._lock:
            self.in_flight -= 1
            rec.finished = time.monotonic()

    def reply(self, model_id: str, body: dict) -> tuple[int, Any, float]:
        """(http status, output payload, delay in ms) for one invocation."""
        b = self.behavior(model_id)
        if b.output is None:
            digest = hashlib.sha1(json.dumps(body.get("args", {}), sort_keys=True).encode()).hexdigest()[:8]
            output: Any = f"{model_id} output for {digest}"
        else:
            output = b.output
        return (b.fail_status or 200), output, self._delay(b)


class InProcessModelClient:
    """Model client that consults a :class:`FixtureModels` directly, no sockets."""

    def __init__(self, fixtures: FixtureModels):
        self.fixtures = fixtures

    def invoke(self, model, task_type: str, args: dict, timeout_s: float):
        body = {"task_type": task_type, "args": args}
        rec = self.fixtures.enter(model.model_id, body)
        try:
            status, output, delay_ms = self.fixtures.reply(model.model_id, body)
            if delay_ms / 1000 > timeout_s:
                time.sleep(timeout_s)
                raise ModelTimeout(f"{model.model_id}: no reply within {timeout_s:.3f}s")
            time.sleep(delay_ms / 1000)
            if status != 200:
                raise ModelFailure(f"{model.model_id}: HTTP {status}")
            return output
        finally:
            self.fixtures.leave(rec)


class _Handler(BaseHTTPRequestHandler):
    server: _Server

    def log_message(self, *args):
        pass

    def _send(self, status: int, payload: Any):
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        try:
            self.wfile.write(data)
        except (BrokenPipeError, ConnectionResetError):
            pass

    def do_POST(self):
        path = urlparse(self.path).path
        length = int(self.headers.get("Content-Length") or 0)
        try:
            body = json.loads(self.rfile.read(length) or b"{}")
        except ValueError:
            return self._send(400, {"error": "bad json"})
        if not path.startswith("/models/"):
            return self._send(404, {"error": "not found"})
        model_id = path[len("/models/"):]
        fx = self.server.fixtures
        try:
            fx.behavior(model_id)
        except KeyError:
            return self._send(404, {"error": f"unknown model {model_id}"})
        rec = fx.enter(model_id, body)
        try:
            status, output, delay_ms = fx.reply(model_id, body)
            time.sleep(delay_ms / 1000)
        finally:
            fx.leave(rec)
        if status != 200:
            return self._send(status, {"error": "injected failure"})
        self._send(200, {"output": output})

    def do_GET(self):
        url = urlparse(self.path)
        if url.path != "/api/models" or self.server.hub is None:
            return self._send(404, {"error": "not found"})
        q = parse_qs(url.query)
        tag = q.get("pipeline_tag", [""])[0]
        sort = q.get("sort", ["downloads"])[0]
        limit = int(q.get("limit", ["10"])[0])
        self.server.hub_calls += 1
        self._send(200, self.server.hub.listing(tag, sort, limit))


@dataclass
class FixtureHub:
    """Hub listing data: rows of {id, pipeline_tag, likes, downloads, description, trending}.

    ``trending`` is a score; higher trends first.
    """

    rows: list[dict]

    def listing(self, tag: str, sort: str, limit: int) -> list[dict]:
        rows = [r for r in self.rows if r.get("pipeline_tag") == tag]
        key = {"downloads": "downloads", "likes": "likes", "trending": "trending"}.get(sort, "downloads")
        rows = sorted(rows, key=lambda r: (-r.get(key, 0), r["id"]))
        return [{k: v for k, v in r.items() if k != "trending"} for r in rows[:limit]]


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    request_queue_size = 128
    allow_reuse_address = True

    def __init__(self, addr, fixtures: FixtureModels, hub: FixtureHub | None):
        super().__init__(addr, _Handler)
        self.fixtures = fixtures
        self.hub = hub
        self.hub_calls = 0


class FixtureModelServer:
    """Threaded HTTP fixture; use as a context manager.

    >>> with FixtureModelServer(FixtureModels(default=ModelBehavior())) as srv:
    ...     srv.endpoint("m1")  # doctest: +ELLIPSIS
    'http://127.0.0.1:.../models/m1'
    """

    def __init__(self, fixtures: FixtureModels | None = None, hub: FixtureHub | None = None,
                 host: str = "127.0.0.1", port: int = 0):
        self.fixtures = fixtures or FixtureModels(default=ModelBehavior())
        self._server = _Server((host, port), self.fixtures, hub)
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    @property
    def hub_calls(self) -> int:
        return self._server.hub_calls

    def endpoint(self, model_id: str) -> str:
        return f"{self.url}/models/{model_id}"

    def start(self) -> FixtureModelServer:
        self._thread = threading.Thread(target=self._server.serve_forever, args=(0.02,), daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
