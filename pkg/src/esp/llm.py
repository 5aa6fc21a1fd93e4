"""Chat-completion gateway.

Every LLM-dependent step talks to :func:`complete`. A profile carries the
backend: either the OpenAI-style HTTP client or a scripted mock, so the
whole pipeline runs offline and byte-deterministically under tests.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import requests

from .errors import LlmTimeout, ProtocolError, ScriptMiss, Unavailable

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.role in ("system", "user") and not self.content:
            raise ValueError(f"{self.role} message content must be nonempty")


def system(text: str) -> ChatMessage:
    return ChatMessage("system", text)


def user(text: str) -> ChatMessage:
    return ChatMessage("user", text)


def assistant(text: str) -> ChatMessage:
    return ChatMessage("assistant", text)


def fingerprint(messages: Sequence[ChatMessage]) -> str:
    """SHA-256 over the UTF-8 bytes of ``role:content`` lines joined by newlines."""
    blob = "\n".join(f"{m.role}:{m.content}" for m in messages)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class TransientError(Exception):
    """Raised by backends for failures worth retrying (connection drops, 429, 5xx)."""


class Backend(Protocol):
    def chat(self, profile: LlmProfile, messages: Sequence[ChatMessage]) -> str: ...


class TokenBucket:
    def __init__(self, rate: float, capacity: float | None = None):
        self.rate = rate
        self.capacity = capacity if capacity is not None else max(1.0, rate)
        self._tokens = self.capacity
        self._stamp = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self.capacity, self._tokens + (now - self._stamp) * self.rate)
                self._stamp = now
                if self._tokens >= 1:
                    self._tokens -= 1
                    return
                wait = (1 - self._tokens) / self.rate
            time.sleep(wait)


@dataclass(frozen=True)
class LlmProfile:
    name: str
    endpoint: str = ""
    temperature: float = 0.0
    max_tokens: int = 1024
    timeout_ms: int = 60_000
    retries: int = 3
    backoff_ms: int = 500
    backoff_max_ms: int = 8_000
    rate_limit: float | None = None
    api_key_env: str | None = None
    backend: Backend | None = field(default=None, compare=False, repr=False)
    bucket: TokenBucket | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0 or self.timeout_ms <= 0:
            raise ValueError("max_tokens and timeout_ms must be positive")
        if self.rate_limit and self.bucket is None:
            object.__setattr__(self, "bucket", TokenBucket(self.rate_limit))


class HttpChatBackend:
    """OpenAI-style ``POST {model, messages, temperature, max_tokens}``."""

    def __init__(self, session: requests.Session | None = None):
        self.session = session or requests.Session()

    def chat(self, profile: LlmProfile, messages: Sequence[ChatMessage]) -> str:
        headers = {"Content-Type": "application/json"}
        if profile.api_key_env and os.environ.get(profile.api_key_env):
            headers["Authorization"] = f"Bearer {os.environ[profile.api_key_env]}"
        body = {
            "model": profile.name,
            "messages": [{"role": m.role, "content": m.content} for m in messages],
            "temperature": profile.temperature,
            "max_tokens": profile.max_tokens,
        }
        try:
            resp = self.session.post(
                profile.endpoint, json=body, headers=headers, timeout=profile.timeout_ms / 1000
            )
        except requests.Timeout as exc:
            raise LlmTimeout(f"{profile.name}: no reply within {profile.timeout_ms} ms") from exc
        except requests.ConnectionError as exc:
            raise TransientError(str(exc)) from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise Unavailable(f"{profile.name}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"{profile.name}: unexpected payload {resp.text[:200]!r}") from exc


_default_http = HttpChatBackend()


@dataclass
class MockBackend:
    """Scripted lookup table keyed by message fingerprint.

    ``rules`` are (substring, reply) pairs tried in order against the last
    user message when the fingerprint misses; they keep fixtures readable
    when prompts are long. ``failures`` injects that many transient errors
    before any reply is served.
    """

    script: dict[str, str] = field(default_factory=dict)
    on_miss: str = "error"
    rules: list[tuple[str, str]] = field(default_factory=list)
    responder: Callable[[Sequence[ChatMessage]], str] | None = None
    failures: int = 0
    calls: list[str] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        if self.on_miss not in ("error", "echo"):
            raise ValueError("on_miss must be 'error' or 'echo'")

    def chat(self, profile: LlmProfile, messages: Sequence[ChatMessage]) -> str:
        fp = fingerprint(messages)
        with self._lock:
            self.calls.append(fp)
            if self.failures > 0:
                self.failures -= 1
                raise TransientError("injected transient failure")
        if fp in self.script:
            return self.script[fp]
        last_user = next((m.content for m in reversed(messages) if m.role == "user"), "")
        for needle, reply in self.rules:
            if needle in last_user:
                return reply
        if self.responder is not None:
            return self.responder(messages)
        if self.on_miss == "echo":
            return last_user
        raise ScriptMiss(f"no scripted reply for fingerprint {fp[:12]}")

    @classmethod
    def from_file(cls, path: str) -> MockBackend:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        if "entries" not in doc and "rules" not in doc:
            # bare mapping fingerprint -> reply
            return cls(script=dict(doc))
        return cls(
            script=dict(doc.get("entries", {})),
            on_miss=doc.get("on_miss", "error"),
            rules=[(r["contains"], r["reply"]) for r in doc.get("rules", [])],
        )


class Unreachable:
    """Backend that always fails; stands in for a gateway outage."""

    def chat(self, profile, messages):
        raise Unavailable(f"{profile.name}: gateway unreachable")


def mock_script(
    entries: dict[str, str] | None = None,
    on_miss: str = "error",
    *,
    name: str = "mock",
    **kwargs,
) -> LlmProfile:
    backend = MockBackend(script=dict(entries or {}), on_miss=on_miss, **kwargs)
    return LlmProfile(name=name, endpoint="mock://" + name, retries=3, backoff_ms=1, backend=backend)


def complete(profile: LlmProfile, messages: Sequence[ChatMessage]) -> str:
    if not messages:
        raise ValueError("messages must be nonempty")
    backend = profile.backend or _default_http
    delay = profile.backoff_ms / 1000
    attempt = 0
    while True:
        attempt += 1
        if profile.bucket is not None:
            profile.bucket.acquire()
        try:
            return backend.chat(profile, messages)
        except TransientError as exc:
            if attempt > profile.retries:
                raise Unavailable(f"{profile.name}: giving up after {attempt} attempts: {exc}") from exc
            log.warning("%s: transient failure (%s), retry %d in %.3fs", profile.name, exc, attempt, delay)
            time.sleep(delay)
            delay = min(delay * 2, profile.backoff_max_ms / 1000)
