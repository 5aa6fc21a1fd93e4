import hashlib
import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from esp.errors import LlmTimeout, ProtocolError, ScriptMiss, Unavailable
from esp.llm import (
    ChatMessage,
    LlmProfile,
    MockBackend,
    TokenBucket,
    complete,
    fingerprint,
    mock_script,
    system,
    user,
)


def test_fingerprint_is_sha256_of_role_lines():
    msgs = [system("be terse"), user("plan req A")]
    expected = hashlib.sha256("system:be terse\nuser:plan req A".encode("utf-8")).hexdigest()
    assert fingerprint(msgs) == expected


def test_scripted_lookup():
    msgs = [user("plan req A")]
    llm = mock_script({fingerprint(msgs): '{"subtasks": []}'})
    assert complete(llm, msgs) == '{"subtasks": []}'


def test_miss_echo_and_error():
    assert complete(mock_script({}, on_miss="echo"), [system("s"), user("hello")]) == "hello"
    with pytest.raises(ScriptMiss):
        complete(mock_script({}, on_miss="error"), [user("hello")])


def test_empty_messages_rejected():
    with pytest.raises(ValueError):
        complete(mock_script({}, on_miss="echo"), [])


def test_empty_user_content_rejected():
    with pytest.raises(ValueError):
        ChatMessage("user", "")
    ChatMessage("assistant", "")


def test_transient_failures_then_success():
    msgs = [user("x")]
    llm = mock_script({fingerprint(msgs): "ok"}, failures=2)
    llm = LlmProfile(name="m", retries=3, backoff_ms=1, backend=llm.backend)
    assert complete(llm, msgs) == "ok"
    assert len(llm.backend.calls) == 3


def test_retry_budget_exhausted():
    backend = MockBackend(script={}, on_miss="echo", failures=5)
    llm = LlmProfile(name="m", retries=2, backoff_ms=1, backend=backend)
    with pytest.raises(Unavailable):
        complete(llm, [user("x")])
    assert len(backend.calls) == 3


def test_rules_match_last_user_message(tmp_path):
    p = tmp_path / "script.json"
    msgs = [user("exact")]
    p.write_text(json.dumps({
        "on_miss": "error",
        "entries": {fingerprint(msgs): "by fingerprint"},
        "rules": [{"contains": "needle", "reply": "by rule"}],
    }))
    backend = MockBackend.from_file(str(p))
    llm = LlmProfile(name="m", backend=backend)
    assert complete(llm, msgs) == "by fingerprint"
    assert complete(llm, [user("hay needle hay")]) == "by rule"
    with pytest.raises(ScriptMiss):
        complete(llm, [user("nothing")])


def test_bare_mapping_script_file(tmp_path):
    p = tmp_path / "script.json"
    msgs = [user("q")]
    p.write_text(json.dumps({fingerprint(msgs): "a"}))
    assert complete(LlmProfile(name="m", backend=MockBackend.from_file(str(p))), msgs) == "a"


def test_token_bucket_rate():
    bucket = TokenBucket(rate=50, capacity=1)
    t0 = time.monotonic()
    for _ in range(6):
        bucket.acquire()
    # first token is free, five more at 50/s need ~0.1 s
    assert time.monotonic() - t0 >= 0.09


class _ChatServer:
    """Tiny OpenAI-style endpoint with a queue of canned (status, body, delay) replies."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.bodies = []
        outer = self

        class H(BaseHTTPRequestHandler):
            def log_message(self, *a):
                pass

            def do_POST(self):
                n = int(self.headers["Content-Length"])
                outer.bodies.append((json.loads(self.rfile.read(n)), self.headers.get("Authorization")))
                status, body, delay = outer.replies.pop(0) if outer.replies else (200, "{}", 0)
                time.sleep(delay)
                data = body.encode()
                self.send_response(status)
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                try:
                    self.wfile.write(data)
                except OSError:
                    pass

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), H)
        self.httpd.daemon_threads = True
        threading.Thread(target=self.httpd.serve_forever, daemon=True).start()
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}/v1/chat/completions"

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


def _ok(text):
    return 200, json.dumps({"choices": [{"message": {"role": "assistant", "content": text}}]}), 0


@pytest.fixture
def chat_server():
    servers = []

    def make(replies):
        s = _ChatServer(replies)
        servers.append(s)
        return s

    yield make
    for s in servers:
        s.close()


def test_http_wire_format_and_auth(chat_server, monkeypatch):
    srv = chat_server([_ok("hi")])
    monkeypatch.setenv("TEST_KEY", "sekrit")
    prof = LlmProfile(name="gpt-x", endpoint=srv.url, max_tokens=77, api_key_env="TEST_KEY")
    assert complete(prof, [system("s"), user("u")]) == "hi"
    body, auth = srv.bodies[0]
    assert body == {
        "model": "gpt-x",
        "messages": [{"role": "system", "content": "s"}, {"role": "user", "content": "u"}],
        "temperature": 0.0,
        "max_tokens": 77,
    }
    assert auth == "Bearer sekrit"


def test_http_retries_5xx_not_4xx(chat_server):
    srv = chat_server([(503, "busy", 0), (500, "oops", 0), _ok("done")])
    prof = LlmProfile(name="m", endpoint=srv.url, retries=3, backoff_ms=1)
    assert complete(prof, [user("u")]) == "done"
    assert len(srv.bodies) == 3

    srv = chat_server([(400, "bad request", 0), _ok("never")])
    with pytest.raises(Unavailable):
        complete(LlmProfile(name="m", endpoint=srv.url, retries=3, backoff_ms=1), [user("u")])
    assert len(srv.bodies) == 1


def test_http_malformed_payload(chat_server):
    srv = chat_server([(200, '{"nope": 1}', 0)])
    with pytest.raises(ProtocolError):
        complete(LlmProfile(name="m", endpoint=srv.url), [user("u")])


def test_http_timeout_bounded(chat_server):
    srv = chat_server([(200, "{}", 1.0)])
    prof = LlmProfile(name="m", endpoint=srv.url, timeout_ms=100, retries=3, backoff_ms=1)
    t0 = time.monotonic()
    with pytest.raises(LlmTimeout):
        complete(prof, [user("u")])
    assert time.monotonic() - t0 < 0.8


def test_http_unreachable():
    prof = LlmProfile(name="m", endpoint="http://127.0.0.1:9/none", retries=1, backoff_ms=1, timeout_ms=500)
    with pytest.raises(Unavailable):
        complete(prof, [user("u")])


def test_mock_is_deterministic():
    msgs = [user("same")]
    a = complete(mock_script({}, on_miss="echo"), msgs)
    b = complete(mock_script({}, on_miss="echo"), msgs)
    assert a == b == "same"
