import json

import pytest
from hypothesis import given, settings

from esp.core import UserRequest, validate_plan
from esp.errors import EmptyPlan, NoJsonFound, ParseFailure, SchemaViolation
from esp.llm import LlmProfile, MockBackend
from esp.planner import PlannerConfig, parse_plan_json, plan, plan_verbose, render_prompt

from conftest import VOCAB, chain, dags, plan_from_edges

CAPTION = {
    "subtasks": [
        {"id": 0, "task_type": "image-to-text", "args": {"image": {"kind": "image-uri", "value": "/x.png"}}, "deps": []}
    ]
}
REQ = UserRequest("q1", "describe this image /x.png")


def sequenced(*replies):
    """Mock whose successive calls get successive replies, counting calls."""
    it = iter(replies)
    backend = MockBackend(responder=lambda msgs: next(it))
    return LlmProfile(name="seq", backend=backend)


def test_prefix_prose_is_stripped():
    p = parse_plan_json("Here is the plan: " + json.dumps(CAPTION) + " hope it helps", request_id="q")
    assert p.request_id == "q"
    assert p.subtasks[0].task_type == "image-to-text"


def test_schema_violation_path():
    with pytest.raises(SchemaViolation) as exc:
        parse_plan_json('{"subtasks": "oops"}')
    assert exc.value.path == "/subtasks"


def test_schema_violation_nested_path_and_offset():
    text = 'xx {"subtasks": [{"id": 0, "task_type": "a", "args": {"t": {"kind": "pdf", "value": "v"}}}]}'
    with pytest.raises(SchemaViolation) as exc:
        parse_plan_json(text)
    assert exc.value.path == "/subtasks/0/args/t/kind"
    assert exc.value.offset == 3


def test_no_json():
    with pytest.raises(NoJsonFound):
        parse_plan_json("I cannot help with that { not json")


def test_skips_broken_brace_before_real_object():
    assert len(parse_plan_json("{oops} then " + json.dumps(CAPTION)).subtasks) == 1


@settings(max_examples=500)
@given(dags())
def test_fenced_roundtrip(p):
    text = "Sure!\n```json\n" + p.to_json(indent=2) + "\n```\n"
    assert parse_plan_json(text) == p


@settings(max_examples=500)
@given(dags())
def test_plain_roundtrip(p):
    assert parse_plan_json(p.to_json()) == p


def test_scripted_passthrough():
    llm = sequenced(json.dumps(CAPTION))
    got = plan(REQ, PlannerConfig(), llm, VOCAB)
    assert got.request_id == "q1"
    assert [s.task_type for s in got.subtasks] == ["image-to-text"]


def test_repair_round_fixes_cycle():
    cyclic = plan_from_edges(2, [(0, 1), (1, 0)]).to_json()
    fixed = chain(["image-to-text", "text-to-speech"]).to_json()
    llm = sequenced(cyclic, fixed)
    out = plan_verbose(REQ, PlannerConfig(), llm, VOCAB)
    assert out.repair_rounds_used == 1
    assert len(llm.backend.calls) == 2
    assert validate_plan(out.plan, VOCAB) == []


def test_repair_prompt_carries_violations():
    seen = []

    def responder(msgs):
        seen.append(msgs)
        return "not json" if len(seen) == 1 else json.dumps(CAPTION)

    llm = LlmProfile(name="m", backend=MockBackend(responder=responder))
    plan(REQ, PlannerConfig(), llm, VOCAB)
    repair = seen[1]
    assert [m.role for m in repair] == ["system", "user", "assistant", "user"]
    assert repair[2].content == "not json"
    assert "no JSON object found" in repair[3].content


def test_budget_exhaustion():
    llm = sequenced("nope", "still nope")
    with pytest.raises(ParseFailure) as exc:
        plan(REQ, PlannerConfig(max_repair_rounds=1), llm, VOCAB)
    assert exc.value.attempts == ["nope", "still nope"]


def test_unknown_type_is_repaired():
    bad = json.loads(json.dumps(CAPTION))
    bad["subtasks"][0]["task_type"] = "frobnicate"
    llm = sequenced(json.dumps(bad), json.dumps(CAPTION))
    assert plan_verbose(REQ, PlannerConfig(), llm, VOCAB).repair_rounds_used == 1


def test_empty_plan_is_a_diagnostic():
    with pytest.raises(EmptyPlan):
        plan(REQ, PlannerConfig(), sequenced('{"subtasks": []}'), VOCAB)


def test_template_slots_required():
    with pytest.raises(ValueError):
        PlannerConfig(prompt_template="no slots here")


def test_prompt_contains_request_vocab_and_demos():
    text = render_prompt(REQ, PlannerConfig(), VOCAB)
    assert "Request: describe this image /x.png" in text
    assert "object-detection" in text
    assert "/img/park.jpg" in text
    assert "{request}" not in text


def test_prompt_lists_attachments():
    from esp.core import ResourceRef

    req = UserRequest("a", "what is here?", (ResourceRef("image-uri", "/y.png"),))
    assert "image-uri=/y.png" in render_prompt(req, PlannerConfig(), VOCAB)


def test_transport_errors_propagate():
    from esp.errors import Unavailable
    from esp.llm import Unreachable

    with pytest.raises(Unavailable):
        plan(REQ, PlannerConfig(), LlmProfile(name="down", backend=Unreachable()), VOCAB)


def test_from_files(tmp_path):
    t = tmp_path / "p.txt"
    t.write_text("R={request} V={vocabulary} D={demonstrations}")
    d = tmp_path / "d.json"
    d.write_text(json.dumps([{"request": "hello", "plan": CAPTION}]))
    cfg = PlannerConfig.from_files(str(t), str(d), 0)
    assert cfg.max_repair_rounds == 0
    assert render_prompt(REQ, cfg, {"a"}).startswith("R=describe this image /x.png V=a D=Request: hello")
