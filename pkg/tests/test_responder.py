import json

from esp.core import CandidateResult, DegradedResponse, FinalResponse, SelectionDecision, UserRequest
from esp.errors import SubtaskFailed
from esp.executor import ExecutionTrace
from esp.llm import LlmProfile, MockBackend, Unreachable
from esp.responder import DEGRADED_HEADER, respond

from conftest import chain

REQ = UserRequest("r1", "what is in /cat.png?")


def capturing(reply):
    seen = []
    return LlmProfile(name="resp", backend=MockBackend(responder=lambda m: seen.append(m) or reply)), seen


def traced(plan, selected):
    """Trace and decisions where ``selected`` maps subtask id to (model, structured payload)."""
    trace = ExecutionTrace(plan)
    decisions = {}
    for sid, (model, payload) in selected.items():
        text = payload if isinstance(payload, str) else json.dumps(payload)
        trace.selected[sid] = CandidateResult(sid, model, text, payload, 5.0)
        decisions[sid] = SelectionDecision(sid, ((1.0,),), 0, "singleton", "")
    return trace, decisions


def test_single_subtask_summary():
    plan = chain(["image-to-text"])
    trace, decisions = traced(plan, {0: ("blip", "a cat on a sofa")})
    llm, _ = capturing("The image shows a cat.")
    out = respond(REQ, plan, trace, decisions, llm)
    assert type(out) is FinalResponse
    assert out.summary_text == "The image shows a cat."
    assert [(r.subtask_id, r.model_id) for r in out.per_subtask] == [(0, "blip")]


def test_skipped_subtask_reported():
    plan = chain(["object-detection", "image-to-text"])
    trace, decisions = traced(plan, {0: ("detr", [{"label": "cat", "score": 0.9}])})
    trace.skipped = {1}
    llm, seen = capturing("partial answer")
    out = respond(REQ, plan, trace, decisions, llm)
    prompt = seen[0][-1].content
    assert "failed: 1" in prompt
    assert "skipped" in prompt
    assert [r.subtask_id for r in out.per_subtask] == [0]
    assert out.skipped == (1,)


def test_failed_subtask_listed():
    plan = chain(["image-to-text"])
    trace = ExecutionTrace(plan)
    trace.failures[0] = SubtaskFailed(0, ["HTTP 500"])
    llm, seen = capturing("unused")
    out = respond(REQ, plan, trace, {}, llm)
    # nothing to summarize, so no LLM round trip
    assert isinstance(out, DegradedResponse) and out.failed == (0,)
    assert seen == []


def test_gateway_down_keeps_table():
    plan = chain(["image-to-text", "text-to-speech"])
    trace, decisions = traced(plan, {0: ("blip", "a cat"), 1: ("tts", {"audio": "/out/1.wav"})})
    out = respond(REQ, plan, trace, decisions, LlmProfile(name="down", backend=Unreachable()))
    assert isinstance(out, DegradedResponse) and out.degraded
    assert out.summary_text.startswith(DEGRADED_HEADER)
    assert "#1 [tts]" in out.summary_text
    assert [r.structured for r in out.per_subtask] == ["a cat", {"audio": "/out/1.wav"}]


def test_structured_payloads_byte_equal_despite_prose():
    payload = [{"label": "dog", "score": 0.123456789, "box": [1, 2, 3, 4]}]
    plan = chain(["object-detection"])
    trace, decisions = traced(plan, {0: ("detr", payload)})
    llm, _ = capturing("There are definitely three cats.")
    out = respond(REQ, plan, trace, decisions, llm)
    assert json.dumps(out.per_subtask[0].structured, sort_keys=True) == json.dumps(payload, sort_keys=True)
    back = FinalResponse.from_dict(json.loads(json.dumps(out.to_dict())))
    assert back.per_subtask[0].structured == payload


def test_prompt_carries_plan_and_results():
    plan = chain(["image-to-text"])
    trace, decisions = traced(plan, {0: ("blip", "a cat")})
    llm, seen = capturing("ok")
    respond(REQ, plan, trace, decisions, llm)
    prompt = seen[0][-1].content
    assert "what is in /cat.png?" in prompt
    assert "image-to-text" in prompt and '#0 blip: "a cat"' in prompt


def test_degraded_roundtrip():
    d = DegradedResponse("r", DEGRADED_HEADER, (), (0,), (1,))
    back = FinalResponse.from_dict(json.loads(json.dumps(d.to_dict())))
    assert isinstance(back, DegradedResponse) and back == d
