"""Final answer composition from the plan and the selected subtask results."""

from __future__ import annotations

import json
import logging

from . import prompts
from .core import DegradedResponse, FinalResponse, SelectionDecision, SubtaskOutcome, TaskPlan, UserRequest
from .errors import EspError
from .executor import ExecutionTrace
from .integrator import render_subtask
from .llm import LlmProfile, complete, user

log = logging.getLogger(__name__)

RESPONSE_SLOTS = ("request", "plan", "results", "failed")
DEGRADED_HEADER = "No summary could be generated; the selected results for each subtask follow."


def _outcomes(plan: TaskPlan, trace: ExecutionTrace, decisions: dict[int, SelectionDecision]) -> list[SubtaskOutcome]:
    rows = []
    for s in plan.subtasks:
        if s.id in decisions and s.id in trace.selected:
            c = trace.selected[s.id]
            rows.append(SubtaskOutcome(s.id, c.model_id, c.canonical_text, c.structured))
    return rows


def render_table(rows) -> str:
    if not rows:
        return "(no subtask produced a result)"
    return "\n".join(f"#{r.subtask_id} [{r.model_id}] {r.canonical_text}" for r in rows)


def respond(
    request: UserRequest,
    plan: TaskPlan,
    trace: ExecutionTrace,
    decisions: dict[int, SelectionDecision],
    llm: LlmProfile,
    template: str | None = None,
) -> FinalResponse:
    rows = _outcomes(plan, trace, decisions)
    failed = tuple(sorted(trace.failures))
    skipped = tuple(sorted(trace.skipped))
    if not rows:
        return DegradedResponse(request.id, DEGRADED_HEADER + "\n" + render_table(rows), (), failed, skipped)

    template = template or prompts.load_template("response")
    plan_text = "\n".join(render_subtask(s) + f" deps={sorted(s.deps)}" for s in plan.subtasks)
    results = "\n".join(
        f"#{r.subtask_id} {r.model_id}: {json.dumps(r.structured, sort_keys=True)}" for r in rows
    )
    failed_text = ""
    if failed or skipped:
        # skipped subtasks count as failed for the user; the skipped line says why
        failed_text = "Subtasks without a result:\n"
        failed_text += "failed: " + ", ".join(map(str, sorted(set(failed) | set(skipped)))) + "\n"
        if skipped:
            failed_text += "skipped (upstream failed): " + ", ".join(map(str, skipped)) + "\n"
    prompt = prompts.fill(template, request=request.text, plan=plan_text, results=results, failed=failed_text)
    try:
        summary = complete(llm, [user(prompt)])
    except EspError as exc:
        log.warning("response generation failed for %s: %s", request.id, exc)
        return DegradedResponse(request.id, DEGRADED_HEADER + "\n" + render_table(rows), tuple(rows), failed, skipped)
    return FinalResponse(request.id, summary.strip(), tuple(rows), failed, skipped)
