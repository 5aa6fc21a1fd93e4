"""Request decomposition: prompt the LLM for a plan, parse it tolerantly,
validate it, and feed violations back for a bounded number of repairs."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from typing import Any

from . import prompts
from .core import REF_KINDS, ResourceRef, Subtask, TaskPlan, UserRequest, validate_plan
from .errors import EmptyPlan, NoJsonFound, ParseFailure, PlanError, SchemaViolation
from .llm import LlmProfile, assistant, complete, system, user

log = logging.getLogger(__name__)

PLANNER_SLOTS = ("request", "vocabulary", "demonstrations")
SYSTEM_PROMPT = "You are a task planner. You reply with JSON only."


def default_demonstrations() -> list[tuple[str, dict]]:
    raw = json.loads(resources.files("esp.data").joinpath("demonstrations.json").read_text("utf-8"))
    return [(d["request"], d["plan"]) for d in raw]


@dataclass
class PlannerConfig:
    prompt_template: str = field(default_factory=lambda: prompts.load_template("planner"))
    demonstrations: list[tuple[str, dict]] = field(default_factory=default_demonstrations)
    max_repair_rounds: int = 2
    repair_template: str = field(default_factory=lambda: prompts.load_template("repair"))

    def __post_init__(self):
        missing = prompts.missing_slots(self.prompt_template, PLANNER_SLOTS)
        if missing:
            raise ValueError(f"planner template lacks slots {missing}")
        if self.max_repair_rounds < 0:
            raise ValueError("max_repair_rounds must be >= 0")

    @classmethod
    def from_files(cls, template_path=None, demonstrations_path=None, max_repair_rounds=2):
        kw: dict[str, Any] = {"max_repair_rounds": max_repair_rounds}
        if template_path:
            kw["prompt_template"] = prompts.load_template(template_path)
        if demonstrations_path:
            with open(demonstrations_path, encoding="utf-8") as fh:
                kw["demonstrations"] = [(d["request"], d["plan"]) for d in json.load(fh)]
        return cls(**kw)


@dataclass
class PlanOutcome:
    plan: TaskPlan
    repair_rounds_used: int
    raw_outputs: list[str]


# -- parsing -------------------------------------------------------------------


def _first_json_object(text: str) -> tuple[Any, int]:
    decoder = json.JSONDecoder()
    pos = text.find("{")
    while pos != -1:
        try:
            obj, _ = decoder.raw_decode(text, pos)
        except json.JSONDecodeError:
            pos = text.find("{", pos + 1)
            continue
        return obj, pos
    raise NoJsonFound(len(text))


def _require(cond: bool, path: str, reason: str, offset: int):
    if not cond:
        raise SchemaViolation(path, reason, offset)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def parse_plan_json(text: str, request_id: str | None = None) -> TaskPlan:
    """Pull the first JSON object out of ``text`` and strict-parse it as a plan.

    Raises NoJsonFound or SchemaViolation (with a JSON-pointer-ish path and the
    character offset where the object starts).
    """
    obj, off = _first_json_object(text)
    _require(isinstance(obj, dict), "", "plan must be an object", off)
    _require("subtasks" in obj, "/subtasks", "missing", off)
    subs = obj["subtasks"]
    _require(isinstance(subs, list), "/subtasks", "must be an array", off)
    rid = obj.get("request_id", "")
    _require(isinstance(rid, str), "/request_id", "must be a string", off)
    parsed = []
    for i, s in enumerate(subs):
        p = f"/subtasks/{i}"
        _require(isinstance(s, dict), p, "must be an object", off)
        _require(_is_int(s.get("id")) and s["id"] >= 0, p + "/id", "must be a nonnegative integer", off)
        _require(isinstance(s.get("task_type"), str), p + "/task_type", "must be a string", off)
        args = s.get("args", {})
        _require(isinstance(args, dict), p + "/args", "must be an object", off)
        deps = s.get("deps", [])
        _require(isinstance(deps, list) and all(_is_int(d) for d in deps), p + "/deps",
                 "must be an array of integers", off)
        refs = {}
        for name, a in args.items():
            ap = f"{p}/args/{name}"
            _require(isinstance(a, dict), ap, "must be an object", off)
            _require(a.get("kind") in REF_KINDS, ap + "/kind", f"must be one of {sorted(REF_KINDS)}", off)
            _require(isinstance(a.get("value"), str), ap + "/value", "must be a string", off)
            producer = a.get("producer")
            if a["kind"] == "subtask-output":
                _require(_is_int(producer), ap + "/producer", "required integer for subtask-output", off)
            else:
                _require(producer is None, ap + "/producer", "only allowed for subtask-output", off)
            refs[name] = ResourceRef(a["kind"], a["value"], producer)
        parsed.append(Subtask(s["id"], s["task_type"], refs, frozenset(deps)))
    return TaskPlan(request_id if request_id is not None else rid, tuple(parsed))


# -- planning ------------------------------------------------------------------


def render_prompt(request: UserRequest, cfg: PlannerConfig, vocabulary) -> str:
    demos = "\n".join(
        f"Request: {text}\nPlan: {json.dumps(plan, sort_keys=True)}" for text, plan in cfg.demonstrations
    )
    req = request.text
    if request.attachments:
        req += "\nAttachments: " + ", ".join(f"{a.kind}={a.value}" for a in request.attachments)
    return prompts.fill(
        cfg.prompt_template,
        vocabulary=", ".join(sorted(vocabulary)),
        demonstrations=demos or "(none)",
        request=req,
    )


def plan_verbose(request: UserRequest, cfg: PlannerConfig, llm: LlmProfile, vocabulary) -> PlanOutcome:
    messages = [system(SYSTEM_PROMPT), user(render_prompt(request, cfg, vocabulary))]
    outputs: list[str] = []
    for round_ in range(cfg.max_repair_rounds + 1):
        text = complete(llm, messages)
        outputs.append(text)
        try:
            candidate = parse_plan_json(text, request_id=request.id)
        except PlanError as exc:
            problems = [str(exc)]
        else:
            if not candidate.subtasks:
                raise EmptyPlan(f"request {request.id}: no subtask in the vocabulary can serve it")
            problems = [str(v) for v in validate_plan(candidate, vocabulary)]
            if not problems:
                return PlanOutcome(candidate, round_, outputs)
        log.info("plan for %s rejected (round %d): %s", request.id, round_, problems)
        repair = prompts.fill(cfg.repair_template, output=text, violations="\n".join("- " + p for p in problems))
        messages = messages + [assistant(text), user(repair)]
    raise ParseFailure(
        f"request {request.id}: no valid plan after {cfg.max_repair_rounds} repair round(s)", outputs
    )


def plan(request: UserRequest, cfg: PlannerConfig, llm: LlmProfile, vocabulary) -> TaskPlan:
    return plan_verbose(request, cfg, llm, vocabulary).plan
