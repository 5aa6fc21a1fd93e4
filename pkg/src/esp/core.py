"""Domain types shared by every stage of the pipeline, plus plan validation
and layered topological ordering. Nothing in here performs I/O except
:func:`load_vocabulary`, which reads a shipped data file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Any

from .errors import CycleError

REF_KINDS = frozenset({"text", "image-uri", "audio-uri", "video-uri", "subtask-output"})
CANDIDATE_STATUSES = frozenset({"ok", "failed", "timeout"})
SELECTION_METHODS = frozenset({"llm-arbitration", "medoid-fallback", "singleton"})


def load_vocabulary(path: str | None = None) -> frozenset[str]:
    """Task-type vocabulary, from ``path`` or the versioned list bundled with the package."""
    if path is None:
        text = resources.files("esp.data").joinpath("vocabulary.json").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return frozenset(json.loads(text)["task_types"])


@dataclass(frozen=True)
class ResourceRef:
    kind: str
    value: str
    producer: int | None = None

    def __post_init__(self):
        if self.kind not in REF_KINDS:
            raise ValueError(f"unknown resource kind {self.kind!r}")
        if (self.kind == "subtask-output") != (self.producer is not None):
            raise ValueError("producer must be set iff kind is subtask-output")

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"kind": self.kind, "value": self.value}
        if self.producer is not None:
            d["producer"] = self.producer
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ResourceRef:
        return cls(d["kind"], d["value"], d.get("producer"))


@dataclass(frozen=True)
class UserRequest:
    id: str
    text: str
    attachments: tuple[ResourceRef, ...] = ()

    def __post_init__(self):
        if not self.id:
            raise ValueError("request id must be nonempty")
        if not self.text:
            raise ValueError("request text must be nonempty")

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "text": self.text, "attachments": [a.to_dict() for a in self.attachments]}

    @classmethod
    def from_dict(cls, d: dict) -> UserRequest:
        return cls(d["id"], d["text"], tuple(ResourceRef.from_dict(a) for a in d.get("attachments", [])))


@dataclass(frozen=True)
class Subtask:
    id: int
    task_type: str
    args: dict[str, ResourceRef] = field(default_factory=dict)
    deps: frozenset[int] = frozenset()

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "task_type": self.task_type,
            "args": {k: v.to_dict() for k, v in self.args.items()},
            "deps": sorted(self.deps),
        }

    @classmethod
    def from_dict(cls, d: dict) -> Subtask:
        return cls(
            d["id"],
            d["task_type"],
            {k: ResourceRef.from_dict(v) for k, v in d.get("args", {}).items()},
            frozenset(d.get("deps", [])),
        )


@dataclass(frozen=True)
class TaskPlan:
    request_id: str
    subtasks: tuple[Subtask, ...]

    def by_id(self) -> dict[int, Subtask]:
        return {s.id: s for s in self.subtasks}

    def to_dict(self) -> dict[str, Any]:
        return {"request_id": self.request_id, "subtasks": [s.to_dict() for s in self.subtasks]}

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, d: dict) -> TaskPlan:
        return cls(d.get("request_id", ""), tuple(Subtask.from_dict(s) for s in d["subtasks"]))


@dataclass(frozen=True)
class ModelDescriptor:
    model_id: str
    task_type: str
    description: str = ""
    downloads: int = 0
    likes: int = 0
    # 1-based position in the hub's trending list; None when the model is not trending
    trending_rank: int | None = None
    endpoint: str = ""

    def __post_init__(self):
        if not self.model_id:
            raise ValueError("model_id must be nonempty")

    @property
    def metrics(self) -> dict[str, int | None]:
        return {"downloads": self.downloads, "likes": self.likes, "trending_rank": self.trending_rank}

    def to_dict(self) -> dict[str, Any]:
        return {
            "model_id": self.model_id,
            "task_type": self.task_type,
            "description": self.description,
            "metrics": self.metrics,
            "endpoint": self.endpoint,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ModelDescriptor:
        m = d.get("metrics", {})
        return cls(
            d["model_id"],
            d["task_type"],
            d.get("description", ""),
            m.get("downloads", 0),
            m.get("likes", 0),
            m.get("trending_rank"),
            d.get("endpoint", ""),
        )


@dataclass(frozen=True)
class CandidateResult:
    subtask_id: int
    model_id: str
    canonical_text: str
    structured: Any
    latency_ms: float
    status: str = "ok"
    error: str = ""

    def __post_init__(self):
        if self.status not in CANDIDATE_STATUSES:
            raise ValueError(f"unknown status {self.status!r}")
        if self.status == "ok" and not self.canonical_text:
            raise ValueError("ok candidates need nonempty canonical_text")
        if self.latency_ms < 0:
            raise ValueError("latency_ms must be nonnegative")

    def to_dict(self) -> dict[str, Any]:
        return {
            "subtask_id": self.subtask_id,
            "model_id": self.model_id,
            "canonical_text": self.canonical_text,
            "structured": self.structured,
            "latency_ms": self.latency_ms,
            "status": self.status,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> CandidateResult:
        return cls(
            d["subtask_id"], d["model_id"], d["canonical_text"], d["structured"],
            d["latency_ms"], d["status"], d.get("error", ""),
        )


@dataclass(frozen=True)
class SelectionDecision:
    subtask_id: int
    similarity: tuple[tuple[float, ...], ...]
    chosen_index: int
    method: str
    rationale: str = ""
    flagged: tuple[int, ...] = ()

    def __post_init__(self):
        if self.method not in SELECTION_METHODS:
            raise ValueError(f"unknown selection method {self.method!r}")
        n = len(self.similarity)
        if not 0 <= self.chosen_index < max(n, 1):
            raise ValueError(f"chosen_index {self.chosen_index} out of range for {n} candidates")

    def to_dict(self) -> dict[str, Any]:
        return {
            "subtask_id": self.subtask_id,
            "similarity": [list(r) for r in self.similarity],
            "chosen_index": self.chosen_index,
            "method": self.method,
            "rationale": self.rationale,
            "flagged": list(self.flagged),
        }

    @classmethod
    def from_dict(cls, d: dict) -> SelectionDecision:
        return cls(
            d["subtask_id"],
            tuple(tuple(r) for r in d["similarity"]),
            d["chosen_index"],
            d["method"],
            d.get("rationale", ""),
            tuple(d.get("flagged", ())),
        )


@dataclass(frozen=True)
class SubtaskOutcome:
    subtask_id: int
    model_id: str
    canonical_text: str
    structured: Any

    def to_dict(self) -> dict[str, Any]:
        return {
            "subtask_id": self.subtask_id,
            "model_id": self.model_id,
            "canonical_text": self.canonical_text,
            "structured": self.structured,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SubtaskOutcome:
        return cls(d["subtask_id"], d["model_id"], d["canonical_text"], d["structured"])


@dataclass(frozen=True)
class FinalResponse:
    request_id: str
    summary_text: str
    per_subtask: tuple[SubtaskOutcome, ...]
    failed: tuple[int, ...] = ()
    skipped: tuple[int, ...] = ()

    degraded = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "request_id": self.request_id,
            "summary_text": self.summary_text,
            "per_subtask": [p.to_dict() for p in self.per_subtask],
            "failed": list(self.failed),
            "skipped": list(self.skipped),
            "degraded": self.degraded,
        }

    @classmethod
    def from_dict(cls, d: dict) -> FinalResponse:
        klass = DegradedResponse if d.get("degraded") else FinalResponse
        return klass(
            d["request_id"],
            d["summary_text"],
            tuple(SubtaskOutcome.from_dict(p) for p in d["per_subtask"]),
            tuple(d.get("failed", ())),
            tuple(d.get("skipped", ())),
        )


class DegradedResponse(FinalResponse):
    """Response assembled without LLM prose: templated header plus the structured table."""

    degraded = True


# -- plan checks ---------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    subtask_id: int | None
    reason: str

    def __str__(self):
        where = "plan" if self.subtask_id is None else f"subtask {self.subtask_id}"
        return f"{where}: {self.reason}"


def _find_cycle(graph: dict[int, frozenset[int]]) -> list[int] | None:
    # iterative DFS over dep edges; returns the node ids on the first cycle found
    WHITE, GREY, BLACK = 0, 1, 2
    color = {n: WHITE for n in graph}
    for root in sorted(graph):
        if color[root] != WHITE:
            continue
        stack = [(root, iter(sorted(graph[root])))]
        path = [root]
        color[root] = GREY
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                path.pop()
                color[node] = BLACK
            elif nxt not in color:
                continue
            elif color[nxt] == GREY:
                return path[path.index(nxt):]
            elif color[nxt] == WHITE:
                color[nxt] = GREY
                path.append(nxt)
                stack.append((nxt, iter(sorted(graph[nxt]))))
    return None


def validate_plan(plan: TaskPlan, vocabulary: frozenset[str] | set[str]) -> list[Violation]:
    """Check every plan and subtask invariant. An empty list means the plan is valid."""
    out: list[Violation] = []
    ids = [s.id for s in plan.subtasks]
    if sorted(ids) != list(range(len(ids))):
        out.append(Violation(None, f"subtask ids must be dense 0..{len(ids) - 1}, got {sorted(ids)}"))
    known = set(ids)
    for s in plan.subtasks:
        if s.task_type not in vocabulary:
            out.append(Violation(s.id, f"task_type {s.task_type!r} not in vocabulary"))
        if s.id in s.deps:
            out.append(Violation(s.id, f"self-dependency at {s.id}"))
        for d in sorted(s.deps - {s.id}):
            if d not in known:
                out.append(Violation(s.id, f"dependency on unknown subtask {d}"))
        for name, ref in sorted(s.args.items()):
            if ref.kind != "subtask-output":
                continue
            if ref.producer not in known:
                out.append(Violation(s.id, f"arg {name!r} produced by unknown subtask {ref.producer}"))
            elif ref.producer not in s.deps:
                out.append(Violation(s.id, f"arg {name!r} producer {ref.producer} missing from deps"))
    graph = {s.id: frozenset(s.deps - {s.id}) for s in plan.subtasks}
    cycle = _find_cycle(graph)
    if cycle:
        out.append(Violation(cycle[0], "cycle detected: " + " -> ".join(map(str, cycle + [cycle[0]]))))
    return out


def topological_order(plan: TaskPlan) -> list[list[int]]:
    """Kahn-style layering: each subtask sits at its longest-path depth from a root."""
    deps = {s.id: set(s.deps) for s in plan.subtasks}
    depth: dict[int, int] = {}
    remaining = set(deps)
    layer = 0
    layers = []
    while remaining:
        ready = sorted(n for n in remaining if deps[n] <= depth.keys())
        if not ready:
            raise CycleError(f"cycle among subtasks {sorted(remaining)}")
        for n in ready:
            depth[n] = layer
        remaining.difference_update(ready)
        layers.append(ready)
        layer += 1
    return layers


def linear_sequence(plan: TaskPlan) -> list[str]:
    """Task types in layered topological order, ids ascending within a layer."""
    by_id = plan.by_id()
    return [by_id[i].task_type for layer in topological_order(plan) for i in layer]
