"""Plan execution.

A subtask becomes ready once every dependency has a selection decision.
Its candidate models are then invoked concurrently with one shared,
fully-resolved argument map; once all of them settle the integration hook
picks the result that flows downstream. All model calls share a single
bounded worker pool, so in-flight invocations never exceed ``parallelism``.
Bookkeeping happens on the calling thread, fed by an event queue.
"""

from __future__ import annotations

import json
import logging
import queue
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol, Sequence

import requests

from .core import CandidateResult, ModelDescriptor, SelectionDecision, Subtask, TaskPlan, topological_order
from .errors import SubtaskFailed, UnresolvedDependency
from .integrator import canonical_text

log = logging.getLogger(__name__)


class ModelTimeout(Exception):
    pass


class ModelFailure(Exception):
    pass


class ModelClient(Protocol):
    def invoke(self, model: ModelDescriptor, task_type: str, args: dict, timeout_s: float) -> Any: ...


class HttpModelClient:
    """``POST <endpoint> {task_type, args}`` -> ``{output: ...}``."""

    def invoke(self, model, task_type, args, timeout_s):
        try:
            resp = requests.post(model.endpoint, json={"task_type": task_type, "args": args}, timeout=timeout_s)
        except requests.Timeout as exc:
            raise ModelTimeout(f"{model.model_id}: no reply within {timeout_s:.3f}s") from exc
        except requests.RequestException as exc:
            raise ModelFailure(f"{model.model_id}: {exc}") from exc
        if resp.status_code != 200:
            raise ModelFailure(f"{model.model_id}: HTTP {resp.status_code}")
        try:
            return resp.json()["output"]
        except (ValueError, KeyError, TypeError) as exc:
            raise ModelFailure(f"{model.model_id}: malformed reply") from exc


@dataclass(frozen=True)
class ExecutionLimits:
    parallelism: int = 8
    timeout_ms: int = 60_000

    def __post_init__(self):
        if self.parallelism < 1 or self.timeout_ms <= 0:
            raise ValueError("parallelism and timeout_ms must be positive")


@dataclass(frozen=True)
class InvocationSpec:
    subtask_id: int
    model: ModelDescriptor
    args: dict[str, str]
    timeout_ms: int

    def args_bytes(self) -> bytes:
        return json.dumps(self.args, sort_keys=True, separators=(",", ":")).encode("utf-8")


@dataclass
class InvocationRecord:
    model_id: str
    args_bytes: bytes
    started: float
    finished: float


@dataclass
class ExecutionTrace:
    plan: TaskPlan
    layers: dict[int, int] = field(default_factory=dict)
    candidates: dict[int, list[CandidateResult]] = field(default_factory=dict)
    invocations: dict[int, list[InvocationRecord]] = field(default_factory=dict)
    ready_at: dict[int, float] = field(default_factory=dict)
    integrated_at: dict[int, float] = field(default_factory=dict)
    selected: dict[int, CandidateResult] = field(default_factory=dict)
    failures: dict[int, SubtaskFailed] = field(default_factory=dict)
    skipped: set[int] = field(default_factory=set)
    started: float = 0.0
    finished: float = 0.0

    def to_dict(self, decisions: dict[int, SelectionDecision] | None = None) -> dict:
        t0 = self.started

        def rel(t):
            return round((t - t0) * 1000, 3)

        subtasks = []
        for s in self.plan.subtasks:
            sid = s.id
            entry: dict[str, Any] = {"id": sid, "task_type": s.task_type, "layer": self.layers.get(sid)}
            if sid in self.skipped:
                entry["status"] = "skipped"
            elif sid in self.failures:
                entry["status"] = "failed"
                entry["causes"] = self.failures[sid].causes
            else:
                entry["status"] = "ok" if sid in self.selected else "pending"
            entry["candidates"] = [c.to_dict() for c in self.candidates.get(sid, [])]
            entry["invocations"] = [
                {"model_id": r.model_id, "args": json.loads(r.args_bytes), "start_ms": rel(r.started),
                 "end_ms": rel(r.finished)}
                for r in self.invocations.get(sid, [])
            ]
            if sid in self.integrated_at:
                entry["integrated_ms"] = rel(self.integrated_at[sid])
            if decisions and sid in decisions:
                entry["decision"] = decisions[sid].to_dict()
            subtasks.append(entry)
        return {"request_id": self.plan.request_id, "wall_ms": rel(self.finished), "subtasks": subtasks}


def resolve_args(subtask: Subtask, upstream: dict[int, str]) -> dict[str, str]:
    out = {}
    for name, ref in subtask.args.items():
        if ref.kind == "subtask-output":
            if ref.producer not in upstream:
                raise UnresolvedDependency(f"subtask {subtask.id} arg {name!r} needs output of {ref.producer}")
            out[name] = upstream[ref.producer]
        else:
            out[name] = ref.value
    return out


def _invoke(client: ModelClient, spec: InvocationSpec, task_type: str) -> tuple[CandidateResult, InvocationRecord]:
    started = time.monotonic()
    status, payload, text, error = "ok", None, "", ""
    try:
        payload = client.invoke(spec.model, task_type, dict(spec.args), spec.timeout_ms / 1000)
        text = canonical_text(payload)
        if not text:
            status, error = "failed", "empty output"
    except ModelTimeout as exc:
        status, error = "timeout", str(exc)
    except Exception as exc:  # one candidate's crash must not take its siblings down
        status, error = "failed", f"{type(exc).__name__}: {exc}"
    finished = time.monotonic()
    result = CandidateResult(
        spec.subtask_id, spec.model.model_id, text if status == "ok" else "", payload,
        (finished - started) * 1000, status, error,
    )
    return result, InvocationRecord(spec.model.model_id, spec.args_bytes(), started, finished)


def _failure(subtask_id: int, results: Sequence[CandidateResult]) -> SubtaskFailed:
    return SubtaskFailed(subtask_id, [f"{r.model_id}: {r.status} ({r.error})" for r in results])


def run_subtask(
    subtask: Subtask,
    candidates: Sequence[ModelDescriptor],
    resolved_args: dict[str, str],
    limits: ExecutionLimits,
    client: ModelClient,
    pool: ThreadPoolExecutor | None = None,
) -> list[CandidateResult]:
    """Invoke every candidate with the same arguments; results keep candidate order."""
    if not candidates:
        raise ValueError("candidates must be nonempty")
    own = pool is None
    pool = pool or ThreadPoolExecutor(max_workers=min(len(candidates), limits.parallelism))
    try:
        futures = [
            pool.submit(_invoke, client, InvocationSpec(subtask.id, m, resolved_args, limits.timeout_ms), subtask.task_type)
            for m in candidates
        ]
        results = [f.result()[0] for f in futures]
    finally:
        if own:
            pool.shutdown()
    if not any(r.status == "ok" for r in results):
        raise _failure(subtask.id, results)
    return results


SelectFn = Callable[[Subtask], Sequence[ModelDescriptor]]
IntegrateFn = Callable[[Subtask, list[CandidateResult], dict], SelectionDecision]


def _dependents(plan: TaskPlan) -> dict[int, set[int]]:
    out: dict[int, set[int]] = {s.id: set() for s in plan.subtasks}
    for s in plan.subtasks:
        for d in s.deps:
            out[d].add(s.id)
    return out


def run_plan(
    plan: TaskPlan,
    select: SelectFn,
    integrate: IntegrateFn,
    limits: ExecutionLimits,
    client: ModelClient,
) -> tuple[ExecutionTrace, dict[int, SelectionDecision]]:
    """Execute ``plan`` and return the trace together with per-subtask decisions.

    A subtask whose candidates all fail is recorded in ``trace.failures`` and
    all of its transitive dependents in ``trace.skipped``; the run carries on
    with whatever else is executable.
    """
    trace = ExecutionTrace(plan)
    for depth, layer in enumerate(topological_order(plan)):
        for sid in layer:
            trace.layers[sid] = depth
    by_id = plan.by_id()
    dependents = _dependents(plan)
    decisions: dict[int, SelectionDecision] = {}
    events: queue.Queue = queue.Queue()
    pending_deps = {s.id: set(s.deps) for s in plan.subtasks}
    outstanding: dict[int, list] = {}
    resolved: dict[int, dict[str, str]] = {}
    active = 0

    invoke_pool = ThreadPoolExecutor(max_workers=limits.parallelism, thread_name_prefix="invoke")
    integrate_pool = ThreadPoolExecutor(max_workers=limits.parallelism, thread_name_prefix="integrate")
    trace.started = time.monotonic()

    def skip_downstream(sid: int):
        stack = list(dependents[sid])
        while stack:
            d = stack.pop()
            if d not in trace.skipped:
                trace.skipped.add(d)
                pending_deps.pop(d, None)
                stack.extend(dependents[d])

    def launch(sid: int):
        nonlocal active
        subtask = by_id[sid]
        upstream = {d: trace.selected[d].canonical_text for d in subtask.deps}
        try:
            args = resolve_args(subtask, upstream)
            models = list(select(subtask))
        except Exception as exc:
            trace.failures[sid] = SubtaskFailed(sid, [f"{type(exc).__name__}: {exc}"])
            skip_downstream(sid)
            return
        if not models:
            trace.failures[sid] = SubtaskFailed(sid, ["no candidate models"])
            skip_downstream(sid)
            return
        resolved[sid] = args
        trace.ready_at[sid] = time.monotonic()
        outstanding[sid] = [None] * len(models)
        active += 1
        for idx, m in enumerate(models):
            spec = InvocationSpec(sid, m, args, limits.timeout_ms)
            fut = invoke_pool.submit(_invoke, client, spec, subtask.task_type)
            fut.add_done_callback(lambda f, sid=sid, idx=idx: events.put(("invoked", sid, idx, f)))

    def integrate_job(sid: int, ok: list[CandidateResult]):
        decision = integrate(by_id[sid], ok, resolved[sid])
        return decision, time.monotonic()

    def launch_ready():
        for sid in sorted(pending_deps):
            if not pending_deps[sid] and sid not in outstanding and sid not in trace.failures:
                launch(sid)
        for sid in list(outstanding):
            pending_deps.pop(sid, None)
        for sid in trace.failures:
            pending_deps.pop(sid, None)

    try:
        launch_ready()
        while active:
            kind, sid, idx, fut = events.get()
            if kind == "invoked":
                result, record = fut.result()
                outstanding[sid][idx] = result
                trace.invocations.setdefault(sid, []).append(record)
                slots = outstanding[sid]
                if any(r is None for r in slots):
                    continue
                trace.candidates[sid] = list(slots)
                trace.invocations[sid].sort(key=lambda r: [c.model_id for c in slots].index(r.model_id))
                ok = [r for r in slots if r.status == "ok"]
                if not ok:
                    trace.failures[sid] = _failure(sid, slots)
                    trace.integrated_at[sid] = time.monotonic()
                    skip_downstream(sid)
                    active -= 1
                    launch_ready()
                    continue
                ifut = integrate_pool.submit(integrate_job, sid, ok)
                ifut.add_done_callback(lambda f, sid=sid: events.put(("integrated", sid, None, f)))
            else:
                active -= 1
                ok = [r for r in trace.candidates[sid] if r.status == "ok"]
                try:
                    decision, done_at = fut.result()
                except Exception as exc:
                    log.error("integration of subtask %d failed: %s", sid, exc)
                    trace.failures[sid] = SubtaskFailed(sid, [f"integration: {type(exc).__name__}: {exc}"])
                    trace.integrated_at[sid] = time.monotonic()
                    skip_downstream(sid)
                    launch_ready()
                    continue
                decisions[sid] = decision
                trace.selected[sid] = ok[decision.chosen_index]
                trace.integrated_at[sid] = done_at
                for d in dependents[sid]:
                    if d in pending_deps:
                        pending_deps[d].discard(sid)
                launch_ready()
    finally:
        invoke_pool.shutdown(wait=True)
        integrate_pool.shutdown(wait=True)
        trace.finished = time.monotonic()
    return trace, decisions
