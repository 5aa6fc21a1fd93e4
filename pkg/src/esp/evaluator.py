"""Plan-quality evaluation over single / sequential / graph request sets.

Per-record scores:

* single:     accuracy, and precision/recall/F1 over task-type multisets
* sequential: normalized edit distance between task-type sequences, plus P/R/F1
* graph:      judge-LLM score (0-100), plus P/R/F1

Aggregates are category means, reported as percentages with two decimals.
"""

from __future__ import annotations

import json
import logging
import math
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Sequence

from . import prompts
from .core import TaskPlan, linear_sequence
from .errors import EspError
from .llm import LlmProfile, assistant, complete, user

log = logging.getLogger(__name__)

CATEGORIES = ("single", "sequential", "graph")
CATEGORY_METRICS = {
    "single": ("acc", "pre", "rec", "f1"),
    "sequential": ("ed", "pre", "rec", "f1"),
    "graph": ("g4s", "pre", "rec", "f1"),
}
# metrics kept on their native scale; the rest are rates shown as percentages
UNSCALED = {"ed", "g4s"}


@dataclass
class EvalRecord:
    id: str
    text: str
    category: str
    gold_plan: TaskPlan
    predicted_plan: TaskPlan | None = None


def plan_shape(plan: TaskPlan) -> str:
    """Category implied by a plan's dependency structure."""
    n = len(plan.subtasks)
    if n == 1:
        return "single"
    edges = sum(len(s.deps) for s in plan.subtasks)
    indeg = [len(s.deps) for s in plan.subtasks]
    outdeg = Counter(d for s in plan.subtasks for d in s.deps)
    is_path = (
        edges == n - 1
        and all(d <= 1 for d in indeg)
        and all(c <= 1 for c in outdeg.values())
        and sum(1 for d in indeg if d == 0) == 1
    )
    return "sequential" if is_path else "graph"


def check_category(category: str, gold: TaskPlan) -> str | None:
    shape = plan_shape(gold)
    if category == "single" and shape != "single":
        return f"category/shape mismatch: single needs 1 gold subtask, got {len(gold.subtasks)}"
    if category == "sequential" and shape != "sequential":
        return "category/shape mismatch: sequential gold plan is not a path"
    if category == "graph" and len(gold.subtasks) < 2:
        return "category/shape mismatch: graph gold plan needs at least 2 subtasks"
    return None


@dataclass
class Dataset:
    records: list[EvalRecord]
    diagnostics: list[str] = field(default_factory=list)

    def counts(self) -> dict[str, int]:
        c = Counter(r.category for r in self.records)
        return {k: c.get(k, 0) for k in CATEGORIES}


def _parse_line(obj: dict) -> EvalRecord:
    category = obj["category"]
    if category not in CATEGORIES:
        raise ValueError(f"unknown category {category!r}")
    gold = TaskPlan.from_dict({"request_id": obj["id"], **obj["gold"]})
    if problem := check_category(category, gold):
        raise ValueError(problem)
    return EvalRecord(str(obj["id"]), obj["text"], category, gold)


def load_dataset(path: str) -> Dataset:
    """Read a JSONL dataset, or synthesize one from a ``.manifest.json`` file.

    Malformed lines become diagnostics; an unreadable file raises OSError.
    """
    if path.endswith(".manifest.json"):
        return load_manifest(path)
    records, diags = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(_parse_line(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                diags.append(f"line {lineno}: {exc}")
    return Dataset(records, diags)


# -- synthetic manifests ---------------------------------------------------------

_SYNTH_TYPES = ("image-to-text", "object-detection", "image-classification", "text-to-speech",
                "translation", "summarization", "question-answering", "text-to-image")


def _synthetic_gold(category: str, rng: random.Random) -> dict:
    if category == "single":
        n = 1
    elif category == "sequential":
        n = rng.randint(2, 4)
    else:
        n = rng.randint(3, 5)
    types = [rng.choice(_SYNTH_TYPES) for _ in range(n)]
    subtasks = []
    for i, tt in enumerate(types):
        if category == "sequential":
            deps = [i - 1] if i else []
        elif category == "graph":
            # diamond-ish: node 0 feeds everything, the last node joins the middle
            deps = [] if i == 0 else ([0] if i < n - 1 else list(range(1, n - 1)))
        else:
            deps = []
        args = {"image": {"kind": "image-uri", "value": f"/img/{i}.jpg"}} if not deps else {
            "text": {"kind": "subtask-output", "value": f"<GENERATED>-{deps[0]}", "producer": deps[0]}
        }
        subtasks.append({"id": i, "task_type": tt, "args": args, "deps": deps})
    return {"subtasks": subtasks}


def load_manifest(path: str) -> Dataset:
    """A manifest declares per-category record counts; contents are synthetic."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    rng = random.Random(doc.get("seed", 0))
    records, diags = [], []
    for category in CATEGORIES:
        for i in range(int(doc["categories"].get(category, 0))):
            rid = f"{doc.get('name', 'synthetic')}-{category}-{i}"
            obj = {"id": rid, "text": f"synthetic {category} request {i}", "category": category,
                   "gold": _synthetic_gold(category, rng)}
            try:
                records.append(_parse_line(obj))
            except ValueError as exc:
                diags.append(f"{rid}: {exc}")
    return Dataset(records, diags)


# -- metrics -------------------------------------------------------------------


def task_set_prf(pred: TaskPlan | None, gold: TaskPlan) -> tuple[float, float, float]:
    p = Counter(s.task_type for s in pred.subtasks) if pred else Counter()
    g = Counter(s.task_type for s in gold.subtasks)
    tp = sum((p & g).values())
    n_pred, n_gold = sum(p.values()), sum(g.values())
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def single_accuracy(pred: TaskPlan | None, gold: TaskPlan) -> int:
    if pred is None or len(pred.subtasks) != 1:
        return 0
    return int(pred.subtasks[0].task_type == gold.subtasks[0].task_type)


def levenshtein(a: Sequence, b: Sequence) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def normalized_edit_distance(pred_seq: Sequence[str], gold_seq: Sequence[str]) -> float:
    if not gold_seq and not pred_seq:
        return 0.0
    return levenshtein(pred_seq, gold_seq) / max(len(pred_seq), len(gold_seq))


_SCORE_RE = re.compile(r"SCORE:\s*(\d{1,3})\b")
JUDGE_REASK = "Reply with exactly one line: SCORE: <integer 0-100>"


def g4s(pred: TaskPlan | None, gold: TaskPlan, request: str, judge: LlmProfile,
        template: str | None = None) -> int | None:
    """Judge score in [0, 100], or None when the judge never gave a usable answer."""
    template = template or prompts.load_template("judge")
    pred_json = pred.to_json() if pred else '{"subtasks": []}'
    messages = [user(prompts.fill(template, request=request, gold=gold.to_json(), pred=pred_json))]
    try:
        for attempt in range(2):
            reply = complete(judge, messages)
            m = _SCORE_RE.search(reply)
            if m and 0 <= int(m.group(1)) <= 100:
                return int(m.group(1))
            messages = messages + [assistant(reply), user(JUDGE_REASK)]
    except EspError as exc:
        log.warning("judge failed: %s", exc)
    return None


# -- aggregation ---------------------------------------------------------------


@dataclass
class RecordScore:
    id: str
    category: str
    metrics: dict[str, float]
    judge_failed: bool = False
    error: str = ""


def score_record(rec: EvalRecord, judge: LlmProfile | None = None) -> RecordScore:
    pred, gold = rec.predicted_plan, rec.gold_plan
    pre, rec_, f1 = task_set_prf(pred, gold)
    metrics = {"pre": pre, "rec": rec_, "f1": f1}
    failed = False
    if rec.category == "single":
        metrics["acc"] = float(single_accuracy(pred, gold))
    elif rec.category == "sequential":
        pseq = linear_sequence(pred) if pred else []
        metrics["ed"] = normalized_edit_distance(pseq, linear_sequence(gold))
    elif judge is not None:
        score = g4s(pred, gold, rec.text, judge)
        if score is None:
            failed = True
        else:
            metrics["g4s"] = float(score)
    return RecordScore(rec.id, rec.category, metrics, failed)


def round_half_up(x: float, places: int = 2) -> float:
    q = Decimal(1).scaleb(-places)
    return float(Decimal(repr(x)).quantize(q, rounding=ROUND_HALF_UP))


@dataclass
class MetricReport:
    means: dict[str, dict[str, float]]
    counts: dict[str, int]
    judge_failures: int = 0
    record_failures: int = 0

    def formatted(self) -> dict[str, dict[str, float]]:
        out = {}
        for cat, metrics in self.means.items():
            out[cat] = {
                k: round_half_up(v if k in UNSCALED else v * 100) for k, v in metrics.items()
            }
        return out

    def to_dict(self) -> dict:
        return {
            "counts": self.counts,
            "metrics": self.formatted(),
            "judge_failures": self.judge_failures,
            "record_failures": self.record_failures,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        fmt = self.formatted()
        lines = []
        for cat in CATEGORIES:
            if cat not in fmt:
                continue
            cols = CATEGORY_METRICS[cat]
            head = f"{cat.capitalize() + ' Task':<16}" + "".join(f"{c.upper():>9}" for c in cols) + f"{'N':>7}"
            vals = "".join(
                f"{fmt[cat][c]:>9.2f}" if c in fmt[cat] else f"{'-':>9}" for c in cols
            )
            lines += [head, f"{'':<16}{vals}{self.counts[cat]:>7}", ""]
        if self.judge_failures:
            lines.append(f"judge failures: {self.judge_failures}")
        if self.record_failures:
            lines.append(f"record failures: {self.record_failures}")
        return "\n".join(lines).rstrip() + "\n"


def aggregate(scores: Iterable[RecordScore]) -> MetricReport:
    buckets: dict[str, dict[str, list[float]]] = {}
    counts = {c: 0 for c in CATEGORIES}
    judge_failures = record_failures = 0
    for s in scores:
        counts[s.category] += 1
        judge_failures += s.judge_failed
        record_failures += bool(s.error)
        cat = buckets.setdefault(s.category, {})
        for k, v in s.metrics.items():
            cat.setdefault(k, []).append(v)
    # fsum is exactly rounded, so the mean does not depend on record order
    means = {
        cat: {k: math.fsum(vs) / len(vs) for k, vs in sorted(metrics.items())}
        for cat, metrics in buckets.items()
    }
    means = {cat: means[cat] for cat in CATEGORIES if cat in means}
    return MetricReport(means, counts, judge_failures, record_failures)
