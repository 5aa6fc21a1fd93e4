"""Model catalog and K-way candidate selection.

Candidates are drawn round-robin over the ranking metrics. When a metric's
best model was already picked through another metric, we keep walking down
that metric's list until an unpicked model turns up.
"""

from __future__ import annotations

import datetime as _dt
import json
import logging
import os
import re
from dataclasses import dataclass

import requests

from . import prompts
from .core import ModelDescriptor, Subtask
from .errors import NoModelsAvailable, Unavailable, VocabularyViolation
from .llm import LlmProfile, complete, user

log = logging.getLogger(__name__)

METRICS = ("downloads", "likes", "trending")


@dataclass(frozen=True)
class SelectionPolicy:
    k: int = 3
    metric_order: tuple[str, ...] = METRICS

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.metric_order:
            raise ValueError("metric_order must be nonempty")
        bad = [m for m in self.metric_order if m not in METRICS]
        if bad:
            raise ValueError(f"unknown ranking metric(s) {bad}")


@dataclass
class RankedCatalog:
    models: dict[str, ModelDescriptor]
    rankings: dict[str, dict[str, list[str]]]
    stale: bool = False
    synced_at: str = ""
    hub: str = ""

    def __post_init__(self):
        for tt, per_metric in self.rankings.items():
            for metric, ids in per_metric.items():
                if metric not in METRICS:
                    raise ValueError(f"{tt}: unknown metric {metric!r}")
                if len(set(ids)) != len(ids):
                    raise ValueError(f"{tt}/{metric}: duplicate model ids")
                for mid in ids:
                    if mid not in self.models:
                        raise ValueError(f"{tt}/{metric}: unknown model {mid!r}")
                    if self.models[mid].task_type != tt:
                        raise ValueError(f"{tt}/{metric}: {mid!r} has task_type {self.models[mid].task_type!r}")

    def task_types(self) -> list[str]:
        return sorted(self.rankings)

    def to_dict(self) -> dict:
        return {
            "hub": self.hub,
            "synced_at": self.synced_at,
            "models": {k: self.models[k].to_dict() for k in sorted(self.models)},
            "rankings": {tt: {m: list(ids) for m, ids in sorted(r.items())} for tt, r in sorted(self.rankings.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> RankedCatalog:
        return cls(
            models={k: ModelDescriptor.from_dict(v) for k, v in d["models"].items()},
            rankings={tt: {m: list(ids) for m, ids in r.items()} for tt, r in d["rankings"].items()},
            synced_at=d.get("synced_at", ""),
            hub=d.get("hub", ""),
        )

    def save(self, path: str) -> None:
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str) -> RankedCatalog:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def select_models(task_type: str, catalog: RankedCatalog, policy: SelectionPolicy) -> list[ModelDescriptor]:
    per_metric = catalog.rankings.get(task_type, {})
    available = {mid for ids in per_metric.values() for mid in ids}
    if not available:
        raise NoModelsAvailable(f"no ranked models for task type {task_type!r}")
    target = min(policy.k, len(available))
    chosen: list[str] = []
    taken: set[str] = set()
    cursors = {m: 0 for m in policy.metric_order}
    # a full sweep over the metrics without a new pick means every list is exhausted
    while len(chosen) < target:
        progressed = False
        for metric in policy.metric_order:
            if len(chosen) >= target:
                break
            ranked = per_metric.get(metric, [])
            i = cursors[metric]
            while i < len(ranked) and ranked[i] in taken:
                i += 1
            if i < len(ranked):
                chosen.append(ranked[i])
                taken.add(ranked[i])
                i += 1
                progressed = True
            cursors[metric] = i
        if not progressed:
            break
    return [catalog.models[mid] for mid in chosen]


# -- task-type confirmation ------------------------------------------------------

_TYPE_RE = re.compile(r"TYPE:\s*([A-Za-z0-9][\w\-]*)")


def _describe(catalog: RankedCatalog, per_type: int = 2) -> str:
    lines = []
    for tt in catalog.task_types():
        ranked = catalog.rankings[tt].get("downloads") or next(iter(catalog.rankings[tt].values()), [])
        tops = [catalog.models[m] for m in ranked[:per_type]]
        desc = "; ".join(f"{m.model_id}: {m.description or 'no description'}" for m in tops)
        lines.append(f"- {tt}: {desc}")
    return "\n".join(lines)


def assign_task_type(
    subtask: Subtask,
    catalog: RankedCatalog,
    llm: LlmProfile,
    vocabulary,
    template: str | None = None,
) -> str:
    """Ask the LLM, given model descriptions, to confirm or remap a subtask's type."""
    template = template or prompts.load_template("assign")
    args = ", ".join(f"{k}={v.kind}:{v.value}" for k, v in sorted(subtask.args.items())) or "(none)"
    reply = complete(llm, [user(prompts.fill(
        template, task_type=subtask.task_type, args=args, descriptions=_describe(catalog)
    ))])
    m = _TYPE_RE.search(reply)
    if not m:
        log.warning("subtask %d: unparsable type assignment %r; keeping %s", subtask.id, reply[:80], subtask.task_type)
        return subtask.task_type
    chosen = m.group(1)
    if chosen not in vocabulary:
        raise VocabularyViolation(f"subtask {subtask.id}: LLM remapped to unknown type {chosen!r}")
    return chosen


# -- hub sync ------------------------------------------------------------------

_HUB_SORT = {"downloads": "downloads", "likes": "likes", "trending": "trending"}


def _fetch(hub: str, task_type: str, sort: str, limit: int, timeout: float) -> list[dict]:
    url = hub.rstrip("/") + "/api/models"
    resp = requests.get(url, params={"pipeline_tag": task_type, "sort": sort, "limit": limit}, timeout=timeout)
    resp.raise_for_status()
    data = resp.json()
    if not isinstance(data, list):
        raise ValueError(f"expected a JSON array from {url}")
    return data


def sync_catalog(
    hub_endpoint: str,
    task_types,
    snapshot_path: str | None = None,
    *,
    limit: int = 10,
    timeout: float = 10.0,
    invoke_base: str | None = None,
) -> RankedCatalog:
    """Pull download/like/trending rankings per task type and persist a snapshot.

    On network failure the last snapshot is returned with ``stale=True``; with
    no snapshot to fall back on, Unavailable is raised.
    """
    models: dict[str, ModelDescriptor] = {}
    rankings: dict[str, dict[str, list[str]]] = {}
    base = (invoke_base or hub_endpoint).rstrip("/")
    try:
        for tt in sorted(task_types):
            rankings[tt] = {}
            seen_rows: dict[str, dict] = {}
            for metric in METRICS:
                rows = _fetch(hub_endpoint, tt, _HUB_SORT[metric], limit, timeout)
                ids = []
                for row in rows:
                    mid = row["id"]
                    if row.get("pipeline_tag", tt) != tt or mid in ids:
                        continue
                    ids.append(mid)
                    seen_rows.setdefault(mid, row)
                rankings[tt][metric] = ids
            trending = rankings[tt]["trending"]
            for mid, row in seen_rows.items():
                models[mid] = ModelDescriptor(
                    model_id=mid,
                    task_type=tt,
                    description=row.get("description") or "",
                    downloads=int(row.get("downloads") or 0),
                    likes=int(row.get("likes") or 0),
                    trending_rank=trending.index(mid) + 1 if mid in trending else None,
                    endpoint=f"{base}/models/{mid}",
                )
    except (requests.RequestException, ValueError, KeyError) as exc:
        if snapshot_path and os.path.exists(snapshot_path):
            log.warning("hub %s unreachable (%s); using stale snapshot %s", hub_endpoint, exc, snapshot_path)
            cat = RankedCatalog.load(snapshot_path)
            cat.stale = True
            return cat
        raise Unavailable(f"hub {hub_endpoint} unreachable and no snapshot: {exc}") from exc
    cat = RankedCatalog(
        models, rankings, synced_at=_dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"), hub=hub_endpoint
    )
    if snapshot_path:
        cat.save(snapshot_path)
    return cat
