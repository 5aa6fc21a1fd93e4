"""Run configuration: one TOML or JSON document.

Relative paths inside the document resolve against the document's directory.
Every problem is reported with its field path before anything touches the
network.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .integrator import EMBEDDING_MODES
from .registry import METRICS

LLM_ROLES = ("planner", "arbiter", "responder", "judge", "assigner")
PROMPT_KEYS = ("planner", "repair", "arbitration", "response", "judge", "assign", "demonstrations")


@dataclass
class LlmSettings:
    name: str
    endpoint: str = ""
    temperature: float = 0.0
    max_tokens: int = 1024
    timeout_ms: int = 60_000
    retries: int = 3
    backoff_ms: int = 500
    rate_limit: float | None = None
    api_key_env: str | None = None
    mock_script: str | None = None


@dataclass
class Config:
    path: str
    llm: dict[str, LlmSettings]
    catalog: str | None = None
    hub: str = "https://huggingface.co"
    vocabulary: str | None = None
    k: int = 3
    metric_order: tuple[str, ...] = METRICS
    parallelism: int = 8
    timeout_ms: int = 60_000
    embedding_mode: str = "deterministic-hash-tf"
    embedding_dimension: int = 256
    embedding_endpoint: str = ""
    max_repair_rounds: int = 2
    eval_workers: int = 4
    prompts: dict[str, str] = field(default_factory=dict)
    mock_llm_script: str | None = None
    mock_models: str | None = None


def _read(path: str) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read()
    if path.endswith(".toml"):
        return tomllib.loads(raw.decode("utf-8"))
    return json.loads(raw)


def load_config(path: str) -> Config:
    if not os.path.exists(path):
        raise ConfigError([f"config file not found: {path}"])
    try:
        doc = _read(path)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError([f"{path}: cannot parse: {exc}"]) from exc
    base = os.path.dirname(os.path.abspath(path))
    problems: list[str] = []

    def rel(p: Any, where: str, must_exist: bool = True) -> str | None:
        if p is None:
            return None
        if not isinstance(p, str):
            problems.append(f"{where}: expected a path string")
            return None
        full = p if os.path.isabs(p) else os.path.join(base, p)
        if must_exist and not os.path.exists(full):
            problems.append(f"{where}: file not found: {full}")
        return full

    def get(section: dict, key: str, typ, default, where: str, check=None):
        if key not in section:
            return default
        val = section[key]
        if typ is float and isinstance(val, int) and not isinstance(val, bool):
            val = float(val)
        if not isinstance(val, typ) or isinstance(val, bool) and typ is not bool:
            problems.append(f"{where}.{key}: expected {typ.__name__}, got {type(val).__name__}")
            return default
        if check and not check(val):
            problems.append(f"{where}.{key}: invalid value {val!r}")
            return default
        return val

    def section(name: str) -> dict:
        s = doc.get(name, {})
        if not isinstance(s, dict):
            problems.append(f"{name}: expected a table")
            return {}
        return s

    llm_doc = section("llm")
    shared = llm_doc.get("default", {})
    llm: dict[str, LlmSettings] = {}
    for role in LLM_ROLES:
        if role not in llm_doc and not (shared and role != "assigner"):
            continue
        merged = {**shared, **llm_doc.get(role, {})}
        where = f"llm.{role}"
        unknown = set(merged) - set(LlmSettings.__dataclass_fields__)
        for key in sorted(unknown):
            problems.append(f"{where}.{key}: unknown field")
        name = get(merged, "name", str, None, where)
        if not name:
            problems.append(f"{where}.name: required")
            continue
        llm[role] = LlmSettings(
            name=name,
            endpoint=get(merged, "endpoint", str, "", where),
            temperature=get(merged, "temperature", float, 0.0, where, lambda v: v >= 0),
            max_tokens=get(merged, "max_tokens", int, 1024, where, lambda v: v > 0),
            timeout_ms=get(merged, "timeout_ms", int, 60_000, where, lambda v: v > 0),
            retries=get(merged, "retries", int, 3, where, lambda v: v >= 0),
            backoff_ms=get(merged, "backoff_ms", int, 500, where, lambda v: v >= 0),
            rate_limit=get(merged, "rate_limit", float, None, where, lambda v: v > 0),
            api_key_env=get(merged, "api_key_env", str, None, where),
            mock_script=rel(merged.get("mock_script"), f"{where}.mock_script"),
        )
    for role in ("planner", "arbiter", "responder"):
        if role not in llm:
            problems.append(f"llm.{role}: required (or provide llm.default)")

    sel = section("selection")
    exe = section("execution")
    emb = section("embedding")
    pln = section("planner")
    ev = section("eval")
    mock = section("mock")
    prm = section("prompts")
    metric_order = get(sel, "metric_order", list, list(METRICS), "selection")
    bad = [m for m in metric_order if m not in METRICS]
    if bad or not metric_order:
        problems.append(f"selection.metric_order: must be a nonempty subset of {list(METRICS)}, got {metric_order}")
    prompts_map = {}
    for key, val in prm.items():
        if key not in PROMPT_KEYS:
            problems.append(f"prompts.{key}: unknown prompt")
            continue
        prompts_map[key] = rel(val, f"prompts.{key}")

    cfg = Config(
        path=os.path.abspath(path),
        llm=llm,
        catalog=rel(doc.get("catalog"), "catalog", must_exist=False),
        hub=get(doc, "hub", str, "https://huggingface.co", "<root>"),
        vocabulary=rel(doc.get("vocabulary"), "vocabulary"),
        k=get(sel, "k", int, 3, "selection", lambda v: v >= 1),
        metric_order=tuple(metric_order),
        parallelism=get(exe, "parallelism", int, 8, "execution", lambda v: v >= 1),
        timeout_ms=get(exe, "timeout_ms", int, 60_000, "execution", lambda v: v > 0),
        embedding_mode=get(emb, "mode", str, "deterministic-hash-tf", "embedding", lambda v: v in EMBEDDING_MODES),
        embedding_dimension=get(emb, "dimension", int, 256, "embedding", lambda v: v > 0),
        embedding_endpoint=get(emb, "endpoint", str, "", "embedding"),
        max_repair_rounds=get(pln, "max_repair_rounds", int, 2, "planner", lambda v: v >= 0),
        eval_workers=get(ev, "workers", int, 4, "eval", lambda v: v >= 1),
        prompts=prompts_map,
        mock_llm_script=rel(mock.get("llm_script"), "mock.llm_script"),
        mock_models=rel(mock.get("models"), "mock.models"),
    )
    if cfg.embedding_mode == "remote-sentence-embedding" and not cfg.embedding_endpoint:
        problems.append("embedding.endpoint: required for remote-sentence-embedding mode")
    if problems:
        raise ConfigError(problems)
    return cfg
