"""Command-line entry points: ``esp run | eval | sync | validate``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import load_config
from .core import UserRequest, load_vocabulary
from .errors import ConfigError, EspError, Unavailable
from .evaluator import load_dataset
from .pipeline import Orchestrator, request_from_text
from .registry import sync_catalog

log = logging.getLogger("esp")

EXIT_OK, EXIT_FATAL, EXIT_DEGRADED = 0, 1, 2


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _read_request(args) -> UserRequest:
    if args.request_file:
        with open(args.request_file, encoding="utf-8") as fh:
            raw = fh.read()
        try:
            return UserRequest.from_dict(json.loads(raw))
        except (ValueError, KeyError, TypeError):
            return request_from_text(raw.strip())
    if not args.request:
        raise EspError("give a request as an argument or via --request-file")
    return request_from_text(args.request)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    orch = Orchestrator(cfg, mock=args.mock, seed=args.seed)
    outcome = orch.run(_read_request(args))
    sys.stdout.write(_dump(outcome.response.to_dict()))
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            fh.write(_dump({"plan": outcome.plan.to_dict(), "trace": outcome.trace.to_dict(outcome.decisions)}))
    if outcome.response.failed or outcome.response.skipped or outcome.response.degraded:
        return EXIT_DEGRADED
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    dataset = load_dataset(args.dataset)
    for d in dataset.diagnostics:
        log.error("dataset: %s", d)
    orch = Orchestrator(cfg, mock=args.mock, seed=args.seed)
    report, scores = orch.evaluate(dataset, planner_only=args.planner_only)
    table = report.table()
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
        with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as fh:
            fh.write(table)
        with open(os.path.join(args.out, "records.jsonl"), "w", encoding="utf-8") as fh:
            for s in scores:
                fh.write(json.dumps({"id": s.id, "category": s.category, "metrics": s.metrics,
                                     "judge_failed": s.judge_failed, "error": s.error}, sort_keys=True) + "\n")
    sys.stdout.write(table)
    return EXIT_FATAL if dataset.diagnostics else EXIT_OK


def cmd_sync(args) -> int:
    hub, snapshot, vocab_path = args.hub, args.snapshot, None
    if args.config:
        cfg = load_config(args.config)
        hub = hub or cfg.hub
        snapshot = snapshot or cfg.catalog
        vocab_path = cfg.vocabulary
    if not hub or not snapshot:
        raise EspError("sync needs --hub and --snapshot (or a config providing them)")
    types = args.task_types.split(",") if args.task_types else sorted(load_vocabulary(vocab_path))
    try:
        catalog = sync_catalog(hub, types, snapshot, limit=args.limit)
    except Unavailable as exc:
        log.error("%s", exc)
        return EXIT_FATAL
    if catalog.stale:
        log.warning("hub unreachable; kept stale snapshot from %s", catalog.synced_at or "unknown time")
    for tt in catalog.task_types():
        n = len({m for ids in catalog.rankings[tt].values() for m in ids})
        print(f"{tt}\t{n}")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    Orchestrator(cfg, mock=args.mock, seed=args.seed)
    print(f"{cfg.path}: ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON run configuration")
    common.add_argument("--mock", action="store_true", help="use scripted LLMs and in-process fixture models")
    common.add_argument("--seed", type=int, default=0, help="seed for fixture latency jitter")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="esp", description="multi-model subtask orchestration")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="answer one request")
    run.add_argument("request", nargs="?")
    run.add_argument("--request-file")
    run.add_argument("--trace", help="write the execution trace and decisions as JSON")
    run.set_defaults(func=cmd_run, needs_config=True)

    ev = sub.add_parser("eval", parents=[common], help="score plans against a gold dataset")
    ev.add_argument("dataset", help="JSONL dataset or *.manifest.json")
    ev.add_argument("--out", help="directory for report.json / report.txt / records.jsonl")
    ev.add_argument("--planner-only", action="store_true", help="skip model execution")
    ev.set_defaults(func=cmd_eval, needs_config=True)

    sy = sub.add_parser("sync", parents=[common], help="refresh the model catalog snapshot")
    sy.add_argument("--hub")
    sy.add_argument("--task-types", help="comma-separated; default is the whole vocabulary")
    sy.add_argument("--snapshot")
    sy.add_argument("--limit", type=int, default=10)
    sy.set_defaults(func=cmd_sync, needs_config=False)

    va = sub.add_parser("validate", parents=[common], help="check a config file")
    va.set_defaults(func=cmd_validate, needs_config=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.needs_config and not args.config:
        log.error("--config is required")
        return EXIT_FATAL
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_FATAL
    except EspError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
