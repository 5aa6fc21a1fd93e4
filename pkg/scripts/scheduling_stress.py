#!/usr/bin/env python3
"""Makespan of random plan DAGs against the HTTP fixture server at several parallelism bounds.

Compares the measured makespan with the critical-path lower bound
(longest dependency chain, each link costing its slowest candidate).

    python scripts/scheduling_stress.py --plans 30 --parallelism 1 2 4 8
"""

import argparse
import random
import statistics

from esp.core import ModelDescriptor, ResourceRef, Subtask, TaskPlan, topological_order
from esp.executor import ExecutionLimits, HttpModelClient, run_plan
from esp.fixtures import FixtureModels, FixtureModelServer, ModelBehavior
from esp.integrator import EmbeddingProvider, integrate

TYPES = ["image-to-text", "object-detection", "translation", "summarization", "text-to-speech"]


def random_plan(rng, n):
    subs = []
    for v in range(n):
        deps = frozenset(u for u in range(v) if rng.random() < 0.3)
        args = {f"in{d}": ResourceRef("subtask-output", f"<GENERATED>-{d}", d) for d in sorted(deps)}
        subs.append(Subtask(v, rng.choice(TYPES), args or {"text": ResourceRef("text", "seed")}, deps))
    return TaskPlan("stress", tuple(subs))


def critical_path_ms(plan, trace):
    cost = {sid: max(r.finished - r.started for r in recs) * 1000 for sid, recs in trace.invocations.items()}
    finish, by_id = {}, plan.by_id()
    for layer in topological_order(plan):
        for sid in layer:
            finish[sid] = cost[sid] + max((finish[d] for d in by_id[sid].deps), default=0.0)
    return max(finish.values())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--plans", type=int, default=20)
    ap.add_argument("--nodes", type=int, default=10)
    ap.add_argument("--k", type=int, default=3)
    ap.add_argument("--parallelism", type=int, nargs="+", default=[1, 2, 4, 8])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    provider = EmbeddingProvider(dimension=64)
    print(f"{'par':>4} {'makespan ms':>12} {'crit path ms':>13} {'ratio':>6} {'max in flight':>14}")
    for par in args.parallelism:
        rng = random.Random(args.seed)
        spans, crits, peaks = [], [], []
        for i in range(args.plans):
            plan = random_plan(rng, args.nodes)
            fixtures = FixtureModels(default=ModelBehavior(delay_ms=(20.0, 80.0)), seed=i)
            with FixtureModelServer(fixtures) as srv:
                def select(s):
                    return [ModelDescriptor(f"m{j}", s.task_type, endpoint=srv.endpoint(f"m{j}")) for j in range(args.k)]

                trace, _ = run_plan(plan, select, lambda s, ok, a: integrate(s, ok, provider, None),
                                    ExecutionLimits(par, 10_000), HttpModelClient())
            spans.append((trace.finished - trace.started) * 1000)
            crits.append(critical_path_ms(plan, trace))
            peaks.append(fixtures.max_in_flight)
        m, c = statistics.fmean(spans), statistics.fmean(crits)
        print(f"{par:>4} {m:>12.1f} {c:>13.1f} {m / c:>6.2f} {max(peaks):>14}")


if __name__ == "__main__":
    main()
