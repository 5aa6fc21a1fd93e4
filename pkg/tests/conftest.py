import random

import pytest
from hypothesis import strategies as st

from esp.core import ResourceRef, Subtask, TaskPlan, load_vocabulary

VOCAB = load_vocabulary()
TYPES = sorted(VOCAB)


def chain(types, request_id="r"):
    subs = []
    for i, t in enumerate(types):
        if i == 0:
            args = {"image": ResourceRef("image-uri", "/img/a.png")}
        else:
            args = {"text": ResourceRef("subtask-output", f"<GENERATED>-{i - 1}", i - 1)}
        subs.append(Subtask(i, t, args, frozenset({i - 1}) if i else frozenset()))
    return TaskPlan(request_id, tuple(subs))


def plan_from_edges(n, edges, types=None, request_id="r"):
    """edges are (u, v) pairs meaning v depends on u."""
    deps = {i: set() for i in range(n)}
    for u, v in edges:
        deps[v].add(u)
    types = types or ["image-to-text"] * n
    subs = []
    for i in range(n):
        args = {"image": ResourceRef("image-uri", f"/img/{i}.png")}
        for d in sorted(deps[i]):
            args[f"in{d}"] = ResourceRef("subtask-output", f"<GENERATED>-{d}", d)
        subs.append(Subtask(i, types[i], args, frozenset(deps[i])))
    return TaskPlan(request_id, tuple(subs))


def random_dag(rng: random.Random, n_max=12, p=0.3, types=None):
    n = rng.randint(1, n_max)
    # edges only from lower to higher index, then shuffle labels to avoid id-order bias
    perm = list(range(n))
    rng.shuffle(perm)
    edges = [(perm[u], perm[v]) for v in range(n) for u in range(v) if rng.random() < p]
    tps = [rng.choice(types or TYPES) for _ in range(n)]
    return plan_from_edges(n, edges, tps), edges


@st.composite
def dags(draw, max_n=8):
    n = draw(st.integers(1, max_n))
    perm = draw(st.permutations(list(range(n))))
    edges = [
        (perm[u], perm[v])
        for v in range(n)
        for u in range(v)
        if draw(st.booleans())
    ]
    types = [draw(st.sampled_from(TYPES)) for _ in range(n)]
    return plan_from_edges(n, edges, types)


@pytest.fixture
def vocab():
    return VOCAB
