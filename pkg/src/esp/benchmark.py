"""Synthetic noisy-ensemble benchmark.

Each trial is one image-captioning subtask answered by three mock models:
two return paraphrases of a gold caption, one returns an unrelated caption.
Positions are shuffled per trial. Accuracy is the share of trials whose
selected output is one of the paraphrases.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .core import ModelDescriptor, ResourceRef, Subtask, TaskPlan
from .executor import ExecutionLimits, run_plan
from .fixtures import FixtureModels, InProcessModelClient, ModelBehavior
from .integrator import EmbeddingProvider, integrate

ADJECTIVES = ["brown", "small", "striped", "sleepy", "wet", "shiny", "old", "red", "fluffy", "young"]
NOUNS = ["dog", "cat", "horse", "bicycle", "boat", "child", "bird", "truck", "cow", "kite"]
VERBS = ["resting", "standing", "waiting", "parked", "lying", "playing", "sitting", "moving"]
PLACES = ["beach", "street", "garden", "kitchen", "field", "harbor", "park", "bridge", "forest", "market"]
PREPS = ["on", "near", "in", "by"]


@dataclass(frozen=True)
class Trial:
    gold: str
    candidates: tuple[str, str, str]
    gold_mask: tuple[bool, bool, bool]


def _content(rng: random.Random, avoid: dict[str, str] | None = None) -> dict[str, str]:
    avoid = avoid or {}
    pick = {}
    for slot, pool in (("adj", ADJECTIVES), ("noun", NOUNS), ("verb", VERBS), ("place", PLACES)):
        pick[slot] = rng.choice([w for w in pool if w != avoid.get(slot)])
    return pick


def _render(c: dict[str, str], prep: str) -> str:
    return f"a {c['adj']} {c['noun']} {c['verb']} {prep} the {c['place']}"


def paraphrase(c: dict[str, str], rng: random.Random) -> str:
    """Surface rewording that keeps at least three of the four content words.

    Outputs carry no punctuation, since hash-TF tokens are whitespace-delimited.
    """
    style = rng.randrange(4)
    if style == 0:
        return f"{c['noun']} {c['verb']} {rng.choice(PREPS)} a {c['place']} and it is {c['adj']}"
    if style == 1:
        return f"the {c['noun']} is {c['verb']} {rng.choice(PREPS)} the {c['place']}"
    if style == 2:
        return f"photo of a {c['adj']} {c['noun']} at the {c['place']}"
    return f"there is a {c['adj']} {c['noun']} {c['verb']} {rng.choice(PREPS)} the {c['place']} here"


def make_trials(n: int, seed: int = 0) -> list[Trial]:
    rng = random.Random(seed)
    trials = []
    for _ in range(n):
        gold = _content(rng)
        gold_text = _render(gold, rng.choice(PREPS))
        # the distractor differs in every content slot
        other = _render(_content(rng, avoid=gold), rng.choice(PREPS))
        slots = [(paraphrase(gold, rng), True), (paraphrase(gold, rng), True), (other, False)]
        rng.shuffle(slots)
        trials.append(Trial(gold_text, tuple(t for t, _ in slots), tuple(g for _, g in slots)))
    return trials


def _plan(i: int) -> TaskPlan:
    return TaskPlan(f"bench-{i}", (Subtask(0, "image-to-text", {"image": ResourceRef("image-uri", f"/img/{i}.jpg")}),))


@dataclass
class BenchmarkResult:
    trials: int
    medoid_accuracy: float
    pipeline_accuracy: float
    baseline_accuracy: float
    expected_baseline: float = 2 / 3

    def summary(self) -> str:
        return (f"trials={self.trials} medoid={self.medoid_accuracy:.2%} pipeline={self.pipeline_accuracy:.2%} "
                f"single-model={self.baseline_accuracy:.2%} (expected {self.expected_baseline:.2%})")


def run_benchmark(n: int = 1000, seed: int = 0, dimension: int = 256) -> BenchmarkResult:
    provider = EmbeddingProvider(dimension=dimension)
    trials = make_trials(n, seed)
    baseline_rng = random.Random(seed + 1)
    names = ("m0", "m1", "m2")
    medoid_hits = pipeline_hits = baseline_hits = 0
    with_limits = ExecutionLimits(parallelism=3, timeout_ms=5000)
    for i, t in enumerate(trials):
        fixtures = FixtureModels({m: ModelBehavior(text) for m, text in zip(names, t.candidates)})
        models = [ModelDescriptor(m, "image-to-text") for m in names]

        def hook(subtask, ok, resolved_args):
            return integrate(subtask, ok, provider, None)

        trace, decisions = run_plan(_plan(i), lambda s: models, hook, with_limits, InProcessModelClient(fixtures))
        chosen = trace.selected[0].canonical_text
        pipeline_hits += t.gold_mask[t.candidates.index(chosen)]
        medoid_hits += t.gold_mask[decisions[0].chosen_index]
        baseline_hits += t.gold_mask[baseline_rng.randrange(3)]
    return BenchmarkResult(n, medoid_hits / n, pipeline_hits / n, baseline_hits / n)
