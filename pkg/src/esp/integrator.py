"""Per-subtask result selection.

Candidate outputs are rendered to canonical text, embedded, and compared
through a cosine-similarity matrix. The matrix and the candidates go to an
LLM arbiter which must answer ``CHOICE: <index>``. If it cannot, the medoid
(the candidate with the greatest total similarity to the others) wins.
The chosen output is always one of the inputs, never a blend.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
import requests

from . import prompts
from .core import CandidateResult, SelectionDecision, Subtask
from .errors import DegenerateEmbedding, EspError, Unavailable
from .llm import LlmProfile, assistant, complete, user

log = logging.getLogger(__name__)

EMBEDDING_MODES = ("remote-sentence-embedding", "deterministic-hash-tf")
ARBITRATION_SLOTS = ("subtask", "candidates", "matrix")


# -- canonical text --------------------------------------------------------------


def _num(x) -> str:
    if isinstance(x, float) and x.is_integer():
        x = int(x)
    return str(x)


def canonical_text(payload: Any) -> str:
    """Deterministic text rendering of a model output.

    Classification lists become ``label:<l> p=<prob>`` entries by descending
    probability; detection lists become ``label@[x1,y1,x2,y2]`` by descending
    confidence; text passes through.
    """
    if isinstance(payload, str):
        return payload
    if isinstance(payload, dict):
        for key in ("generated_text", "text", "translation_text", "summary_text", "answer"):
            if isinstance(payload.get(key), str):
                return payload[key]
    if isinstance(payload, list) and payload and all(isinstance(p, dict) for p in payload):
        if all("box" in p for p in payload):
            # stable sort keeps hub order among equal confidences
            ranked = sorted(payload, key=lambda p: -float(p.get("score", 0.0)))
            parts = []
            for p in ranked:
                box = p["box"]
                if isinstance(box, dict):
                    box = [box.get(k) for k in ("xmin", "ymin", "xmax", "ymax")]
                parts.append(f"{p.get('label', '?')}@[{','.join(_num(v) for v in box)}]")
            return "; ".join(parts)
        if all("label" in p and "score" in p for p in payload):
            ranked = sorted(payload, key=lambda p: -float(p["score"]))
            return "; ".join(f"label:{p['label']} p={float(p['score']):.4f}" for p in ranked)
        if len(payload) == 1:
            return canonical_text(payload[0])
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


# -- embeddings ----------------------------------------------------------------


@dataclass(frozen=True)
class EmbeddingProvider:
    name: str = "hash-tf"
    dimension: int = 256
    mode: str = "deterministic-hash-tf"
    endpoint: str = ""
    timeout_s: float = 30.0

    def __post_init__(self):
        if self.dimension <= 0:
            raise ValueError("dimension must be positive")
        if self.mode not in EMBEDDING_MODES:
            raise ValueError(f"unknown embedding mode {self.mode!r}")


def token_bucket(token: str, dimension: int) -> int:
    digest = hashlib.sha256(token.lower().encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % dimension


def hash_tf_vector(text: str, dimension: int) -> np.ndarray:
    vec = np.zeros(dimension)
    for tok, count in Counter(text.lower().split()).items():
        vec[token_bucket(tok, dimension)] += count
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def embed(provider: EmbeddingProvider, texts: Sequence[str]) -> list[np.ndarray]:
    if not texts or any(not t for t in texts):
        raise ValueError("texts must be a nonempty list of nonempty strings")
    if provider.mode == "deterministic-hash-tf":
        return [hash_tf_vector(t, provider.dimension) for t in texts]
    try:
        resp = requests.post(provider.endpoint, json={"texts": list(texts)}, timeout=provider.timeout_s)
        resp.raise_for_status()
        vectors = resp.json()["vectors"]
    except (requests.RequestException, ValueError, KeyError) as exc:
        raise Unavailable(f"embedding service {provider.endpoint}: {exc}") from exc
    out = [np.asarray(v, dtype=float) for v in vectors]
    if len(out) != len(texts) or any(v.shape != (provider.dimension,) for v in out):
        raise Unavailable(f"embedding service {provider.endpoint} returned malformed vectors")
    return out


# -- similarity ----------------------------------------------------------------


def similarity_matrix(vectors: Sequence[np.ndarray]) -> np.ndarray:
    if len(vectors) < 1:
        raise ValueError("need at least one vector")
    V = np.vstack([np.asarray(v, dtype=float) for v in vectors])
    norms = np.linalg.norm(V, axis=1)
    zero = [i for i, n in enumerate(norms) if n == 0]
    if zero:
        raise DegenerateEmbedding(zero)
    U = V / norms[:, None]
    M = U @ U.T
    M = (M + M.T) / 2
    np.fill_diagonal(M, 1.0)
    return np.clip(M, -1.0, 1.0)


def safe_similarity_matrix(vectors: Sequence[np.ndarray]) -> tuple[np.ndarray, list[int]]:
    """Like :func:`similarity_matrix`, but zero-norm candidates get a zero row
    (unit diagonal kept) and are reported instead of raising."""
    try:
        return similarity_matrix(vectors), []
    except DegenerateEmbedding as exc:
        bad = exc.indices
    good = [i for i in range(len(vectors)) if i not in bad]
    M = np.eye(len(vectors))
    if good:
        sub = similarity_matrix([vectors[i] for i in good])
        M[np.ix_(good, good)] = sub
    return M, bad


def medoid_select(M) -> int:
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    if n == 1:
        return 0
    best, best_total = 0, None
    for i in range(n):
        total = sum(float(M[i, j]) for j in range(n) if j != i)
        # strict > keeps the earliest index on ties
        if best_total is None or total > best_total:
            best, best_total = i, total
    return best


# -- arbitration ---------------------------------------------------------------

_CHOICE_RE = re.compile(r"CHOICE:\s*(-?\d+)")
REASK = "Your answer must start with CHOICE: <index>, where <index> is one of the candidate numbers shown."


def render_matrix(M: np.ndarray) -> str:
    n = M.shape[0]
    header = "     " + " ".join(f"{j:>6d}" for j in range(n))
    rows = [f"{i:>4d} " + " ".join(f"{M[i, j]:6.3f}" for j in range(n)) for i in range(n)]
    return "\n".join([header] + rows)


def render_subtask(subtask: Subtask, resolved_args: dict | None = None) -> str:
    if resolved_args is not None:
        args = ", ".join(f"{k}={v}" for k, v in sorted(resolved_args.items()))
    else:
        args = ", ".join(f"{k}={r.value}" for k, r in sorted(subtask.args.items()))
    return f"#{subtask.id} {subtask.task_type}({args})"


def parse_choice(reply: str, n: int) -> int | None:
    m = _CHOICE_RE.search(reply)
    if not m:
        return None
    idx = int(m.group(1))
    return idx if 0 <= idx < n else None


def integrate(
    subtask: Subtask,
    ok_candidates: Sequence[CandidateResult],
    provider: EmbeddingProvider,
    llm: LlmProfile | None,
    template: str | None = None,
    resolved_args: dict | None = None,
) -> SelectionDecision:
    n = len(ok_candidates)
    if n == 0:
        raise ValueError("integrate needs at least one ok candidate")
    if n == 1:
        return SelectionDecision(subtask.id, ((1.0,),), 0, "singleton", "only one candidate succeeded")

    try:
        vectors = embed(provider, [c.canonical_text for c in ok_candidates])
    except Unavailable as exc:
        log.warning("subtask %d: %s; falling back to hash-tf embeddings", subtask.id, exc)
        vectors = embed(EmbeddingProvider(dimension=provider.dimension), [c.canonical_text for c in ok_candidates])
    M, flagged = safe_similarity_matrix(vectors)
    sim = tuple(tuple(float(x) for x in row) for row in M)

    def fallback(why: str) -> SelectionDecision:
        idx = medoid_select(M)
        return SelectionDecision(
            subtask.id, sim, idx, "medoid-fallback", f"{why}; medoid is candidate {idx}", tuple(flagged)
        )

    if llm is None:
        return fallback("no arbiter configured")
    template = template or prompts.load_template("arbitration")
    listing = "\n".join(f"[{i}] ({c.model_id}) {c.canonical_text}" for i, c in enumerate(ok_candidates))
    messages = [user(prompts.fill(
        template, subtask=render_subtask(subtask, resolved_args), candidates=listing, matrix=render_matrix(M)
    ))]
    try:
        reply = complete(llm, messages)
        idx = parse_choice(reply, n)
        if idx is None:
            messages = messages + [assistant(reply), user(REASK)]
            reply = complete(llm, messages)
            idx = parse_choice(reply, n)
    except EspError as exc:
        log.warning("subtask %d: arbiter failed (%s)", subtask.id, exc)
        return fallback(f"arbiter unavailable: {exc}")
    if idx is None:
        return fallback("arbiter answer unparsable after re-ask")
    return SelectionDecision(subtask.id, sim, idx, "llm-arbitration", reply.strip(), tuple(flagged))
