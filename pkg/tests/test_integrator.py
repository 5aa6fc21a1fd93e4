import hashlib
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from esp.core import CandidateResult, Subtask
from esp.errors import DegenerateEmbedding
from esp.integrator import (
    EmbeddingProvider,
    canonical_text,
    embed,
    hash_tf_vector,
    integrate,
    medoid_select,
    parse_choice,
    render_matrix,
    safe_similarity_matrix,
    similarity_matrix,
)
from esp.llm import LlmProfile, MockBackend, Unreachable

HASH = EmbeddingProvider(dimension=64)
SUB = Subtask(0, "image-to-text", {})


def bucket(tok, dim):
    return int(hashlib.sha256(tok.encode()).hexdigest()[:16], 16) % dim


def rowsum_argmax(M):
    """Brute force: total similarity to the others, first maximum wins."""
    n = len(M)
    sums = [sum(M[i][j] for j in range(n) if j != i) for i in range(n)]
    return sums.index(max(sums))


def cands(*texts):
    return [CandidateResult(0, f"m{i}", t, t, 1.0) for i, t in enumerate(texts)]


def llm_replying(*replies):
    it = iter(replies)
    return LlmProfile(name="arb", backend=MockBackend(responder=lambda m: next(it)))


# -- canonical text --------------------------------------------------------------


def test_canonical_classification_sorted_by_prob():
    payload = [{"label": "dog", "score": 0.1}, {"label": "cat", "score": 0.85}, {"label": "fox", "score": 0.05}]
    assert canonical_text(payload) == "label:cat p=0.8500; label:dog p=0.1000; label:fox p=0.0500"


def test_canonical_detection_sorted_by_confidence():
    payload = [
        {"label": "cup", "score": 0.5, "box": {"xmin": 1, "ymin": 2, "xmax": 3, "ymax": 4}},
        {"label": "person", "score": 0.9, "box": [10, 20, 30.0, 40]},
    ]
    assert canonical_text(payload) == "person@[10,20,30,40]; cup@[1,2,3,4]"


def test_canonical_text_passthrough():
    assert canonical_text("a cat") == "a cat"
    assert canonical_text({"generated_text": "a dog"}) == "a dog"
    assert canonical_text([{"generated_text": "a cow"}]) == "a cow"
    assert canonical_text({"b": 1, "a": 2}) == '{"a":2,"b":1}'


# -- embeddings ----------------------------------------------------------------


def test_repetition_collapses():
    a, b = embed(HASH, ["a a", "a"])
    assert np.array_equal(a, b)


def test_hash_tf_pure():
    a, b = embed(HASH, ["same text here", "same text here"])
    assert np.array_equal(a, b)
    assert a.shape == (64,)
    assert math.isclose(np.linalg.norm(a), 1.0)


def test_bucket_is_first_eight_bytes_mod_dim():
    vec = hash_tf_vector("Hello", 64)
    assert vec[bucket("hello", 64)] == 1.0


def test_disjoint_tokens_are_orthogonal():
    buckets = {t: bucket(t, 64) for t in ("red", "cat", "blue", "dog")}
    assert not {buckets["red"], buckets["cat"]} & {buckets["blue"], buckets["dog"]}  # verified collision-free
    u, v = embed(HASH, ["red cat", "blue dog"])
    assert similarity_matrix([u, v])[0, 1] == 0.0


def test_embed_rejects_empty():
    with pytest.raises(ValueError):
        embed(HASH, [])
    with pytest.raises(ValueError):
        embed(HASH, ["ok", ""])


# -- similarity ----------------------------------------------------------------


def test_orthogonal():
    assert similarity_matrix([np.array([1.0, 0]), np.array([0, 1.0])]).tolist() == [[1, 0], [0, 1]]


def test_same_direction():
    M = similarity_matrix([np.array([3.0, 4]), np.array([3.0, 4])])
    assert np.allclose(M, 1.0, atol=1e-12)


def test_forty_five_degrees():
    M = similarity_matrix([np.array([1.0, 1]), np.array([1.0, 0])])
    # dot = 1, norms sqrt(2) and 1
    assert M[0, 1] == pytest.approx(1 / math.sqrt(2), abs=1e-12)
    assert M[0, 1] == pytest.approx(0.70711, abs=1e-5)


def test_zero_norm():
    with pytest.raises(DegenerateEmbedding) as exc:
        similarity_matrix([np.array([1.0, 0]), np.zeros(2)])
    assert exc.value.indices == [1]


def test_safe_matrix_flags_degenerate():
    M, bad = safe_similarity_matrix([np.array([1.0, 0]), np.zeros(2), np.array([1.0, 0])])
    assert bad == [1]
    assert M.tolist() == [[1, 0, 1], [0, 1, 0], [1, 0, 1]]


vec_sets = st.integers(1, 5).flatmap(
    lambda n: st.integers(1, 16).flatmap(
        lambda d: st.lists(
            arrays(np.float64, d, elements=st.floats(-100, 100, allow_nan=False)).filter(
                lambda v: np.linalg.norm(v) > 1e-6
            ),
            min_size=n,
            max_size=n,
        )
    )
)


@settings(max_examples=300)
@given(vec_sets)
def test_matrix_contract(vectors):
    M = similarity_matrix(vectors)
    n = len(vectors)
    assert M.shape == (n, n)
    assert np.array_equal(M, M.T)
    assert np.all(np.abs(np.diag(M) - 1) <= 1e-9)
    assert np.all(M <= 1 + 1e-9) and np.all(M >= -1 - 1e-9)


@settings(max_examples=200)
@given(vec_sets, st.floats(1e-3, 1e3))
def test_scale_invariance(vectors, c):
    M1 = similarity_matrix(vectors)
    M2 = similarity_matrix([c * v for v in vectors])
    assert np.allclose(M1, M2, atol=1e-9)
    assert medoid_select(M1) == medoid_select(M2) or np.isclose(
        sorted(M1.sum(1) - 1)[-1], sorted(M1.sum(1) - 1)[-2]
    )


# -- medoid --------------------------------------------------------------------


def test_medoid_singleton():
    assert medoid_select([[1.0]]) == 0


def test_medoid_rowsums():
    # off-diagonals a, b, c solve a+b=1.2, a+c=1.9, b+c=1.3
    M = [[1, 0.9, 0.3], [0.9, 1, 1.0], [0.3, 1.0, 1]]
    assert rowsum_argmax(M) == 1
    assert medoid_select(M) == 1


def test_medoid_tie_lowest_index():
    M = [[1, 0.5, 0.5], [0.5, 1, 0.5], [0.5, 0.5, 1]]
    assert medoid_select(M) == 0
    M = [[1, 0.2, 0.2], [0.2, 1, 0.9], [0.2, 0.9, 1]]
    assert medoid_select(M) == 1


def _random_matrix(rng, n):
    V = [np.array([rng.gauss(0, 1) for _ in range(4)]) for _ in range(n)]
    return similarity_matrix(V)


def test_permutation_equivariance():
    rng = random.Random(3)
    checked = 0
    while checked < 200:
        n = rng.randint(2, 5)
        M = _random_matrix(rng, n)
        sums = sorted(M.sum(1) - 1)
        if sums[-1] - sums[-2] < 1e-9:
            continue  # strict medoids only
        perm = list(range(n))
        rng.shuffle(perm)
        P = M[np.ix_(perm, perm)]
        assert perm[medoid_select(P)] == medoid_select(M) == rowsum_argmax(M.tolist())
        checked += 1


# -- integrate -----------------------------------------------------------------


def test_singleton_needs_no_llm():
    d = integrate(SUB, cands("only"), HASH, None)
    assert (d.method, d.chosen_index) == ("singleton", 0)


def test_llm_arbitration():
    d = integrate(SUB, cands("a cat", "a dog", "a cow"), HASH, llm_replying("CHOICE: 2 - most consistent with others"))
    assert (d.method, d.chosen_index) == ("llm-arbitration", 2)
    assert "most consistent" in d.rationale
    assert len(d.similarity) == 3


def test_prompt_has_candidates_and_matrix():
    seen = []
    llm = LlmProfile(name="a", backend=MockBackend(responder=lambda m: seen.append(m) or "CHOICE: 0"))
    integrate(SUB, cands("a cat", "a dog"), HASH, llm)
    text = seen[0][-1].content
    assert "[0] (m0) a cat" in text and "[1] (m1) a dog" in text
    assert "1.000" in text


def _medoid_candidates():
    # the outlier shares "brown" with candidate 1 only, which makes 1 the strict medoid
    texts = ("a dog on grass", "a brown dog on grass", "brown stock prices fell")
    M = similarity_matrix(embed(HASH, texts))
    sums = sorted(M.sum(1) - 1)
    assert sums[-1] > sums[-2]
    assert rowsum_argmax(M.tolist()) == 1
    return texts, 1


def test_garbage_twice_falls_back_to_medoid():
    texts, expected = _medoid_candidates()
    llm = llm_replying("the second one seems fine", "the second one seems fine")
    d = integrate(SUB, cands(*texts), HASH, llm)
    assert d.method == "medoid-fallback"
    assert d.chosen_index == expected
    assert len(llm.backend.calls) == 2


def test_reask_recovers():
    d = integrate(SUB, cands("a", "b"), HASH, llm_replying("hmm", "CHOICE: 1"))
    assert (d.method, d.chosen_index) == ("llm-arbitration", 1)


def test_out_of_range_choice():
    texts, expected = _medoid_candidates()
    d = integrate(SUB, cands(*texts), HASH, llm_replying("CHOICE: 7", "CHOICE: 3"))
    assert (d.method, d.chosen_index) == ("medoid-fallback", expected)


def test_gateway_failure_falls_back():
    texts, expected = _medoid_candidates()
    d = integrate(SUB, cands(*texts), HASH, LlmProfile(name="down", backend=Unreachable()))
    assert (d.method, d.chosen_index) == ("medoid-fallback", expected)


def test_remote_embedding_unavailable_uses_hash():
    texts, expected = _medoid_candidates()
    remote = EmbeddingProvider("sbert", 64, "remote-sentence-embedding", "http://127.0.0.1:9/embed", timeout_s=0.5)
    d = integrate(SUB, cands(*texts), remote, None)
    assert d.chosen_index == expected


def test_parse_choice():
    assert parse_choice("CHOICE: 1 because", 3) == 1
    assert parse_choice("choice 1", 3) is None
    assert parse_choice("CHOICE: 3", 3) is None


def test_render_matrix_three_decimals():
    assert "0.707" in render_matrix(np.array([[1, 0.70710678], [0.70710678, 1]]))


@settings(max_examples=100)
@given(st.lists(st.text(alphabet="abcde ", min_size=1).filter(str.strip), min_size=2, max_size=5))
def test_output_identity(texts):
    """The chosen text is always one of the inputs, verbatim."""
    cs = cands(*texts)
    d = integrate(SUB, cs, HASH, llm_replying("no", "no"))
    assert cs[d.chosen_index].canonical_text in texts
