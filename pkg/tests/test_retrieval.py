import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from valfuse.errors import ArgumentError
from valfuse.metrics import mean_recall
from valfuse.retrieval import (
    DEFAULT_STEPS,
    FusionProblem,
    RetrievalFusion,
    evaluate_weights,
    fuse_matrices,
    fuse_moments,
    nms_moments,
    normalize_to_simplex,
    optimize_retrieval_weights,
    temporal_iou,
)
from valfuse.synth import SynthConfig, gen_retrieval_problem, grid_search_weights, reference_nms
from valfuse.types import EnsembleWeights, MomentCandidate, RetrievalGroundTruth, SimilarityMatrix

from conftest import sim


def M(v, s, e, score=0.5):
    return MomentCandidate(v, s, e, score)


# -- fusion -------------------------------------------------------------------

def test_fuse_single_matrix_identity(rng):
    s = sim(rng.random((4, 5)))
    assert fuse_matrices([s], [1.0]) == s


def test_fuse_linear_combination():
    out = fuse_matrices([sim([[1, 0]]), sim([[0, 1]])], [0.3, 0.7])
    np.testing.assert_allclose(out.scores, [[0.3, 0.7]])


def test_fuse_identical_matrices(rng):
    s = sim(rng.random((3, 3)))
    out = fuse_matrices([s, s, s], [0.2, 0.5, 0.3])
    np.testing.assert_allclose(out.scores, s.scores, rtol=1e-15)


def test_fuse_errors(rng):
    a = sim(rng.random((2, 2)))
    with pytest.raises(ArgumentError):
        fuse_matrices([a, a], [1.0])
    b = SimilarityMatrix(rng.random((2, 2)), ("x", "y"), ("g0", "g1"))
    with pytest.raises(ArgumentError):
        fuse_matrices([a, b], [0.5, 0.5])
    with pytest.raises(ArgumentError):
        EnsembleWeights([0.5, 0.6])
    with pytest.raises(ArgumentError):
        EnsembleWeights([1.5, -0.5])


def test_fuse_preserves_ids():
    a = SimilarityMatrix(np.eye(2), ("qa", "qb"), ("ga", "gb"))
    out = fuse_matrices([a, a], [0.5, 0.5])
    assert out.query_ids == ("qa", "qb") and out.gallery_ids == ("ga", "gb")


@settings(max_examples=40)
@given(st.integers(0, 10_000), st.floats(0, 1))
def test_fuse_is_linear_in_weights(seed, alpha):
    r = np.random.default_rng(seed)
    mats = [sim(r.random((3, 4))) for _ in range(3)]
    w1, w2 = r.dirichlet(np.ones(3)), r.dirichlet(np.ones(3))
    mix = alpha * w1 + (1 - alpha) * w2
    lhs = fuse_matrices(mats, mix / mix.sum()).scores
    rhs = alpha * fuse_matrices(mats, w1).scores + (1 - alpha) * fuse_matrices(mats, w2).scores
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_normalize_to_simplex():
    np.testing.assert_allclose(normalize_to_simplex([2, 6]).weights, [0.25, 0.75])
    np.testing.assert_allclose(normalize_to_simplex([0, 0, 0]).weights, [1 / 3] * 3)


# -- temporal IoU / NMS -------------------------------------------------------

def test_iou_examples():
    assert temporal_iou(M("a", 0, 2), M("a", 1, 3)) == pytest.approx(1 / 3)
    assert temporal_iou(M("a", 1, 4), M("a", 1, 4)) == 1.0
    assert temporal_iou(M("a", 0, 5), M("b", 0, 5)) == 0.0
    assert temporal_iou(M("a", 0, 10), M("a", 0, 7)) == 0.7


@settings(max_examples=100)
@given(st.tuples(st.integers(0, 20), st.integers(1, 10)),
       st.tuples(st.integers(0, 20), st.integers(1, 10)), st.booleans())
def test_iou_symmetric_and_bounded(a, b, same):
    x = M("v", a[0], a[0] + a[1])
    y = M("v" if same else "w", b[0], b[0] + b[1])
    assert temporal_iou(x, y) == temporal_iou(y, x)
    assert 0.0 <= temporal_iou(x, y) <= 1.0
    assert (temporal_iou(x, y) == 1.0) == (same and a == b)


def test_nms_examples():
    out = nms_moments([M("v", 0, 1, 0.8), M("v", 0, 1, 0.9)], 0.7, 100)
    assert [c.score for c in out] == [0.9]
    out = nms_moments([M("v", 0, 1, 0.2), M("v", 10, 11, 0.6)], 0.7, 100)
    assert [c.score for c in out] == [0.6, 0.2]
    assert nms_moments([], 0.7, 100) == []


def test_nms_max_keep_on_disjoint():
    r = np.random.default_rng(0)
    scores = r.permutation(150) / 150
    cands = [M("v", 2 * i, 2 * i + 1, float(s)) for i, s in enumerate(scores)]
    out = nms_moments(cands, 0.7, 100)
    assert len(out) == 100
    assert sorted(c.score for c in out) == sorted(scores)[-100:]
    assert out == reference_nms(cands, 0.7, 100)


def test_nms_threshold_is_inclusive():
    out = nms_moments([M("v", 0, 10, 0.9), M("v", 0, 7, 0.5)], 0.7, 100)
    assert len(out) == 1
    out = nms_moments([M("v", 0, 10, 0.9), M("v", 0, 7, 0.5)], 0.71, 100)
    assert len(out) == 2


def test_nms_tie_break_earlier_start_then_input_order():
    out = nms_moments([M("v", 5, 6, 0.5), M("v", 1, 2, 0.5), M("w", 1, 2, 0.5)], 0.7, 100)
    assert [(c.video_id, c.t_start) for c in out] == [("v", 1), ("w", 1), ("v", 5)]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.05, 1.0), st.integers(1, 30))
def test_nms_properties(seed, thr, max_keep):
    r = np.random.default_rng(seed)
    cands = []
    for _ in range(60):
        s = float(r.integers(0, 40))
        cands.append(M(f"v{r.integers(3)}", s, s + float(r.integers(1, 8)), float(r.integers(0, 10))))
    out = nms_moments(cands, thr, max_keep)
    assert len(out) <= max_keep
    assert all(any(o is c for c in cands) for o in out)
    for i in range(len(out)):
        for j in range(i + 1, len(out)):
            assert temporal_iou(out[i], out[j]) < thr
    assert out == reference_nms(cands, thr, max_keep)


def test_fuse_moments_joins_on_interval():
    a = [M("v", 0, 1, 1.0), M("v", 2, 3, 0.4)]
    b = [M("v", 2, 3, 1.0)]
    out = fuse_moments([a, b], [0.5, 0.5])
    assert [(c.t_start, c.score) for c in out] == [(2, 0.7), (0, 0.5)]


# -- optimization -------------------------------------------------------------

def _perfect_and_reversed(n=20):
    perfect = sim(np.eye(n) + 0.01)
    reversed_ = sim(1 - np.eye(n))
    return FusionProblem((perfect, reversed_), RetrievalGroundTruth.diagonal(n))


def test_evaluate_weights_examples():
    n = 12
    single = FusionProblem((sim(np.eye(n)),), RetrievalGroundTruth.diagonal(n))
    assert evaluate_weights(single, [1.0]) == 1.0
    p = _perfect_and_reversed()
    assert evaluate_weights(p, [1.0, 0.0]) == mean_recall(p.matrices[0], p.gt)
    same = FusionProblem((p.matrices[1], p.matrices[1]), p.gt)
    assert evaluate_weights(same, [0.2, 0.8]) == evaluate_weights(same, [0.9, 0.1])


def test_optimize_single_model():
    p = gen_retrieval_problem(SynthConfig(seed=1, n_queries=30, n_gallery=10, n_models=1,
                                          quality=(0.4,)))
    w, obj = optimize_retrieval_weights(p, steps=5, seed=0)
    assert w.tolist() == [1.0]
    assert obj == mean_recall(p.matrices[0], p.gt)


def test_optimize_default_steps():
    assert DEFAULT_STEPS == 300
    import inspect
    assert inspect.signature(optimize_retrieval_weights).parameters["steps"].default == 300


def test_optimize_perfect_plus_noise():
    p = gen_retrieval_problem(SynthConfig(seed=3, n_queries=100, n_gallery=30, n_models=2,
                                          quality=(1.0, 0.0)))
    w, obj = optimize_retrieval_weights(p, steps=300, seed=5)
    assert obj >= mean_recall(p.matrices[0], p.gt)
    _, grid_obj = grid_search_weights(p, 0.05)
    assert obj >= grid_obj - 0.02


def test_optimize_deterministic_and_not_worse_than_singles():
    p = gen_retrieval_problem(SynthConfig(seed=8, n_queries=60, n_gallery=20, n_models=3,
                                          quality=(0.3, 0.5, 0.2)))
    a = optimize_retrieval_weights(p, steps=60, seed=2)
    b = optimize_retrieval_weights(p, steps=60, seed=2, n_jobs=3)
    assert a[0] == b[0] and a[1] == b[1]
    singles = [evaluate_weights(p, np.eye(3)[i]) for i in range(3)]
    assert a[1] >= max(singles)


# -- estimator ----------------------------------------------------------------

def test_estimator_api():
    p = gen_retrieval_problem(SynthConfig(seed=4, n_queries=50, n_gallery=20, n_models=2,
                                          quality=(0.6, 0.3)))
    est = RetrievalFusion(steps=40, seed=1)
    assert est.get_params()["steps"] == 40
    est.fit(list(p.matrices), p.gt.targets)
    fused = est.transform(list(p.matrices))
    assert isinstance(fused, SimilarityMatrix)
    assert est.score(list(p.matrices), p.gt) == pytest.approx(est.objective_)
    stack = np.stack([m.scores for m in p.matrices])
    again = clone(est).fit(stack, p.gt)
    assert again.weights_ == est.weights_
    with pytest.raises(ArgumentError):
        est.transform(list(p.matrices)[:1])
