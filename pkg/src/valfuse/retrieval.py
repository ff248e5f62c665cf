"""Weighted similarity-matrix fusion for retrieval and moment retrieval.

The fused score matrix is ``sum_n w_n * S_n`` with simplex weights. Weights
are found by TPE over the unit hypercube; every sampled point is divided by
its coordinate sum before use, and the objective is mean recall.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import ArgumentError
from .metrics import mean_recall
from .tpe import TpeConfig, TpeResult, tpe_maximize
from .types import EnsembleWeights, MomentCandidate, RetrievalGroundTruth, SimilarityMatrix
from .validation import check_ground_truth, check_matrix_stack

DEFAULT_STEPS = 300
DEFAULT_IOU = 0.7
DEFAULT_MAX_KEEP = 100


@dataclass(frozen=True)
class FusionProblem:
    matrices: tuple[SimilarityMatrix, ...]
    gt: RetrievalGroundTruth

    def __post_init__(self):
        mats = tuple(check_matrix_stack(list(self.matrices)))
        self.gt.check_covers(mats[0])
        object.__setattr__(self, "matrices", mats)

    @property
    def n_models(self) -> int:
        return len(self.matrices)


def normalize_to_simplex(point) -> EnsembleWeights:
    """Map a point of the non-negative orthant onto the simplex.

    The all-zero point maps to uniform weights.
    """
    p = np.asarray(point, dtype=np.float64).reshape(-1)
    if np.any(p < 0):
        raise ArgumentError(f"cannot normalize negative coordinates {p.tolist()}")
    total = p.sum()
    if total <= 0.0:
        return EnsembleWeights(np.full(p.size, 1.0 / p.size))
    return EnsembleWeights(p / total)


def _as_weights(w) -> EnsembleWeights:
    return w if isinstance(w, EnsembleWeights) else EnsembleWeights(w)


def fuse_matrices(matrices: Sequence[SimilarityMatrix], w) -> SimilarityMatrix:
    mats = check_matrix_stack(list(matrices))
    w = _as_weights(w)
    if len(w) != len(mats):
        raise ArgumentError(f"{len(w)} weights for {len(mats)} matrices")
    fused = w.weights[0] * mats[0].scores
    for wi, m in zip(w.weights[1:], mats[1:]):
        fused = fused + wi * m.scores
    return SimilarityMatrix(fused, mats[0].query_ids, mats[0].gallery_ids)


def evaluate_weights(problem: FusionProblem, w) -> float:
    return mean_recall(fuse_matrices(problem.matrices, w), problem.gt)


def simplex_vertices_and_center(n: int) -> list[np.ndarray]:
    """One-hot points for every model, then the all-ones point."""
    pts = [np.eye(n)[i] for i in range(n)]
    if n > 1:
        pts.append(np.ones(n))
    return pts


def _search(problem: FusionProblem, steps: int, seed: int, tpe_config: TpeConfig | None,
            n_jobs: int = 1) -> TpeResult:
    if steps < 1:
        raise ArgumentError(f"steps must be positive, got {steps}")

    def objective(point: np.ndarray) -> float:
        return evaluate_weights(problem, normalize_to_simplex(point))

    return tpe_maximize(
        objective,
        dim=problem.n_models,
        steps=steps,
        seed=seed,
        config=tpe_config,
        initial_points=simplex_vertices_and_center(problem.n_models),
        n_jobs=n_jobs,
    )


def optimize_retrieval_weights(
    problem: FusionProblem,
    steps: int = DEFAULT_STEPS,
    seed: int = 0,
    tpe_config: TpeConfig | None = None,
    n_jobs: int = 1,
) -> tuple[EnsembleWeights, float]:
    """Search fusion weights that maximize mean recall.

    Every single-model weight vector and the uniform vector are tried first
    (inside the ``steps`` budget), so the result is never worse than the best
    single model.
    """
    if problem.n_models == 1:
        w = EnsembleWeights([1.0])
        return w, evaluate_weights(problem, w)
    res = _search(problem, steps, seed, tpe_config, n_jobs)
    return normalize_to_simplex(res.best_point), res.best_objective


# -- moment retrieval ---------------------------------------------------------

def temporal_iou(a: MomentCandidate, b: MomentCandidate) -> float:
    if a.video_id != b.video_id:
        return 0.0
    inter = max(0.0, min(a.t_end, b.t_end) - max(a.t_start, b.t_start))
    union = (a.t_end - a.t_start) + (b.t_end - b.t_start) - inter
    return inter / union


def nms_moments(
    cands: Sequence[MomentCandidate],
    iou_threshold: float = DEFAULT_IOU,
    max_keep: int = DEFAULT_MAX_KEEP,
) -> list[MomentCandidate]:
    """Greedy temporal NMS.

    Candidates are visited by descending score (ties: earlier start, then
    input order); a candidate is dropped when its IoU with an already kept
    one is >= ``iou_threshold``. Output is in selection order.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ArgumentError(f"IoU threshold must lie in (0, 1], got {iou_threshold}")
    if max_keep < 1:
        raise ArgumentError(f"max_keep must be positive, got {max_keep}")
    n = len(cands)
    if n == 0:
        return []
    order = sorted(range(n), key=lambda i: (-cands[i].score, cands[i].t_start, i))
    vids = np.array([c.video_id for c in cands], dtype=object)[order]
    st = np.array([c.t_start for c in cands], dtype=np.float64)[order]
    en = np.array([c.t_end for c in cands], dtype=np.float64)[order]
    alive = np.ones(n, dtype=bool)
    kept: list[int] = []
    for pos in range(n):
        if not alive[pos]:
            continue
        kept.append(order[pos])
        if len(kept) == max_keep:
            break
        rest = np.arange(pos + 1, n)
        rest = rest[alive[rest] & (vids[rest] == vids[pos])]
        if rest.size:
            inter = np.maximum(0.0, np.minimum(en[rest], en[pos]) - np.maximum(st[rest], st[pos]))
            union = (en[rest] - st[rest]) + (en[pos] - st[pos]) - inter
            alive[rest[inter / union >= iou_threshold]] = False
    return [cands[i] for i in kept]


def fuse_moments(per_model: Sequence[Sequence[MomentCandidate]], w) -> list[MomentCandidate]:
    """Weighted fusion of per-model moment lists for one query.

    Moments are joined on ``(video_id, t_start, t_end)``; a moment missing
    from a model contributes score 0 for that model. Output is sorted by
    fused score (ties: earlier start, then first appearance).
    """
    w = _as_weights(w)
    if len(w) != len(per_model):
        raise ArgumentError(f"{len(w)} weights for {len(per_model)} candidate lists")
    fused: dict[tuple[str, float, float], float] = {}
    for wi, cands in zip(w.weights, per_model):
        seen = set()
        for c in cands:
            key = (c.video_id, c.t_start, c.t_end)
            if key in seen:
                raise ArgumentError(f"duplicate moment {key} within one model's list")
            seen.add(key)
            fused[key] = fused.get(key, 0.0) + float(wi) * c.score
    keys = list(fused)
    order = sorted(range(len(keys)), key=lambda i: (-fused[keys[i]], keys[i][1], i))
    return [MomentCandidate(*keys[i], fused[keys[i]]) for i in order]


# -- estimator ----------------------------------------------------------------

class RetrievalFusion(TransformerMixin, BaseEstimator):
    """Learns simplex weights for a stack of similarity matrices.

    ``fit(X, y)`` takes a list of :class:`SimilarityMatrix` (or a
    ``(n_models, n_queries, n_gallery)`` array) and the index of the correct
    gallery item per query. ``transform`` returns the fused matrix.

    Parameters
    ----------
    steps : int
        TPE evaluations, startup trials included.
    seed : int
        Non-negative seed; fixes the whole search.
    gamma, n_startup, n_candidates, bandwidth_floor, bandwidth_ceiling
        Forwarded to :class:`~valfuse.tpe.TpeConfig`.
    n_jobs : int
        Threads used for the startup batch. Results do not depend on it.
    """

    def __init__(self, steps=DEFAULT_STEPS, seed=0, gamma=0.25, n_startup=20,
                 n_candidates=24, bandwidth_floor=0.01, bandwidth_ceiling=1.0, n_jobs=1):
        self.steps = steps
        self.seed = seed
        self.gamma = gamma
        self.n_startup = n_startup
        self.n_candidates = n_candidates
        self.bandwidth_floor = bandwidth_floor
        self.bandwidth_ceiling = bandwidth_ceiling
        self.n_jobs = n_jobs

    def _tpe_config(self) -> TpeConfig:
        return TpeConfig(self.gamma, self.n_startup, self.n_candidates,
                         self.bandwidth_floor, self.bandwidth_ceiling)

    def fit(self, X, y):
        mats = check_matrix_stack(X)
        gt = check_ground_truth(y, mats[0].n_queries, mats[0].n_gallery)
        problem = FusionProblem(tuple(mats), gt)
        if problem.n_models == 1:
            self.weights_ = EnsembleWeights([1.0])
            self.objective_ = evaluate_weights(problem, self.weights_)
            self.history_ = None
        else:
            res = _search(problem, self.steps, self.seed, self._tpe_config(), self.n_jobs)
            self.weights_ = normalize_to_simplex(res.best_point)
            self.objective_ = res.best_objective
            self.history_ = res.history
        self.n_models_ = problem.n_models
        return self

    def transform(self, X) -> SimilarityMatrix:
        check_is_fitted(self, "weights_")
        mats = check_matrix_stack(X)
        if len(mats) != self.n_models_:
            raise ArgumentError(f"fitted on {self.n_models_} models, got {len(mats)}")
        return fuse_matrices(mats, self.weights_)

    def score(self, X, y) -> float:
        fused = self.transform(X)
        return mean_recall(fused, check_ground_truth(y, fused.n_queries, fused.n_gallery))
