"""Ranking and classification metrics.

Everything is returned as a fraction in [0, 1]; percentages are a display
concern.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import ArgumentError
from .types import QaLabels, RetrievalGroundTruth, SimilarityMatrix

MEAN_RECALL_KS = (1, 5, 10)


def rank_of_truth(row, truth_index: int) -> int:
    """1-based rank of ``row[truth_index]``; ties go to the smaller index."""
    row = np.asarray(row, dtype=np.float64)
    if not 0 <= truth_index < row.size:
        raise ArgumentError(f"truth index {truth_index} out of range for row of length {row.size}")
    t = row[truth_index]
    return 1 + int(np.count_nonzero(row > t)) + int(np.count_nonzero(row[:truth_index] == t))


def truth_ranks(sim: SimilarityMatrix, gt: RetrievalGroundTruth) -> np.ndarray:
    """Vectorised :func:`rank_of_truth` over every query of ``sim``."""
    gt.check_covers(sim)
    s = sim.scores
    t = s[np.arange(sim.n_queries), gt.targets][:, None]
    ahead = np.count_nonzero(s > t, axis=1)
    before = np.arange(sim.n_gallery)[None, :] < gt.targets[:, None]
    tied = np.count_nonzero((s == t) & before, axis=1)
    return 1 + ahead + tied


def recall_at_k(sim: SimilarityMatrix, gt: RetrievalGroundTruth, k: int) -> float:
    if k < 1:
        raise ArgumentError(f"k must be positive, got {k}")
    ranks = truth_ranks(sim, gt)
    return float(np.count_nonzero(ranks <= min(k, sim.n_gallery))) / ranks.size


def mean_recall(sim: SimilarityMatrix, gt: RetrievalGroundTruth) -> float:
    """(R@1 + R@5 + R@10) / 3, each k clipped to the gallery size."""
    ranks = truth_ranks(sim, gt)
    n_g = sim.n_gallery
    hits = [np.count_nonzero(ranks <= min(k, n_g)) for k in MEAN_RECALL_KS]
    return float(sum(hits)) / (len(MEAN_RECALL_KS) * ranks.size)


def accuracy(predicted, labels) -> float:
    y = labels.labels if isinstance(labels, QaLabels) else np.asarray(labels)
    p = np.asarray(predicted)
    if p.shape != y.shape:
        raise ArgumentError(f"predictions length {p.size} does not match labels length {y.size}")
    if y.size == 0:
        raise ArgumentError("accuracy of an empty label set is undefined")
    return float(np.count_nonzero(p == y)) / y.size


def meta_average(task_scores: Sequence[float]) -> float:
    """Unweighted mean of per-task scores.

    The public leaderboard applies its own (unpublished) weighting, so this
    will not reproduce its Meta-Ave column exactly.
    """
    scores = [float(s) for s in task_scores]
    if not scores:
        raise ArgumentError("meta_average needs at least one score")
    if not all(math.isfinite(s) for s in scores):
        raise ArgumentError("task scores must be finite")
    return math.fsum(scores) / len(scores)
