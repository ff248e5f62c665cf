"""Input coercion for the estimator classes.

Estimators accept either the domain types or plain array-likes; these
helpers turn both into the domain types and raise ``ArgumentError`` with a
readable message otherwise.
"""
from __future__ import annotations

import numpy as np

from .errors import ArgumentError
from .types import QaLabels, QaScoreTensor, RetrievalGroundTruth, SimilarityMatrix


def check_matrix_stack(X) -> list[SimilarityMatrix]:
    """List of id-aligned similarity matrices from ``X``.

    ``X`` is a sequence of :class:`SimilarityMatrix` or anything numpy can
    turn into a ``(n_models, n_queries, n_gallery)`` array.
    """
    if isinstance(X, SimilarityMatrix):
        X = [X]
    if isinstance(X, (list, tuple)) and X and all(isinstance(m, SimilarityMatrix) for m in X):
        mats = list(X)
    else:
        arr = np.asarray(X, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3:
            raise ArgumentError(
                f"expected a stack of similarity matrices (3-d), got shape {arr.shape}"
            )
        mats = [SimilarityMatrix(a) for a in arr]
    if not mats:
        raise ArgumentError("need at least one similarity matrix")
    first = mats[0]
    for i, m in enumerate(mats[1:], start=1):
        if m.scores.shape != first.scores.shape:
            raise ArgumentError(
                f"matrix {i} has shape {m.scores.shape}, matrix 0 has {first.scores.shape}"
            )
        if not m.aligned_with(first):
            raise ArgumentError(f"matrix {i} ids are not aligned with matrix 0")
    return mats


def check_ground_truth(y, n_queries: int, n_gallery: int) -> RetrievalGroundTruth:
    if not isinstance(y, RetrievalGroundTruth):
        y = RetrievalGroundTruth(np.asarray(y), n_gallery)
    if y.n_queries != n_queries or y.n_gallery != n_gallery:
        raise ArgumentError(
            f"ground truth is {y.n_queries}x{y.n_gallery}, matrices are {n_queries}x{n_gallery}"
        )
    return y


def check_qa_tensor(X) -> QaScoreTensor:
    if isinstance(X, QaScoreTensor):
        return X
    return QaScoreTensor(np.asarray(X, dtype=np.float64))


def check_qa_labels(y, n_examples: int, n_answers: int) -> QaLabels:
    if not isinstance(y, QaLabels):
        y = QaLabels(np.asarray(y), n_answers)
    if len(y) != n_examples:
        raise ArgumentError(f"{len(y)} labels for {n_examples} examples")
    return y
