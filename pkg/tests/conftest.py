import numpy as np
import pytest

from valfuse.types import RetrievalGroundTruth, SimilarityMatrix


def sim(rows):
    return SimilarityMatrix(np.asarray(rows, dtype=float))


def gt(targets, n_gallery):
    return RetrievalGroundTruth(np.asarray(targets), n_gallery)


def matrix_with_truth_rank(n_q, n_g, rank, seed=0):
    """Each query's truth sits at exactly ``rank`` (1-based), scores distinct."""
    rng = np.random.default_rng(seed)
    scores = np.empty((n_q, n_g))
    targets = rng.integers(0, n_g, size=n_q)
    for i in range(n_q):
        perm = rng.permutation(n_g)
        # item perm[r] gets the r-th highest score
        scores[i, perm] = np.linspace(1.0, 0.0, n_g)
        j = perm[rank - 1]
        scores[i, [targets[i], j]] = scores[i, [j, targets[i]]]
    return SimilarityMatrix(scores), RetrievalGroundTruth(targets, n_g)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
