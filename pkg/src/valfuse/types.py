"""Domain types shared by every ensemble strategy.

All containers are frozen dataclasses holding read-only numpy arrays, so an
instance that passed construction keeps satisfying its invariants.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ArgumentError

SIMPLEX_ATOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def _check_unique(ids: Sequence[str], what: str) -> None:
    seen = set()
    for i in ids:
        if i in seen:
            raise ArgumentError(f"duplicate {what} id {i!r}")
        seen.add(i)


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """Scores of ``n_queries`` text queries against ``n_gallery`` items."""

    scores: np.ndarray
    query_ids: tuple[str, ...] = ()
    gallery_ids: tuple[str, ...] = ()

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 2 or scores.shape[0] < 1 or scores.shape[1] < 1:
            raise ArgumentError(f"scores must be a non-empty 2-d matrix, got shape {scores.shape}")
        if not np.all(np.isfinite(scores)):
            r, c = np.argwhere(~np.isfinite(scores))[0]
            raise ArgumentError(f"non-finite score at row {r}, col {c}")
        n_q, n_g = scores.shape
        qids = tuple(self.query_ids) or tuple(f"q{i}" for i in range(n_q))
        gids = tuple(self.gallery_ids) or tuple(f"g{j}" for j in range(n_g))
        if len(qids) != n_q or len(gids) != n_g:
            raise ArgumentError(
                f"id lengths ({len(qids)}, {len(gids)}) do not match scores shape {scores.shape}"
            )
        _check_unique(qids, "query")
        _check_unique(gids, "gallery")
        object.__setattr__(self, "scores", _frozen(scores))
        object.__setattr__(self, "query_ids", qids)
        object.__setattr__(self, "gallery_ids", gids)

    @property
    def n_queries(self) -> int:
        return self.scores.shape[0]

    @property
    def n_gallery(self) -> int:
        return self.scores.shape[1]

    def aligned_with(self, other: "SimilarityMatrix") -> bool:
        return self.query_ids == other.query_ids and self.gallery_ids == other.gallery_ids

    def __eq__(self, other):
        if not isinstance(other, SimilarityMatrix):
            return NotImplemented
        return self.aligned_with(other) and np.array_equal(self.scores, other.scores)


@dataclass(frozen=True, eq=False)
class EnsembleWeights:
    """Non-negative weights on the probability simplex."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if w.size == 0:
            raise ArgumentError("weights must be non-empty")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ArgumentError(f"weights must be finite and non-negative, got {w.tolist()}")
        if abs(math.fsum(w.tolist()) - 1.0) > SIMPLEX_ATOL:
            raise ArgumentError(f"weights must sum to 1, got {math.fsum(w.tolist())!r}")
        object.__setattr__(self, "weights", _frozen(w))

    def __len__(self) -> int:
        return self.weights.size

    def __eq__(self, other):
        if not isinstance(other, EnsembleWeights):
            return NotImplemented
        return np.array_equal(self.weights, other.weights)

    def tolist(self) -> list[float]:
        return self.weights.tolist()


@dataclass(frozen=True, eq=False)
class RetrievalGroundTruth:
    """Gallery index of the single correct item for each query."""

    targets: np.ndarray
    n_gallery: int

    def __post_init__(self):
        t = np.asarray(self.targets)
        if t.ndim != 1 or t.size == 0:
            raise ArgumentError("targets must be a non-empty 1-d vector")
        if not np.issubdtype(t.dtype, np.integer):
            if not np.all(np.equal(np.mod(t, 1), 0)):
                raise ArgumentError("targets must be integer indices")
        t = t.astype(np.int64)
        if self.n_gallery < 1:
            raise ArgumentError("n_gallery must be positive")
        bad = np.flatnonzero((t < 0) | (t >= self.n_gallery))
        if bad.size:
            raise ArgumentError(
                f"target {int(t[bad[0]])} of query {int(bad[0])} outside [0, {self.n_gallery})"
            )
        object.__setattr__(self, "targets", _frozen(t))

    @property
    def n_queries(self) -> int:
        return self.targets.size

    @classmethod
    def diagonal(cls, n: int) -> "RetrievalGroundTruth":
        return cls(np.arange(n), n)

    def check_covers(self, sim: SimilarityMatrix) -> None:
        if self.n_queries != sim.n_queries or self.n_gallery != sim.n_gallery:
            raise ArgumentError(
                f"ground truth covers {self.n_queries}x{self.n_gallery}, "
                f"matrix is {sim.n_queries}x{sim.n_gallery}"
            )


@dataclass(frozen=True, eq=False)
class QaScoreTensor:
    """Confidence scores shaped (examples, models, answers)."""

    scores: np.ndarray
    example_ids: tuple[str, ...] = ()
    model_ids: tuple[str, ...] = ()

    def __post_init__(self):
        x = np.asarray(self.scores, dtype=np.float64)
        if x.ndim != 3 or min(x.shape) < 1:
            raise ArgumentError(f"QA scores must be a non-empty 3-d tensor, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            b, i, a = np.argwhere(~np.isfinite(x))[0]
            raise ArgumentError(f"non-finite QA score at example {b}, model {i}, answer {a}")
        eids = tuple(self.example_ids) or tuple(f"ex{b}" for b in range(x.shape[0]))
        mids = tuple(self.model_ids) or tuple(f"m{i}" for i in range(x.shape[1]))
        if len(eids) != x.shape[0] or len(mids) != x.shape[1]:
            raise ArgumentError("example/model id lengths do not match tensor shape")
        _check_unique(eids, "example")
        _check_unique(mids, "model")
        object.__setattr__(self, "scores", _frozen(x))
        object.__setattr__(self, "example_ids", eids)
        object.__setattr__(self, "model_ids", mids)

    @property
    def n_examples(self) -> int:
        return self.scores.shape[0]

    @property
    def n_models(self) -> int:
        return self.scores.shape[1]

    @property
    def n_answers(self) -> int:
        return self.scores.shape[2]


@dataclass(frozen=True, eq=False)
class QaLabels:
    labels: np.ndarray
    n_answers: int

    def __post_init__(self):
        y = np.asarray(self.labels)
        if y.ndim != 1:
            raise ArgumentError("labels must be a 1-d vector")
        if y.size and not np.issubdtype(y.dtype, np.integer):
            raise ArgumentError("labels must be integer answer indices")
        y = y.astype(np.int64)
        bad = np.flatnonzero((y < 0) | (y >= self.n_answers))
        if bad.size:
            raise ArgumentError(
                f"label {int(y[bad[0]])} at position {int(bad[0])} outside [0, {self.n_answers})"
            )
        object.__setattr__(self, "labels", _frozen(y))

    def __len__(self) -> int:
        return self.labels.size


@dataclass(frozen=True)
class ModelRecord:
    model_id: str
    validation_score: float
    prediction_path: str = ""

    def __post_init__(self):
        if not math.isfinite(float(self.validation_score)):
            raise ArgumentError(f"validation score of {self.model_id!r} is not finite")


@dataclass(frozen=True)
class MomentCandidate:
    """A scored temporal segment of one video."""

    video_id: str
    t_start: float
    t_end: float
    score: float

    def __post_init__(self):
        if not (math.isfinite(self.t_start) and math.isfinite(self.t_end)):
            raise ArgumentError(f"moment bounds must be finite: {self!r}")
        if self.t_start < 0 or self.t_end <= self.t_start:
            raise ArgumentError(
                f"moment needs 0 <= t_start < t_end, got [{self.t_start}, {self.t_end}]"
            )
        if not math.isfinite(self.score):
            raise ArgumentError(f"moment score must be finite: {self!r}")


@dataclass(frozen=True)
class CaptionSet:
    """Candidate captions for one video, one per captioning model."""

    video_id: str
    captions: tuple[tuple[str, str], ...] = field(default_factory=tuple)

    def __post_init__(self):
        caps = tuple((str(m), str(t)) for m, t in self.captions)
        if not caps:
            raise ArgumentError(f"caption set {self.video_id!r} is empty")
        _check_unique([m for m, _ in caps], "caption model")
        object.__setattr__(self, "captions", caps)

    @property
    def texts(self) -> list[str]:
        return [t for _, t in self.captions]

    def __len__(self) -> int:
        return len(self.captions)
