"""Seeded synthetic problems and brute-force oracles.

The oracles here deliberately avoid calling the code they check: grid search
ranks with a stable sort instead of counting, reference NMS rescans the whole
candidate list on every pick, and the consensus oracle expands the average
term by term with scalar arithmetic.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ArgumentError
from .retrieval import FusionProblem
from .types import (
    CaptionSet,
    EnsembleWeights,
    MomentCandidate,
    QaLabels,
    QaScoreTensor,
    RetrievalGroundTruth,
    SimilarityMatrix,
)

MAX_GRID_MODELS = 4


@dataclass(frozen=True)
class SynthConfig:
    """Parameters shared by every generator.

    ``quality`` holds one value per model; a single value is broadcast.
    ``n_queries`` doubles as the number of QA examples and of captioned
    videos. With ``complementary`` set, queries are cut into ``n_models``
    contiguous blocks and model ``m`` can only be right inside block ``m``.
    """

    seed: int = 0
    n_queries: int = 100
    n_gallery: int = 50
    n_models: int = 2
    quality: tuple[float, ...] = (1.0,)
    noise_scale: float = 1.0
    n_answers: int = 4
    complementary: bool = False

    def __post_init__(self):
        if min(self.n_queries, self.n_gallery, self.n_models, self.n_answers) < 1:
            raise ArgumentError("counts must be >= 1")
        q = tuple(float(x) for x in self.quality)
        if len(q) == 1:
            q = q * self.n_models
        if len(q) != self.n_models:
            raise ArgumentError(f"{len(q)} quality values for {self.n_models} models")
        if any(not 0.0 <= x <= 1.0 for x in q):
            raise ArgumentError(f"quality values must lie in [0, 1], got {q}")
        if not self.noise_scale > 0:
            raise ArgumentError("noise_scale must be positive")
        if self.seed < 0:
            raise ArgumentError("seed must be non-negative")
        object.__setattr__(self, "quality", q)


def _rng(config: SynthConfig, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed, spawn_key=(stream,))))


def _eligible(config: SynthConfig, m: int, n: int) -> np.ndarray:
    if not config.complementary:
        return np.ones(n, dtype=bool)
    block = np.arange(n) * config.n_models // n
    return block == m


def gen_retrieval_problem(config: SynthConfig) -> FusionProblem:
    """Distractors score ``noise_scale * U[0, 1)``.

    For a "hit" query (probability ``quality``) the true item instead scores
    in ``[noise_scale, 2 * noise_scale)``, strictly above every distractor.
    """
    rng = _rng(config, 0)
    n_q, n_g, ns = config.n_queries, config.n_gallery, config.noise_scale
    targets = rng.integers(0, n_g, size=n_q)
    qids = tuple(f"q{i}" for i in range(n_q))
    gids = tuple(f"g{j}" for j in range(n_g))
    mats = []
    for m, q in enumerate(config.quality):
        scores = ns * rng.random((n_q, n_g))
        hit = (rng.random(n_q) < q) & _eligible(config, m, n_q)
        boost = ns * (1.0 + rng.random(n_q))
        rows = np.flatnonzero(hit)
        scores[rows, targets[rows]] = boost[rows]
        mats.append(SimilarityMatrix(scores, qids, gids))
    return FusionProblem(tuple(mats), RetrievalGroundTruth(targets, n_g))


def gen_qa_problem(config: SynthConfig) -> tuple[QaScoreTensor, QaLabels]:
    """Per-model scores ``U[0, 1)``; on a hit the true answer gets row max + ``noise_scale``."""
    rng = _rng(config, 1)
    B, A = config.n_queries, config.n_answers
    labels = rng.integers(0, A, size=B)
    X = np.empty((B, config.n_models, A))
    for m, q in enumerate(config.quality):
        s = rng.random((B, A))
        hit = (rng.random(B) < q) & _eligible(config, m, B)
        rows = np.flatnonzero(hit)
        s[rows, labels[rows]] = s[rows].max(axis=1) + config.noise_scale
        X[:, m, :] = s
    return (QaScoreTensor(X, model_ids=tuple(f"m{i}" for i in range(config.n_models))),
            QaLabels(labels, A))


_SUBJECTS = ["a man", "a woman", "the chef", "a child", "two people", "the host", "a dog"]
_VERBS = ["slices", "stirs", "picks up", "throws", "opens", "washes", "carries", "pours"]
_OBJECTS = ["a red tomato", "the soup", "a wooden box", "some noodles", "a glass of water",
            "the onions", "a blue ball", "a large pan", "the dough"]
_PLACES = ["in the kitchen", "on the table", "near the window", "outside", "on the stove",
           "in a bowl", "at the sink"]


def _sentence(rng: np.random.Generator) -> str:
    parts = [lst[rng.integers(len(lst))] for lst in (_SUBJECTS, _VERBS, _OBJECTS, _PLACES)]
    return " ".join(parts)


def gen_caption_sets(config: SynthConfig) -> tuple[list[CaptionSet], list[str]]:
    """Caption sets plus the reference caption of each.

    The reference is emitted by ``ceil(mean(quality) * n_models)`` randomly
    chosen models; every other model emits its own distinct distractor.
    """
    rng = _rng(config, 2)
    n_c = config.n_models
    n_dup = math.ceil(float(np.mean(config.quality)) * n_c)
    sets, refs = [], []
    for v in range(config.n_queries):
        ref = _sentence(rng)
        used = {ref}
        texts = [None] * n_c
        dup_models = set(rng.permutation(n_c)[:n_dup].tolist())
        for m in range(n_c):
            if m in dup_models:
                texts[m] = ref
                continue
            t = _sentence(rng)
            while t in used:
                t = _sentence(rng)
            used.add(t)
            texts[m] = t
        sets.append(CaptionSet(f"v{v}", tuple((f"m{m}", texts[m]) for m in range(n_c))))
        refs.append(ref)
    return sets, refs


def gen_moments(config: SynthConfig, n_candidates: int, stream: int = 0,
                n_videos: int = 5, duration: float = 60.0) -> list[MomentCandidate]:
    """Random moments on a 0.5 s grid, so many IoUs hit round values exactly.

    ``stream`` selects an independent draw under the same seed.
    """
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(config.seed, spawn_key=(3, stream))))
    out = []
    for _ in range(n_candidates):
        st = float(rng.integers(0, int(duration * 2))) / 2
        length = float(rng.integers(1, 21)) / 2
        score = float(rng.integers(0, 50)) / 50
        out.append(MomentCandidate(f"vid{rng.integers(n_videos)}", st, st + length, score))
    return out


# -- oracles ------------------------------------------------------------------

def simplex_lattice(n_models: int, step: float) -> list[tuple[float, ...]]:
    """All weight vectors with coordinates in multiples of ``step`` summing to 1.

    Returned in lexicographically ascending order.
    """
    n = round(1.0 / step)
    if step <= 0 or abs(n * step - 1.0) > 1e-9:
        raise ArgumentError(f"step {step} does not divide 1 evenly")
    pts = []
    for combo in itertools.product(range(n + 1), repeat=n_models - 1):
        if sum(combo) <= n:
            pts.append(tuple(c / n for c in combo) + ((n - sum(combo)) / n,))
    return sorted(pts)


def brute_mean_recall(scores: np.ndarray, targets: np.ndarray) -> float:
    n_q, n_g = scores.shape
    idx = np.broadcast_to(np.arange(n_g), scores.shape)
    # primary key: descending score, secondary: ascending index
    order = np.lexsort((idx, -scores), axis=1)
    ranks = np.argmax(order == targets[:, None], axis=1) + 1
    total = 0.0
    for k in (1, 5, 10):
        total += np.mean(ranks <= min(k, n_g))
    return float(total / 3)


def grid_search_weights(problem: FusionProblem, step: float = 0.05) -> tuple[EnsembleWeights, float]:
    if problem.n_models > MAX_GRID_MODELS:
        raise ArgumentError(f"grid search is limited to {MAX_GRID_MODELS} models")
    stack = np.stack([m.scores for m in problem.matrices])
    targets = problem.gt.targets
    best_w, best = None, -1.0
    for w in simplex_lattice(problem.n_models, step):
        obj = brute_mean_recall(np.tensordot(np.array(w), stack, axes=1), targets)
        if obj > best:
            best_w, best = w, obj
    total = math.fsum(best_w)
    return EnsembleWeights(np.array(best_w) / total), best


def _iou(a: MomentCandidate, b: MomentCandidate) -> float:
    if a.video_id != b.video_id:
        return 0.0
    lo = a.t_start if a.t_start > b.t_start else b.t_start
    hi = a.t_end if a.t_end < b.t_end else b.t_end
    inter = hi - lo if hi > lo else 0.0
    return inter / ((a.t_end - a.t_start) + (b.t_end - b.t_start) - inter)


def reference_nms(cands: Sequence[MomentCandidate], threshold: float, max_keep: int) -> list[MomentCandidate]:
    remaining = list(enumerate(cands))
    kept = []
    while remaining and len(kept) < max_keep:
        best = remaining[0]
        for item in remaining[1:]:
            i, c = item
            j, b = best
            if (c.score > b.score
                    or (c.score == b.score and c.t_start < b.t_start)
                    or (c.score == b.score and c.t_start == b.t_start and i < j)):
                best = item
        kept.append(best[1])
        remaining = [it for it in remaining
                     if it[0] != best[0] and _iou(best[1], it[1]) < threshold]
    return kept


def brute_force_consensus(texts: Sequence[str], embedders) -> tuple[list[float], int]:
    """Consensus scores and winner by literal expansion of the mean."""
    def cos(u, v):
        dot = sum(float(x) * float(y) for x, y in zip(u, v))
        nu = math.sqrt(sum(float(x) ** 2 for x in u))
        nv = math.sqrt(sum(float(y) ** 2 for y in v))
        return 0.0 if nu == 0 or nv == 0 else dot / (nu * nv)

    n = len(texts)
    if n == 1:
        return [1.0], 0
    scores = []
    for i in range(n):
        acc = 0.0
        for j in range(n):
            if j == i:
                continue
            acc += sum(cos(e(texts[i]), e(texts[j])) for e in embedders) / len(embedders)
        scores.append(acc / (n - 1))
    top = max(scores)
    best = next(i for i in range(n) if scores[i] >= top - 1e-12)
    return scores, best
