"""Consensus reranking of candidate captions.

A caption's consensus score is its mean similarity to every other candidate
of the same video; similarity is the cosine of sentence embeddings averaged
over one or more embedding providers. The highest-scoring caption wins.
"""
from __future__ import annotations

import re
import zlib
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .errors import ArgumentError, SchemaError
from .types import CaptionSet

TRIGRAM_DIM = 1024
# scores this close count as tied; duplicates summed in another order differ by ulps
TIE_TOL = 1e-12
_WS = re.compile(r"\s+")


def trigram_embed(text: str) -> np.ndarray:
    """Hashed character-trigram count vector, L2-normalized.

    Text is lowercased and whitespace runs are collapsed to one space. Each
    overlapping 3-gram lands in bucket ``crc32(utf8(gram)) % 1024``. Text
    shorter than three characters embeds to the zero vector.
    """
    norm = _WS.sub(" ", text.lower()).strip()
    v = np.zeros(TRIGRAM_DIM)
    for i in range(len(norm) - 2):
        v[zlib.crc32(norm[i:i + 3].encode("utf-8")) % TRIGRAM_DIM] += 1.0
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if u.shape != v.shape:
        raise ArgumentError(f"cosine of vectors with dims {u.size} and {v.size}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


@dataclass(frozen=True)
class EmbeddingProvider:
    """A named text -> vector function with a fixed output dimension."""

    provider_id: str
    embed: Callable[[str], np.ndarray]


def builtin_provider() -> EmbeddingProvider:
    return EmbeddingProvider("trigram", trigram_embed)


class PrecomputedEmbeddings:
    """Provider backed by a table of exact caption text -> vector.

    Unknown captions raise :class:`SchemaError` naming the text.
    """

    def __init__(self, provider_id: str, table: Mapping[str, Sequence[float]]):
        self.provider_id = provider_id
        dims = set()
        self.table: dict[str, np.ndarray] = {}
        for text, vec in table.items():
            arr = np.asarray(vec, dtype=np.float64).reshape(-1)
            if not np.all(np.isfinite(arr)):
                raise SchemaError(f"provider {provider_id!r}: non-finite vector for caption {text!r}")
            dims.add(arr.size)
            if len(dims) > 1:
                raise SchemaError(
                    f"provider {provider_id!r}: caption {text!r} has dimension {arr.size}, "
                    f"expected {min(dims - {arr.size})}"
                )
            self.table[text] = arr
        self.dim = dims.pop() if dims else 0

    def embed(self, text: str) -> np.ndarray:
        try:
            return self.table[text]
        except KeyError:
            raise SchemaError(
                f"provider {self.provider_id!r} has no embedding for caption {text!r}"
            ) from None

    def as_provider(self) -> EmbeddingProvider:
        return EmbeddingProvider(self.provider_id, self.embed)


def _providers(providers) -> list[EmbeddingProvider]:
    if providers is None:
        return [builtin_provider()]
    out = [p.as_provider() if isinstance(p, PrecomputedEmbeddings) else p for p in providers]
    if not out:
        raise ArgumentError("need at least one embedding provider")
    return out


def pairwise_similarity(a: str, b: str, providers: Sequence[EmbeddingProvider]) -> float:
    providers = _providers(providers)
    return float(np.mean([cosine(p.embed(a), p.embed(b)) for p in providers]))


def similarity_matrix(texts: Sequence[str], providers) -> np.ndarray:
    """Provider-averaged cosine between every pair of ``texts``."""
    providers = _providers(providers)
    n = len(texts)
    total = np.zeros((n, n))
    for p in providers:
        emb = np.stack([np.asarray(p.embed(t), dtype=np.float64).reshape(-1) for t in texts])
        norms = np.linalg.norm(emb, axis=1)
        safe = np.where(norms > 0, norms, 1.0)
        unit = emb / safe[:, None]
        cos = unit @ unit.T
        cos[(norms == 0)[:, None] | (norms == 0)[None, :]] = 0.0
        total += cos
    return total / len(providers)


def consensus_scores(caps: CaptionSet, providers=None) -> np.ndarray:
    n = len(caps)
    if n == 1:
        return np.ones(1)
    sim = similarity_matrix(caps.texts, providers)
    off = ~np.eye(n, dtype=bool)
    return np.array([sim[i, off[i]].sum() for i in range(n)]) / (n - 1)


@dataclass(frozen=True, eq=False)
class ConsensusResult:
    scores: np.ndarray
    selected_index: int
    selected_text: str


def select_caption(caps: CaptionSet, providers=None) -> ConsensusResult:
    scores = consensus_scores(caps, providers)
    idx = int(np.flatnonzero(scores >= scores.max() - TIE_TOL)[0])
    return ConsensusResult(scores, idx, caps.texts[idx])


class ConsensusReranker(BaseEstimator):
    """Picks one caption per video by consensus.

    Stateless; ``fit`` only exists for pipeline compatibility. ``providers``
    defaults to the built-in trigram embedder.
    """

    def __init__(self, providers=None):
        self.providers = providers

    def fit(self, X=None, y=None):
        self.providers_ = _providers(self.providers)
        return self

    def predict(self, X: Sequence[CaptionSet]) -> list[str]:
        return [r.selected_text for r in self.rerank(X)]

    def rerank(self, X: Sequence[CaptionSet]) -> list[ConsensusResult]:
        providers = getattr(self, "providers_", None) or _providers(self.providers)
        return [select_caption(cs, providers) for cs in X]
