"""Top-K model selection and visual-concept subtitle augmentation."""
from __future__ import annotations

from typing import Sequence

from .errors import ArgumentError
from .types import ModelRecord

# ensemble size per macro-task
DEFAULT_TOP_K = {"captioning": 8, "qa": 16, "retrieval": 32}

MAX_REGIONS = 10
MAX_LABELS_PER_REGION = 3
SEP = " [SEP] "


def select_top_k_models(records: Sequence[ModelRecord], k: int) -> list[ModelRecord]:
    """The ``min(k, n)`` best records by validation score, best first.

    Equal scores are ordered by ``model_id``.
    """
    if k < 1:
        raise ArgumentError(f"k must be positive, got {k}")
    if not records:
        raise ArgumentError("no model records to select from")
    ranked = sorted(records, key=lambda r: (-r.validation_score, r.model_id))
    return ranked[:k]


def default_top_k(macro_task: str) -> int:
    try:
        return DEFAULT_TOP_K[macro_task]
    except KeyError:
        raise ArgumentError(
            f"unknown macro-task {macro_task!r}; expected one of {sorted(DEFAULT_TOP_K)}"
        ) from None


def augment_subtitle_with_concepts(subtitle: str, regions: Sequence[Sequence[str]] | None) -> str:
    """Append detected concept labels to a subtitle line.

    Each region becomes ``" [SEP] " + ", ".join(labels)``. ``None`` (no
    concept data for this frame) or an empty list leaves the subtitle as is.
    """
    if not regions:
        return subtitle
    if len(regions) > MAX_REGIONS:
        raise ArgumentError(f"{len(regions)} regions exceed the limit of {MAX_REGIONS}")
    parts = [subtitle]
    for i, labels in enumerate(regions):
        if not 1 <= len(labels) <= MAX_LABELS_PER_REGION:
            raise ArgumentError(
                f"region {i} has {len(labels)} labels; expected 1 to {MAX_LABELS_PER_REGION}"
            )
        parts.append(SEP + ", ".join(labels))
    return "".join(parts)
