import pytest

from valfuse.errors import ArgumentError
from valfuse.selection import (
    DEFAULT_TOP_K,
    augment_subtitle_with_concepts,
    default_top_k,
    select_top_k_models,
)
from valfuse.types import ModelRecord


def recs(*scores):
    return [ModelRecord(f"m{i}", s) for i, s in enumerate(scores)]


def test_top_k_clips():
    assert len(select_top_k_models(recs(1, 2, 3, 4, 5), 8)) == 5


def test_top_k_sorted():
    out = select_top_k_models(recs(3, 1, 2), 2)
    assert [r.validation_score for r in out] == [3, 2]


def test_top_k_ties_by_id():
    out = select_top_k_models([ModelRecord("b", 1.0), ModelRecord("a", 1.0), ModelRecord("c", 2.0)], 2)
    assert [r.model_id for r in out] == ["c", "a"]


def test_top_k_errors():
    with pytest.raises(ArgumentError):
        select_top_k_models(recs(1), 0)
    with pytest.raises(ArgumentError):
        select_top_k_models([], 3)
    with pytest.raises(ArgumentError):
        ModelRecord("x", float("inf"))


def test_default_k_per_macro_task():
    assert DEFAULT_TOP_K == {"captioning": 8, "qa": 16, "retrieval": 32}
    assert default_top_k("qa") == 16
    with pytest.raises(ArgumentError):
        default_top_k("vqa")


@pytest.mark.parametrize("subtitle, regions, expected", [
    ("add the pasta", [], "add the pasta"),
    ("add the pasta", None, "add the pasta"),
    ("add the pasta", [["boiling water", "silver pot"]], "add the pasta [SEP] boiling water, silver pot"),
    ("", [["red bowl"]], " [SEP] red bowl"),
    ("stir", [["a"], ["b", "c", "d"]], "stir [SEP] a [SEP] b, c, d"),
])
def test_augment(subtitle, regions, expected):
    out = augment_subtitle_with_concepts(subtitle, regions)
    assert out == expected
    assert out.count("[SEP]") == len(regions or [])


def test_augment_limits():
    with pytest.raises(ArgumentError):
        augment_subtitle_with_concepts("s", [["x"]] * 11)
    with pytest.raises(ArgumentError):
        augment_subtitle_with_concepts("s", [["a", "b", "c", "d"]])
    with pytest.raises(ArgumentError):
        augment_subtitle_with_concepts("s", [[]])
    assert augment_subtitle_with_concepts("s", [["x"]] * 10).count("[SEP]") == 10
