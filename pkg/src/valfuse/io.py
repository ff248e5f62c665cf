"""On-disk formats.

Everything is JSON except similarity matrices, which may also be stored in
a compact binary layout (``.vfsm``)::

    b"VFSM" | version (1 byte) | n_queries (u64 LE) | n_gallery (u64 LE)
    | n_queries * n_gallery float32 LE, row-major

The binary layout carries no ids; loaded matrices get ``q<i>`` / ``g<j>``.
JSON documents carry a ``format`` tag and are written with a fixed layout so
that ``store(load(path))`` reproduces the file byte for byte.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .caption import PrecomputedEmbeddings
from .errors import ArgumentError, SchemaError
from .types import (
    CaptionSet,
    EnsembleWeights,
    ModelRecord,
    MomentCandidate,
    QaLabels,
    QaScoreTensor,
    RetrievalGroundTruth,
    SimilarityMatrix,
)

BINARY_MAGIC = b"VFSM"
BINARY_VERSION = 1
_BIN_HEADER = struct.Struct("<4sBQQ")

FMT_MATRIX = "valfuse/similarity-matrix"
FMT_GT = "valfuse/retrieval-gt"
FMT_WEIGHTS = "valfuse/weights"
FMT_QA = "valfuse/qa-scores"
FMT_LABELS = "valfuse/qa-labels"
FMT_PREDICTIONS = "valfuse/qa-predictions"
FMT_CAPTIONS = "valfuse/captions"
FMT_SELECTION = "valfuse/caption-selection"
FMT_EMBEDDINGS = "valfuse/embeddings"
FMT_MOMENTS = "valfuse/moments"
FMT_MODELS = "valfuse/models"
FMT_SUBTITLES = "valfuse/subtitles"


# -- generic JSON plumbing ----------------------------------------------------

def dumps(doc: Any) -> str:
    return json.dumps(doc, indent=1, ensure_ascii=False, allow_nan=False) + "\n"


def write_json(path, doc: Any) -> None:
    Path(path).write_text(dumps(doc), encoding="utf-8")


def read_json(path, fmt: str) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ArgumentError(f"{path}: cannot read ({e.strerror})") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from None
    if not isinstance(doc, dict) or doc.get("format") != fmt:
        got = doc.get("format") if isinstance(doc, dict) else type(doc).__name__
        raise SchemaError(f"{path}: expected format {fmt!r}, got {got!r}")
    return doc


def _field(doc: Mapping, key: str, path, kind=None, where: str = ""):
    loc = f"{path}: {where}{key}"
    if key not in doc:
        raise SchemaError(f"{loc}: missing field")
    value = doc[key]
    if kind is not None and not isinstance(value, kind):
        raise SchemaError(f"{loc}: expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}")
    return value


def _number(value, loc: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{loc}: expected a number, got {value!r}")
    if not math.isfinite(value):
        raise SchemaError(f"{loc}: non-finite value {value!r}")
    return float(value)


def _index(value, loc: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"{loc}: expected an integer index, got {value!r}")
    return value


def _wrap(path, fn, *args):
    """Run a domain constructor, reporting invariant violations as schema errors."""
    try:
        return fn(*args)
    except ArgumentError as e:
        raise SchemaError(f"{path}: {e}") from None


# -- similarity matrices ------------------------------------------------------

def _is_binary(path) -> bool:
    return Path(path).suffix.lower() == ".vfsm"


def store_similarity_matrix(path, sim: SimilarityMatrix) -> None:
    if _is_binary(path):
        header = _BIN_HEADER.pack(BINARY_MAGIC, BINARY_VERSION, sim.n_queries, sim.n_gallery)
        Path(path).write_bytes(header + sim.scores.astype("<f4").tobytes(order="C"))
        return
    write_json(path, {
        "format": FMT_MATRIX,
        "query_ids": list(sim.query_ids),
        "gallery_ids": list(sim.gallery_ids),
        "scores": sim.scores.tolist(),
    })


def load_similarity_matrix(path) -> SimilarityMatrix:
    if _is_binary(path):
        return _load_binary_matrix(path)
    doc = read_json(path, FMT_MATRIX)
    qids = _field(doc, "query_ids", path, list)
    gids = _field(doc, "gallery_ids", path, list)
    rows = _field(doc, "scores", path, list)
    if len(rows) != len(qids):
        raise SchemaError(f"{path}: scores has {len(rows)} rows for {len(qids)} query ids")
    scores = np.empty((len(qids), len(gids)))
    for r, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != len(gids):
            raise SchemaError(f"{path}: scores row {r} must hold {len(gids)} numbers")
        for c, v in enumerate(row):
            scores[r, c] = _number(v, f"{path}: scores row {r}, col {c}")
    return _wrap(path, SimilarityMatrix, scores, tuple(map(str, qids)), tuple(map(str, gids)))


def _load_binary_matrix(path) -> SimilarityMatrix:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise ArgumentError(f"{path}: cannot read ({e.strerror})") from None
    if len(blob) < _BIN_HEADER.size:
        raise SchemaError(f"{path}: truncated header ({len(blob)} bytes)")
    magic, version, n_q, n_g = _BIN_HEADER.unpack_from(blob)
    if magic != BINARY_MAGIC:
        raise SchemaError(f"{path}: bad magic {magic!r}")
    if version != BINARY_VERSION:
        raise SchemaError(f"{path}: unsupported version {version}")
    expected = _BIN_HEADER.size + 4 * n_q * n_g
    if len(blob) != expected:
        raise SchemaError(f"{path}: {len(blob)} bytes, header implies {expected}")
    scores = np.frombuffer(blob, dtype="<f4", offset=_BIN_HEADER.size).reshape(n_q, n_g)
    bad = np.argwhere(~np.isfinite(scores))
    if bad.size:
        raise SchemaError(f"{path}: non-finite score at row {bad[0][0]}, col {bad[0][1]}")
    return _wrap(path, SimilarityMatrix, scores.astype(np.float64))


# -- retrieval ground truth ---------------------------------------------------

def store_ground_truth(path, gt: RetrievalGroundTruth) -> None:
    write_json(path, {"format": FMT_GT, "n_gallery": gt.n_gallery, "targets": gt.targets.tolist()})


def load_ground_truth(path) -> RetrievalGroundTruth:
    doc = read_json(path, FMT_GT)
    n_g = _index(_field(doc, "n_gallery", path), f"{path}: n_gallery")
    targets = [_index(t, f"{path}: targets[{i}]")
               for i, t in enumerate(_field(doc, "targets", path, list))]
    return _wrap(path, RetrievalGroundTruth, np.array(targets, dtype=np.int64), n_g)


# -- weights ------------------------------------------------------------------

@dataclass(frozen=True)
class WeightsFile:
    kind: str
    model_ids: tuple[str, ...]
    weights: tuple[float, ...]
    extra: Mapping[str, Any]

    def ensemble_weights(self) -> EnsembleWeights:
        return EnsembleWeights(self.weights)


def store_weights(path, kind: str, model_ids: Sequence[str], weights, **extra) -> None:
    w = [float(x) for x in np.asarray(weights, dtype=np.float64).reshape(-1)]
    if len(w) != len(model_ids):
        raise ArgumentError(f"{len(w)} weights for {len(model_ids)} model ids")
    write_json(path, {"format": FMT_WEIGHTS, "kind": kind, "model_ids": list(model_ids),
                      "weights": w, **extra})


def load_weights(path) -> WeightsFile:
    doc = read_json(path, FMT_WEIGHTS)
    kind = _field(doc, "kind", path, str)
    mids = tuple(map(str, _field(doc, "model_ids", path, list)))
    w = tuple(_number(v, f"{path}: weights[{i}]")
              for i, v in enumerate(_field(doc, "weights", path, list)))
    if len(w) != len(mids):
        raise SchemaError(f"{path}: {len(w)} weights for {len(mids)} model ids")
    extra = {k: v for k, v in doc.items() if k not in ("format", "kind", "model_ids", "weights")}
    return WeightsFile(kind, mids, w, extra)


# -- QA -----------------------------------------------------------------------

def store_qa_scores(path, X: QaScoreTensor) -> None:
    examples = [
        {"example_id": eid,
         "scores": {mid: X.scores[b, i].tolist() for i, mid in enumerate(X.model_ids)}}
        for b, eid in enumerate(X.example_ids)
    ]
    write_json(path, {"format": FMT_QA, "model_ids": list(X.model_ids), "examples": examples})


def load_qa_scores(path) -> QaScoreTensor:
    doc = read_json(path, FMT_QA)
    mids = [str(m) for m in _field(doc, "model_ids", path, list)]
    records = _field(doc, "examples", path, list)
    if not records or not mids:
        raise SchemaError(f"{path}: need at least one model and one example")
    n_ans = None
    eids, rows = [], []
    for b, rec in enumerate(records):
        where = f"examples[{b}]."
        if not isinstance(rec, dict):
            raise SchemaError(f"{path}: examples[{b}] must be an object")
        eids.append(str(_field(rec, "example_id", path, where=where)))
        per_model = _field(rec, "scores", path, dict, where)
        row = []
        for mid in mids:
            vec = per_model.get(mid)
            loc = f"{path}: {where}scores[{mid!r}]"
            if not isinstance(vec, list):
                raise SchemaError(f"{loc}: missing score vector")
            n_ans = len(vec) if n_ans is None else n_ans
            if len(vec) != n_ans or n_ans == 0:
                raise SchemaError(f"{loc}: {len(vec)} answers, expected {n_ans}")
            row.append([_number(v, f"{loc}[{a}]") for a, v in enumerate(vec)])
        rows.append(row)
    return _wrap(path, QaScoreTensor, np.array(rows), tuple(eids), tuple(mids))


def store_qa_labels(path, example_ids: Sequence[str], labels: QaLabels) -> None:
    write_json(path, {
        "format": FMT_LABELS,
        "n_answers": labels.n_answers,
        "labels": {eid: int(y) for eid, y in zip(example_ids, labels.labels)},
    })


def load_qa_labels(path, example_ids: Sequence[str] | None = None) -> tuple[tuple[str, ...], QaLabels]:
    """Labels in file order, or in ``example_ids`` order when given."""
    doc = read_json(path, FMT_LABELS)
    n_ans = _index(_field(doc, "n_answers", path), f"{path}: n_answers")
    table = _field(doc, "labels", path, dict)
    order = list(table) if example_ids is None else list(example_ids)
    ys = []
    for eid in order:
        if eid not in table:
            raise SchemaError(f"{path}: no label for example {eid!r}")
        ys.append(_index(table[eid], f"{path}: labels[{eid!r}]"))
    return tuple(order), _wrap(path, QaLabels, np.array(ys, dtype=np.int64), n_ans)


def store_qa_predictions(path, example_ids: Sequence[str], predictions) -> None:
    write_json(path, {"format": FMT_PREDICTIONS, "example_ids": list(example_ids),
                      "predictions": [int(p) for p in predictions]})


def load_qa_predictions(path) -> tuple[tuple[str, ...], np.ndarray]:
    doc = read_json(path, FMT_PREDICTIONS)
    eids = tuple(map(str, _field(doc, "example_ids", path, list)))
    preds = [_index(p, f"{path}: predictions[{i}]")
             for i, p in enumerate(_field(doc, "predictions", path, list))]
    if len(preds) != len(eids):
        raise SchemaError(f"{path}: {len(preds)} predictions for {len(eids)} examples")
    return eids, np.array(preds, dtype=np.int64)


# -- captions and embeddings --------------------------------------------------

def store_caption_sets(path, sets: Sequence[CaptionSet]) -> None:
    write_json(path, {"format": FMT_CAPTIONS, "sets": [
        {"video_id": cs.video_id,
         "captions": [{"model_id": m, "text": t} for m, t in cs.captions]}
        for cs in sets
    ]})


def load_caption_sets(path) -> list[CaptionSet]:
    doc = read_json(path, FMT_CAPTIONS)
    out = []
    for v, rec in enumerate(_field(doc, "sets", path, list)):
        where = f"sets[{v}]."
        if not isinstance(rec, dict):
            raise SchemaError(f"{path}: sets[{v}] must be an object")
        vid = str(_field(rec, "video_id", path, where=where))
        caps = []
        for c, cap in enumerate(_field(rec, "captions", path, list, where)):
            w = f"{where}captions[{c}]."
            if not isinstance(cap, dict):
                raise SchemaError(f"{path}: {w[:-1]} must be an object")
            caps.append((str(_field(cap, "model_id", path, where=w)),
                         _field(cap, "text", path, str, w)))
        out.append(_wrap(path, CaptionSet, vid, tuple(caps)))
    return out


def store_embeddings(path, provider: PrecomputedEmbeddings) -> None:
    write_json(path, {
        "format": FMT_EMBEDDINGS,
        "provider_id": provider.provider_id,
        "dim": provider.dim,
        "embeddings": {t: v.tolist() for t, v in provider.table.items()},
    })


def load_embeddings(path) -> PrecomputedEmbeddings:
    doc = read_json(path, FMT_EMBEDDINGS)
    pid = str(_field(doc, "provider_id", path))
    dim = _index(_field(doc, "dim", path), f"{path}: dim")
    table = _field(doc, "embeddings", path, dict)
    for text, vec in table.items():
        loc = f"{path}: embeddings[{text!r}]"
        if not isinstance(vec, list):
            raise SchemaError(f"{loc}: expected a list of numbers")
        if len(vec) != dim:
            raise SchemaError(f"{loc}: caption {text!r} has dimension {len(vec)}, expected {dim}")
        for i, x in enumerate(vec):
            _number(x, f"{loc}[{i}]")
    try:
        return PrecomputedEmbeddings(pid, table)
    except SchemaError as e:
        raise SchemaError(f"{path}: {e}") from None


# -- moments ------------------------------------------------------------------

def store_moments(path, queries: Mapping[str, Sequence[MomentCandidate]]) -> None:
    write_json(path, {"format": FMT_MOMENTS, "queries": [
        {"query_id": qid, "candidates": [
            {"video_id": c.video_id, "t_start": c.t_start, "t_end": c.t_end, "score": c.score}
            for c in cands]}
        for qid, cands in queries.items()
    ]})


def load_moments(path) -> dict[str, list[MomentCandidate]]:
    doc = read_json(path, FMT_MOMENTS)
    out: dict[str, list[MomentCandidate]] = {}
    for q, rec in enumerate(_field(doc, "queries", path, list)):
        where = f"queries[{q}]."
        if not isinstance(rec, dict):
            raise SchemaError(f"{path}: queries[{q}] must be an object")
        qid = str(_field(rec, "query_id", path, where=where))
        if qid in out:
            raise SchemaError(f"{path}: {where}query_id: duplicate {qid!r}")
        cands = []
        for c, cand in enumerate(_field(rec, "candidates", path, list, where)):
            w = f"{where}candidates[{c}]."
            if not isinstance(cand, dict):
                raise SchemaError(f"{path}: {w[:-1]} must be an object")
            vals = [_number(_field(cand, k, path, where=w), f"{path}: {w}{k}")
                    for k in ("t_start", "t_end", "score")]
            cands.append(_wrap(f"{path}: {w[:-1]}", MomentCandidate,
                               str(_field(cand, "video_id", path, where=w)), *vals))
        out[qid] = cands
    return out


# -- model records ------------------------------------------------------------

def store_model_records(path, records: Sequence[ModelRecord]) -> None:
    write_json(path, {"format": FMT_MODELS, "models": [
        {"model_id": r.model_id, "validation_score": r.validation_score,
         "prediction_path": r.prediction_path} for r in records
    ]})


def load_model_records(path) -> list[ModelRecord]:
    doc = read_json(path, FMT_MODELS)
    out = []
    for i, rec in enumerate(_field(doc, "models", path, list)):
        where = f"models[{i}]."
        if not isinstance(rec, dict):
            raise SchemaError(f"{path}: models[{i}] must be an object")
        out.append(ModelRecord(
            str(_field(rec, "model_id", path, where=where)),
            _number(_field(rec, "validation_score", path, where=where),
                    f"{path}: {where}validation_score"),
            str(rec.get("prediction_path", "")),
        ))
    return out


# -- subtitles ----------------------------------------------------------------

def load_subtitles(path) -> list[dict]:
    """Items ``{"id", "subtitle", "regions"}``; ``regions`` may be absent or null."""
    doc = read_json(path, FMT_SUBTITLES)
    items = []
    for i, rec in enumerate(_field(doc, "items", path, list)):
        where = f"items[{i}]."
        if not isinstance(rec, dict):
            raise SchemaError(f"{path}: items[{i}] must be an object")
        sub = _field(rec, "subtitle", path, str, where)
        regions = rec.get("regions")
        if regions is not None:
            if not isinstance(regions, list) or not all(
                isinstance(r, list) and all(isinstance(x, str) for x in r) for r in regions
            ):
                raise SchemaError(f"{path}: {where}regions: expected a list of string lists")
        items.append({"id": str(rec.get("id", i)), "subtitle": sub, "regions": regions})
    return items
