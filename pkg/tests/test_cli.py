import json

import numpy as np
import pytest

from valfuse import io
from valfuse.cli import main
from valfuse.types import ModelRecord, RetrievalGroundTruth, SimilarityMatrix


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, (json.loads(out.out) if code == 0 else None), out.err


@pytest.fixture
def retrieval_dir(tmp_path, capsys):
    d = tmp_path / "ret"
    code, _, _ = run(capsys, "synth", "retrieval", "--out-dir", d, "--seed", 3, "--n-queries", 40,
                     "--n-gallery", 20, "--quality", 0.4, 0.7)
    assert code == 0
    return d


@pytest.fixture
def qa_dir(tmp_path, capsys):
    d = tmp_path / "qa"
    assert run(capsys, "synth", "qa", "--out-dir", d, "--n-queries", 30, "--n-models", 2,
               "--quality", 1.0, 0.3)[0] == 0
    return d


def test_optimize_and_apply(retrieval_dir, tmp_path, capsys):
    d = retrieval_dir
    w = tmp_path / "w.json"
    code, rep, _ = run(capsys, "ensemble-retrieval", "optimize", "--matrices", d / "model0.json",
                       d / "model1.json", "--gt", d / "gt.json", "--out", w, "--steps", 40)
    assert code == 0
    assert rep["model_ids"] == ["model0", "model1"]
    assert rep["objective"] >= max(rep["single_model_objectives"]) - 1e-12
    assert sum(rep["weights"]) == pytest.approx(1.0, abs=1e-9)
    fused = tmp_path / "fused.json"
    code, rep2, _ = run(capsys, "ensemble-retrieval", "apply", "--matrices", d / "model0.json",
                        d / "model1.json", "--weights", w, "--out", fused, "--gt", d / "gt.json")
    assert code == 0
    assert rep2["mean_recall"] == pytest.approx(rep["objective"], abs=1e-12)
    assert rep2["shape"] == [40, 20]


def test_threads_env_does_not_change_result(retrieval_dir, tmp_path, capsys, monkeypatch):
    d = retrieval_dir
    args = ["ensemble-retrieval", "optimize", "--matrices", d / "model0.json", d / "model1.json",
            "--gt", d / "gt.json", "--steps", 30]
    _, a, _ = run(capsys, *args, "--out", tmp_path / "a.json")
    monkeypatch.setenv("VALFUSE_THREADS", "4")
    _, b, _ = run(capsys, *args, "--out", tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert a["weights"] == b["weights"]
    monkeypatch.setenv("VALFUSE_THREADS", "many")
    assert run(capsys, *args, "--out", tmp_path / "c.json")[0] == 2


def test_evaluate_identity_is_one(tmp_path, capsys):
    io.store_similarity_matrix(tmp_path / "m.json", SimilarityMatrix(np.eye(12)))
    io.store_ground_truth(tmp_path / "gt.json", RetrievalGroundTruth.diagonal(12))
    code, rep, _ = run(capsys, "evaluate", "--metric", "mean-recall", "--matrix", tmp_path / "m.json",
                       "--gt", tmp_path / "gt.json")
    assert code == 0 and rep["value"] == 1.0 and rep["percent"] == 100.0
    code, rep, _ = run(capsys, "evaluate", "--metric", "recall", "--k", 5,
                       "--matrix", tmp_path / "m.json", "--gt", tmp_path / "gt.json")
    assert rep["value"] == 1.0 and rep["k"] == 5


def test_evaluate_meta_average(capsys):
    code, rep, _ = run(capsys, "evaluate", "--metric", "meta-average", "--scores", 35.02, 73.01, 85.95)
    assert code == 0 and rep["value"] == pytest.approx(64.66, abs=1e-9)


def test_qa_train_predict_evaluate(qa_dir, tmp_path, capsys):
    w, preds = tmp_path / "w.json", tmp_path / "p.json"
    code, rep, _ = run(capsys, "ensemble-qa", "train", "--scores", qa_dir / "qa_scores.json",
                       "--labels", qa_dir / "qa_labels.json", "--out", w)
    assert code == 0 and rep["train_accuracy"] == 1.0
    assert rep["weights"][0] > rep["weights"][1]
    code, rep, _ = run(capsys, "ensemble-qa", "predict", "--scores", qa_dir / "qa_scores.json",
                       "--weights", w, "--out", preds, "--labels", qa_dir / "qa_labels.json")
    assert code == 0 and rep["accuracy"] == 1.0
    code, rep, _ = run(capsys, "evaluate", "--metric", "accuracy", "--predictions", preds,
                       "--labels", qa_dir / "qa_labels.json")
    assert rep["value"] == 1.0


def test_qa_divergence_exit_4(tmp_path, capsys):
    from valfuse.types import QaLabels, QaScoreTensor
    X = QaScoreTensor(np.array([[[1e200, -1e200]]]))
    io.store_qa_scores(tmp_path / "s.json", X)
    io.store_qa_labels(tmp_path / "l.json", X.example_ids, QaLabels(np.array([1]), 2))
    code, _, err = run(capsys, "ensemble-qa", "train", "--scores", tmp_path / "s.json",
                       "--labels", tmp_path / "l.json", "--out", tmp_path / "w.json", "--lr", 1e200)
    assert code == 4 and "epoch" in err
    assert not (tmp_path / "w.json").exists()


def test_caption_select(tmp_path, capsys):
    d = tmp_path / "cap"
    run(capsys, "synth", "captions", "--out-dir", d, "--n-queries", 5, "--n-models", 5, "--quality", 0.6)
    code, rep, _ = run(capsys, "ensemble-caption", "select", "--captions", d / "captions.json",
                       "--out", tmp_path / "sel.json")
    assert code == 0 and rep["providers"] == ["trigram"]
    refs = json.loads((d / "references.json").read_text())["references"]
    results = json.loads((tmp_path / "sel.json").read_text())["results"]
    assert all(r["selected_text"] == refs[r["video_id"]] for r in results)


def test_caption_select_with_embeddings(tmp_path, capsys):
    from valfuse.types import CaptionSet
    io.store_caption_sets(tmp_path / "c.json", [CaptionSet("v", (("a", "x"), ("b", "y"), ("c", "z")))])
    from valfuse.caption import PrecomputedEmbeddings
    io.store_embeddings(tmp_path / "e.json",
                        PrecomputedEmbeddings("ext", {"x": [1, 0], "y": [1, 1], "z": [0, 1]}))
    code, rep, _ = run(capsys, "ensemble-caption", "select", "--captions", tmp_path / "c.json",
                       "--embeddings", tmp_path / "e.json", "--no-builtin", "--out", tmp_path / "s.json")
    assert code == 0 and rep["providers"] == ["ext"]
    assert json.loads((tmp_path / "s.json").read_text())["results"][0]["selected_text"] == "y"
    io.store_embeddings(tmp_path / "e2.json", PrecomputedEmbeddings("ext", {"x": [1, 0]}))
    code, _, err = run(capsys, "ensemble-caption", "select", "--captions", tmp_path / "c.json",
                       "--embeddings", tmp_path / "e2.json", "--out", tmp_path / "s.json")
    assert code == 3 and "'y'" in err
    assert run(capsys, "ensemble-caption", "select", "--captions", tmp_path / "c.json",
               "--no-builtin", "--out", tmp_path / "s.json")[0] == 2


def test_vcmr_nms_and_fuse(tmp_path, capsys):
    d = tmp_path / "mo"
    run(capsys, "synth", "moments", "--out-dir", d, "--n-queries", 3, "--n-models", 2,
        "--n-candidates", 300)
    code, rep, _ = run(capsys, "vcmr", "nms", "--candidates", d / "moments0.json",
                       "--out", tmp_path / "n.json", "--max-keep", 10)
    assert code == 0 and rep["kept"] <= 30
    kept = io.load_moments(tmp_path / "n.json")
    assert all(len(v) <= 10 for v in kept.values())
    code, rep, _ = run(capsys, "vcmr", "fuse", "--candidates", d / "moments0.json", d / "moments1.json",
                       "--out", tmp_path / "f.json")
    assert code == 0 and rep["weights"] == [0.5, 0.5]
    fused = io.load_moments(tmp_path / "f.json")
    for cands in fused.values():
        scores = [c.score for c in cands]
        assert scores == sorted(scores, reverse=True) and len(cands) <= 100


def test_select_topk(tmp_path, capsys):
    recs = [ModelRecord(f"m{i:02d}", float(i % 7)) for i in range(40)]
    io.store_model_records(tmp_path / "r.json", recs)
    code, rep, _ = run(capsys, "select-topk", "--models", tmp_path / "r.json", "--k", 3,
                       "--out", tmp_path / "o.json")
    assert code == 0 and rep["selected"] == ["m06", "m13", "m20"]
    assert [r.model_id for r in io.load_model_records(tmp_path / "o.json")] == rep["selected"]
    assert run(capsys, "select-topk", "--models", tmp_path / "r.json")[0] == 2
    assert run(capsys, "select-topk", "--models", tmp_path / "r.json", "--k", 0)[0] == 2


def test_augment_subtitles(tmp_path, capsys):
    src = tmp_path / "s.json"
    src.write_text(json.dumps({"format": io.FMT_SUBTITLES, "items": [
        {"id": "a", "subtitle": "hello", "regions": [["man", "person"], ["cup"]]},
        {"id": "b", "subtitle": "bye", "regions": None}]}))
    code, rep, _ = run(capsys, "augment-subtitles", "--input", src, "--out", tmp_path / "o.json")
    assert code == 0 and rep["n_augmented"] == 1
    items = json.loads((tmp_path / "o.json").read_text())["items"]
    assert items[1]["text"] == "bye" and items[0]["text"].startswith("hello [SEP] ")


def test_exit_codes(tmp_path, capsys):
    assert run(capsys, "evaluate", "--metric", "mean-recall")[0] == 2
    assert run(capsys, "evaluate", "--metric", "mean-recall", "--matrix", tmp_path / "x.json",
               "--gt", tmp_path / "y.json")[0] == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code, _, err = run(capsys, "evaluate", "--metric", "mean-recall", "--matrix", bad, "--gt", bad)
    assert code == 3 and "line 1" in err
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2


def test_mismatched_gt_is_schema_error(tmp_path, capsys):
    io.store_similarity_matrix(tmp_path / "m.json", SimilarityMatrix(np.eye(3)))
    io.store_ground_truth(tmp_path / "gt.json", RetrievalGroundTruth.diagonal(5))
    code, _, _ = run(capsys, "ensemble-retrieval", "optimize", "--matrices", tmp_path / "m.json",
                     "--gt", tmp_path / "gt.json", "--out", tmp_path / "w.json")
    assert code == 3


def test_synth_is_deterministic(tmp_path, capsys):
    for kind in ("retrieval", "qa", "captions", "moments"):
        for d in ("a", "b"):
            run(capsys, "synth", kind, "--out-dir", tmp_path / d, "--n-queries", 5, "--seed", 9)
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert len(names) >= 8
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
