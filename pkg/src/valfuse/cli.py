"""``valfuse`` command line.

Every subcommand prints a JSON report on stdout and writes its artifacts to
the paths given. Exit status: 0 ok, 2 argument error, 3 schema error,
4 computation error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .caption import builtin_provider, select_caption
from .errors import ArgumentError, ValfuseError
from .metrics import accuracy, mean_recall, meta_average, recall_at_k
from .qa import QaTrainConfig, qa_predict, train_qa_weights
from .retrieval import (
    DEFAULT_IOU,
    DEFAULT_MAX_KEEP,
    DEFAULT_STEPS,
    FusionProblem,
    evaluate_weights,
    fuse_matrices,
    fuse_moments,
    nms_moments,
    optimize_retrieval_weights,
)
from .selection import DEFAULT_TOP_K, augment_subtitle_with_concepts, default_top_k, select_top_k_models
from .synth import SynthConfig, gen_caption_sets, gen_moments, gen_qa_problem, gen_retrieval_problem
from .tpe import TpeConfig
from .types import EnsembleWeights

THREADS_ENV = "VALFUSE_THREADS"


def _emit(report: dict) -> None:
    sys.stdout.write(json.dumps(report, indent=2, sort_keys=True) + "\n")


def _model_ids(paths) -> list[str]:
    stems = [Path(p).stem for p in paths]
    return stems if len(set(stems)) == len(stems) else [str(p) for p in paths]


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ArgumentError(f"{THREADS_ENV}={raw!r} is not an integer") from None
    if n < 1:
        raise ArgumentError(f"{THREADS_ENV} must be >= 1")
    return n


# -- retrieval ----------------------------------------------------------------

def cmd_retrieval_optimize(args) -> dict:
    mats = [io.load_similarity_matrix(p) for p in args.matrices]
    gt = io.load_ground_truth(args.gt)
    try:
        problem = FusionProblem(tuple(mats), gt)
    except ArgumentError as e:
        raise io.SchemaError(f"inputs do not form a fusion problem: {e}") from None
    cfg = TpeConfig(gamma=args.gamma, n_startup=args.startup, n_candidates=args.candidates)
    threads = args.threads if args.threads is not None else _default_threads()
    w, objective = optimize_retrieval_weights(problem, args.steps, args.seed, cfg, n_jobs=threads)
    ids = _model_ids(args.matrices)
    singles = [evaluate_weights(problem, np.eye(len(mats))[i]) for i in range(len(mats))]
    io.store_weights(args.out, "retrieval", ids, w.weights, objective=objective,
                     steps=args.steps, seed=args.seed)
    return {
        "command": "ensemble-retrieval optimize",
        "steps": args.steps,
        "seed": args.seed,
        "tpe": {"gamma": cfg.gamma, "n_startup": cfg.n_startup, "n_candidates": cfg.n_candidates},
        "model_ids": ids,
        "weights": w.tolist(),
        "objective": objective,
        "single_model_objectives": singles,
        "output": str(args.out),
    }


def cmd_retrieval_apply(args) -> dict:
    mats = [io.load_similarity_matrix(p) for p in args.matrices]
    wf = io.load_weights(args.weights)
    fused = fuse_matrices(mats, wf.ensemble_weights())
    io.store_similarity_matrix(args.out, fused)
    report = {"command": "ensemble-retrieval apply", "weights": list(wf.weights),
              "shape": [fused.n_queries, fused.n_gallery], "output": str(args.out)}
    if args.gt:
        report["mean_recall"] = mean_recall(fused, io.load_ground_truth(args.gt))
    return report


# -- moment retrieval ---------------------------------------------------------

def cmd_vcmr_nms(args) -> dict:
    queries = io.load_moments(args.candidates)
    out = {q: nms_moments(c, args.iou, args.max_keep) for q, c in queries.items()}
    io.store_moments(args.out, out)
    return {"command": "vcmr nms", "iou": args.iou, "max_keep": args.max_keep,
            "n_queries": len(out), "kept": sum(len(c) for c in out.values()),
            "output": str(args.out)}


def cmd_vcmr_fuse(args) -> dict:
    per_model = [io.load_moments(p) for p in args.candidates]
    w = io.load_weights(args.weights).ensemble_weights() if args.weights else \
        EnsembleWeights(np.full(len(per_model), 1.0 / len(per_model)))
    qids = list(per_model[0])
    for p, m in zip(args.candidates, per_model):
        if list(m) != qids:
            raise io.SchemaError(f"{p}: query ids differ from {args.candidates[0]}")
    out = {}
    for q in qids:
        lists = [nms_moments(m[q], args.iou, args.max_keep) for m in per_model]
        out[q] = fuse_moments(lists, w)[: args.max_keep]
    io.store_moments(args.out, out)
    return {"command": "vcmr fuse", "iou": args.iou, "max_keep": args.max_keep,
            "weights": w.tolist(), "n_queries": len(out), "output": str(args.out)}


# -- QA -----------------------------------------------------------------------

def _qa_inputs(args):
    X = io.load_qa_scores(args.scores)
    _, labels = io.load_qa_labels(args.labels, X.example_ids)
    if labels.n_answers != X.n_answers:
        raise io.SchemaError(
            f"{args.labels}: n_answers {labels.n_answers} but scores have {X.n_answers}")
    return X, labels


def cmd_qa_train(args) -> dict:
    X, labels = _qa_inputs(args)
    cfg = QaTrainConfig(args.lr, args.epochs, args.epsilon, args.seed)
    fitted = train_qa_weights(X, labels, cfg)
    io.store_weights(args.out, "qa", X.model_ids, fitted.w,
                     normalized=fitted.normalized.tolist(), final_loss=fitted.final_loss,
                     epochs_run=fitted.epochs_run)
    return {
        "command": "ensemble-qa train",
        "learning_rate": cfg.learning_rate, "max_epochs": cfg.max_epochs,
        "convergence_epsilon": cfg.convergence_epsilon, "seed": cfg.seed,
        "model_ids": list(X.model_ids),
        "weights": fitted.w.tolist(), "normalized_weights": fitted.normalized.tolist(),
        "final_loss": fitted.final_loss, "epochs_run": fitted.epochs_run,
        "train_accuracy": accuracy(qa_predict(X, fitted.w), labels),
        "output": str(args.out),
    }


def cmd_qa_predict(args) -> dict:
    X = io.load_qa_scores(args.scores)
    wf = io.load_weights(args.weights)
    if tuple(wf.model_ids) != X.model_ids:
        raise io.SchemaError(
            f"{args.weights}: model ids {list(wf.model_ids)} do not match scores {list(X.model_ids)}")
    preds = qa_predict(X, wf.weights)
    io.store_qa_predictions(args.out, X.example_ids, preds)
    report = {"command": "ensemble-qa predict", "n_examples": X.n_examples, "output": str(args.out)}
    if args.labels:
        _, labels = io.load_qa_labels(args.labels, X.example_ids)
        report["accuracy"] = accuracy(preds, labels)
    return report


# -- captioning ---------------------------------------------------------------

def cmd_caption_select(args) -> dict:
    sets = io.load_caption_sets(args.captions)
    providers = [builtin_provider()] if not args.no_builtin else []
    providers += [io.load_embeddings(p).as_provider() for p in args.embeddings]
    if not providers:
        raise ArgumentError("no embedding provider: drop --no-builtin or pass --embeddings")
    results = []
    for cs in sets:
        r = select_caption(cs, providers)
        results.append({"video_id": cs.video_id, "selected_index": r.selected_index,
                        "selected_model_id": cs.captions[r.selected_index][0],
                        "selected_text": r.selected_text, "scores": r.scores.tolist()})
    io.write_json(args.out, {"format": io.FMT_SELECTION, "results": results})
    return {"command": "ensemble-caption select",
            "providers": [p.provider_id for p in providers],
            "n_videos": len(sets), "output": str(args.out)}


# -- evaluation / selection / text --------------------------------------------

def _pct(x: float) -> float:
    return round(100.0 * x, 2)


def cmd_evaluate(args) -> dict:
    report = {"command": "evaluate", "metric": args.metric}
    if args.metric in ("mean-recall", "recall"):
        if not (args.matrix and args.gt):
            raise ArgumentError(f"--metric {args.metric} needs --matrix and --gt")
        sim, gt = io.load_similarity_matrix(args.matrix), io.load_ground_truth(args.gt)
        try:
            gt.check_covers(sim)
        except ArgumentError as e:
            raise io.SchemaError(str(e)) from None
        if args.metric == "mean-recall":
            value = mean_recall(sim, gt)
            report["recall"] = {f"R@{k}": recall_at_k(sim, gt, k) for k in (1, 5, 10)}
        else:
            value = recall_at_k(sim, gt, args.k)
            report["k"] = args.k
    elif args.metric == "accuracy":
        if not (args.predictions and args.labels):
            raise ArgumentError("--metric accuracy needs --predictions and --labels")
        eids, preds = io.load_qa_predictions(args.predictions)
        _, labels = io.load_qa_labels(args.labels, eids)
        value = accuracy(preds, labels)
    else:
        if not args.scores:
            raise ArgumentError("--metric meta-average needs --scores")
        value = meta_average(args.scores)
        report["scores"] = list(args.scores)
    report["value"] = value
    if args.metric != "meta-average":
        report["percent"] = _pct(value)
    return report


def cmd_select_topk(args) -> dict:
    if args.k is None and args.macro_task is None:
        raise ArgumentError("select-topk needs --k or --macro-task")
    k = args.k if args.k is not None else default_top_k(args.macro_task)
    chosen = select_top_k_models(io.load_model_records(args.models), k)
    if args.out:
        io.store_model_records(args.out, chosen)
    return {"command": "select-topk", "macro_task": args.macro_task, "k": k,
            "selected": [r.model_id for r in chosen]}


def cmd_augment(args) -> dict:
    items = io.load_subtitles(args.input)
    out = []
    for it in items:
        try:
            text = augment_subtitle_with_concepts(it["subtitle"], it["regions"])
        except ArgumentError as e:
            raise io.SchemaError(f"{args.input}: item {it['id']!r}: {e}") from None
        out.append({"id": it["id"], "text": text})
    io.write_json(args.out, {"format": io.FMT_SUBTITLES + "-augmented", "items": out})
    return {"command": "augment-subtitles", "n_items": len(out),
            "n_augmented": sum(1 for it in items if it["regions"]), "output": str(args.out)}


def cmd_synth(args) -> dict:
    cfg = SynthConfig(seed=args.seed, n_queries=args.n_queries, n_gallery=args.n_gallery,
                      n_models=args.n_models, quality=tuple(args.quality),
                      noise_scale=args.noise_scale, n_answers=args.n_answers,
                      complementary=args.complementary)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if args.kind == "retrieval":
        problem = gen_retrieval_problem(cfg)
        for i, m in enumerate(problem.matrices):
            p = out / f"model{i}.json"
            io.store_similarity_matrix(p, m)
            written.append(p)
        io.store_ground_truth(out / "gt.json", problem.gt)
        written.append(out / "gt.json")
    elif args.kind == "qa":
        X, labels = gen_qa_problem(cfg)
        io.store_qa_scores(out / "qa_scores.json", X)
        io.store_qa_labels(out / "qa_labels.json", X.example_ids, labels)
        written += [out / "qa_scores.json", out / "qa_labels.json"]
    elif args.kind == "captions":
        sets, refs = gen_caption_sets(cfg)
        io.store_caption_sets(out / "captions.json", sets)
        io.write_json(out / "references.json",
                      {"format": "valfuse/caption-references",
                       "references": {cs.video_id: r for cs, r in zip(sets, refs)}})
        written += [out / "captions.json", out / "references.json"]
    else:
        for i in range(cfg.n_models):
            moments = {f"q{j}": gen_moments(cfg, args.n_candidates, stream=i * cfg.n_queries + j)
                       for j in range(cfg.n_queries)}
            p = out / f"moments{i}.json"
            io.store_moments(p, moments)
            written.append(p)
    return {"command": f"synth {args.kind}", "seed": cfg.seed, "quality": list(cfg.quality),
            "files": [str(p) for p in written]}


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="valfuse", description="Task-aware model ensembling.")
    sub = parser.add_subparsers(dest="command", required=True)

    ret = sub.add_parser("ensemble-retrieval", help="similarity-matrix fusion")
    ret_sub = ret.add_subparsers(dest="action", required=True)
    p = ret_sub.add_parser("optimize", help="search fusion weights with TPE")
    p.add_argument("--matrices", nargs="+", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=DEFAULT_STEPS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gamma", type=float, default=0.25)
    p.add_argument("--startup", type=int, default=20)
    p.add_argument("--candidates", type=int, default=24)
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads (default: ${THREADS_ENV} or 1)")
    p.set_defaults(func=cmd_retrieval_optimize)
    p = ret_sub.add_parser("apply", help="fuse matrices with stored weights")
    p.add_argument("--matrices", nargs="+", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gt")
    p.set_defaults(func=cmd_retrieval_apply)

    vcmr = sub.add_parser("vcmr", help="moment retrieval")
    vcmr_sub = vcmr.add_subparsers(dest="action", required=True)
    p = vcmr_sub.add_parser("nms", help="temporal non-maximum suppression")
    p.add_argument("--candidates", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iou", type=float, default=DEFAULT_IOU)
    p.add_argument("--max-keep", type=int, default=DEFAULT_MAX_KEEP)
    p.set_defaults(func=cmd_vcmr_nms)
    p = vcmr_sub.add_parser("fuse", help="per-model NMS, then weighted fusion")
    p.add_argument("--candidates", nargs="+", required=True)
    p.add_argument("--weights")
    p.add_argument("--out", required=True)
    p.add_argument("--iou", type=float, default=DEFAULT_IOU)
    p.add_argument("--max-keep", type=int, default=DEFAULT_MAX_KEEP)
    p.set_defaults(func=cmd_vcmr_fuse)

    qa = sub.add_parser("ensemble-qa", help="linear stacker for QA")
    qa_sub = qa.add_subparsers(dest="action", required=True)
    p = qa_sub.add_parser("train")
    p.add_argument("--scores", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--epsilon", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_qa_train)
    p = qa_sub.add_parser("predict")
    p.add_argument("--scores", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--labels")
    p.set_defaults(func=cmd_qa_predict)

    cap = sub.add_parser("ensemble-caption", help="consensus caption reranking")
    cap_sub = cap.add_subparsers(dest="action", required=True)
    p = cap_sub.add_parser("select")
    p.add_argument("--captions", required=True)
    p.add_argument("--embeddings", nargs="*", default=[])
    p.add_argument("--no-builtin", action="store_true",
                   help="do not use the built-in trigram embedder")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_caption_select)

    p = sub.add_parser("evaluate", help="metrics over result files")
    p.add_argument("--metric", required=True,
                   choices=["mean-recall", "recall", "accuracy", "meta-average"])
    p.add_argument("--matrix")
    p.add_argument("--gt")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--predictions")
    p.add_argument("--labels")
    p.add_argument("--scores", type=float, nargs="+")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("select-topk", help="keep the K best models by validation score")
    p.add_argument("--models", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--macro-task", choices=sorted(DEFAULT_TOP_K))
    p.add_argument("--out")
    p.set_defaults(func=cmd_select_topk)

    p = sub.add_parser("augment-subtitles", help="append visual concepts to subtitles")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("synth", help="write a seeded synthetic problem")
    p.add_argument("kind", choices=["retrieval", "qa", "captions", "moments"])
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-queries", type=int, default=100)
    p.add_argument("--n-gallery", type=int, default=50)
    p.add_argument("--n-models", type=int, default=2)
    p.add_argument("--n-answers", type=int, default=4)
    p.add_argument("--n-candidates", type=int, default=200)
    p.add_argument("--quality", type=float, nargs="+", default=[1.0])
    p.add_argument("--noise-scale", type=float, default=1.0)
    p.add_argument("--complementary", action="store_true")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        report = args.func(args)
    except ValfuseError as e:
        print(f"valfuse: error: {e}", file=sys.stderr)
        return e.exit_code
    _emit(report)
    return 0


if __name__ == "__main__":
    sys.exit(main())
