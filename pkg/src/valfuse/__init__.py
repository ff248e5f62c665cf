"""Task-aware ensembling of video-and-language model predictions.

Three strategies, one per task family:

* retrieval: simplex-weighted fusion of similarity matrices, weights found
  by a Tree-structured Parzen Estimator maximizing mean recall
  (:class:`RetrievalFusion`);
* QA: a bias-free linear stacker over per-model answer scores trained with
  cross-entropy (:class:`LinearStacker`);
* captioning: consensus reranking by mean embedding similarity
  (:class:`ConsensusReranker`).
"""
from .caption import ConsensusReranker, select_caption
from .errors import ArgumentError, ComputationError, EvaluationError, SchemaError, TrainingError
from .metrics import accuracy, mean_recall, meta_average, rank_of_truth, recall_at_k
from .qa import LinearStacker, QaTrainConfig, train_qa_weights
from .retrieval import (
    FusionProblem,
    RetrievalFusion,
    fuse_matrices,
    nms_moments,
    optimize_retrieval_weights,
)
from .tpe import TpeConfig, tpe_maximize
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

__version__ = "0.1.0"

__all__ = [
    "ArgumentError", "CaptionSet", "ComputationError", "ConsensusReranker", "EnsembleWeights",
    "EvaluationError", "FusionProblem", "LinearStacker", "ModelRecord", "MomentCandidate",
    "QaLabels", "QaScoreTensor", "QaTrainConfig", "RetrievalFusion", "RetrievalGroundTruth",
    "SchemaError", "SimilarityMatrix", "TpeConfig", "TrainingError", "accuracy", "fuse_matrices",
    "mean_recall", "meta_average", "nms_moments", "optimize_retrieval_weights", "rank_of_truth",
    "recall_at_k", "select_caption", "tpe_maximize", "train_qa_weights",
]
