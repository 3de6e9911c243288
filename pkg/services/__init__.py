"""Service layer: features, the pairwise network, training, evaluation and storage."""

from .datagen import generate_corpus, split_by_record
from .dataset import SegmentDataset, build_dataset
from .evaluation import compare_decompositions, record_decisions, segment_accuracy
from .network import MultiClassModel, group_scores, predict
from .training import train_model, train_pair

__all__ = [
    "MultiClassModel",
    "SegmentDataset",
    "build_dataset",
    "compare_decompositions",
    "generate_corpus",
    "group_scores",
    "predict",
    "record_decisions",
    "segment_accuracy",
    "split_by_record",
    "train_model",
    "train_pair",
]
