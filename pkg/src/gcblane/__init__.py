"""Sequence-only transcription factor binding site prediction.

A dual-branch neural network over DNA windows: a convolutional/attention/
recurrent branch reads the one-hot sequence, a graph branch reads the
positional k-mer graph, and a softmax head combines both. Everything runs
on a from-scratch reverse-mode autodiff engine over numpy, trained with
Adam and a transfer-learning (pretrain, then fine-tune) workflow.
"""

from .autodiff import Value, grad_check, no_grad
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import SequenceDataset
from .encoding import EncodedSequence, encode_record, one_hot_encode
from .fasta import NucleotideSequence, parse_fasta, write_fasta
from .graph import DeBruijnGraph, build_debruijn, normalize_adjacency
from .manifest import DatasetManifest, build_manifest, load_manifest, load_split
from .metrics import MetricsReport, compute_report, evaluate, pr_auc, roc_auc
from .model import Model, ModelConfig
from .shuffle import dinucleotide_shuffle
from .training import FitResult, TrainConfig, cross_entropy, finetune, fit

__version__ = "0.1.0"

__all__ = [
    "Value",
    "grad_check",
    "no_grad",
    "load_checkpoint",
    "save_checkpoint",
    "SequenceDataset",
    "EncodedSequence",
    "encode_record",
    "one_hot_encode",
    "NucleotideSequence",
    "parse_fasta",
    "write_fasta",
    "DeBruijnGraph",
    "build_debruijn",
    "normalize_adjacency",
    "DatasetManifest",
    "build_manifest",
    "load_manifest",
    "load_split",
    "MetricsReport",
    "compute_report",
    "evaluate",
    "pr_auc",
    "roc_auc",
    "Model",
    "ModelConfig",
    "dinucleotide_shuffle",
    "FitResult",
    "TrainConfig",
    "cross_entropy",
    "finetune",
    "fit",
]
