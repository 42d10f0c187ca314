"""Exception types shared across the package.

The CLI maps these onto stable exit codes; see gcblane.cli.
"""


class GcblaneError(Exception):
    """Base class for all package errors."""


class FastaParseError(GcblaneError):
    """Structurally malformed FASTA input (carries a line number)."""


class SequenceValidationError(GcblaneError):
    """Sequence contains characters outside {A,C,G,T,N}."""


class ShuffleError(GcblaneError):
    """Sequence cannot be dinucleotide-shuffled (too short, or contains N)."""


class DataError(GcblaneError):
    """Dataset-level problem (empty positive set, missing split, mixed labels)."""


class GraphConstructionError(GcblaneError):
    """Sequence shorter than the k-mer order, or adjacency contract violated."""


class ShapeMismatchError(GcblaneError):
    """Array shapes do not conform for an autodiff primitive."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {' and '.join(str(s) for s in shapes)}")


class AutodiffContractError(GcblaneError):
    """Misuse of the differentiation engine (e.g. backward on a non-scalar)."""


class ConfigError(GcblaneError):
    """Invalid or unknown configuration field."""


class CheckpointError(GcblaneError):
    """Checkpoint file rejected: bad magic/version, truncated payload, or config mismatch."""


class TrainingDiverged(GcblaneError):
    """Non-finite loss or gradient encountered during optimization."""


class MetricUndefinedError(GcblaneError):
    """Metric has no defined value for the given inputs (e.g. single-class ROC-AUC)."""
