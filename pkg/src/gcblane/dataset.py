"""In-memory dataset: encoded windows grouped by length for batching.

Sequences are encoded once at construction. Windows of equal length share
one normalized adjacency (every window of length L yields the same chain
graph), so a batch carries a single (N, N) matrix that broadcasts across
the batch dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoding import one_hot_encode
from .errors import DataError
from .fasta import NucleotideSequence
from .graph import normalized_path_adjacency

# Feature width per graph node is 4k; node count is L - k + 1.


@dataclass
class Batch:
    seq: np.ndarray  # (B, L, 4) float32
    graph: np.ndarray  # (B, N, 4k) float32
    adjacency: np.ndarray  # (N, N) float32, shared across the batch
    labels: np.ndarray | None  # (B, 2) float32 one-hot, None when unlabeled
    indices: np.ndarray  # (B,) positions in the dataset's original order


class _Group:
    def __init__(self, length: int, k: int):
        self.length = length
        self.adjacency = normalized_path_adjacency(length - k + 1)
        self.seq: list[np.ndarray] = []
        self.graph: list[np.ndarray] = []
        self.labels: list[int | None] = []
        self.indices: list[int] = []


class SequenceDataset:
    """Encoded, length-grouped view of a list of records."""

    def __init__(self, records: list[NucleotideSequence], k: int = 3, require_labels: bool = True):
        if not records:
            raise DataError("dataset is empty")
        self.k = k
        self.size = len(records)
        self.ids = [rec.id for rec in records]
        groups: dict[int, _Group] = {}
        labels: list[int | None] = []
        for idx, rec in enumerate(records):
            if len(rec.bases) < k:
                raise DataError(f"record {rec.id!r} is shorter ({len(rec.bases)}) than k={k}")
            if require_labels and rec.label is None:
                raise DataError(f"record {rec.id!r} has no label")
            group = groups.setdefault(len(rec.bases), _Group(len(rec.bases), k))
            onehot = one_hot_encode(rec.bases)
            num_nodes = len(rec.bases) - k + 1
            windows = np.lib.stride_tricks.sliding_window_view(onehot, (k, 4)).reshape(num_nodes, 4 * k)
            group.seq.append(onehot)
            group.graph.append(np.ascontiguousarray(windows, dtype=np.float32))
            group.labels.append(rec.label)
            group.indices.append(idx)
            labels.append(rec.label)
        self._groups = [groups[length] for length in sorted(groups)]
        for g in self._groups:
            g.seq = np.stack(g.seq)
            g.graph = np.stack(g.graph)
            g.indices = np.asarray(g.indices, dtype=np.int64)
            if all(lbl is not None for lbl in g.labels):
                onehot = np.zeros((len(g.labels), 2), dtype=np.float32)
                onehot[np.arange(len(g.labels)), np.asarray(g.labels, dtype=np.int64)] = 1.0
                g.labels = onehot
            else:
                g.labels = None
        self.labels = (
            np.asarray(labels, dtype=np.int64) if all(lbl is not None for lbl in labels) else None
        )

    def class_counts(self) -> tuple[int, int]:
        if self.labels is None:
            raise DataError("dataset has unlabeled records")
        positives = int(self.labels.sum())
        return self.size - positives, positives

    def batches(self, batch_size: int, rng: np.random.Generator | None = None):
        """Yield Batches covering the dataset exactly once.

        With an RNG, sample order within each length group and the order of
        the batches themselves are both shuffled; the final short batch is
        kept. Without one, order is deterministic by (length, input order).
        """
        if batch_size < 1:
            raise DataError(f"batch size must be >= 1, got {batch_size}")
        plan: list[tuple[_Group, np.ndarray]] = []
        for group in self._groups:
            n = len(group.indices)
            order = rng.permutation(n) if rng is not None else np.arange(n)
            for start in range(0, n, batch_size):
                plan.append((group, order[start : start + batch_size]))
        if rng is not None:
            plan = [plan[i] for i in rng.permutation(len(plan))]
        for group, rows in plan:
            yield Batch(
                seq=group.seq[rows],
                graph=group.graph[rows],
                adjacency=group.adjacency,
                labels=None if group.labels is None else group.labels[rows],
                indices=group.indices[rows],
            )
