"""Positional k-mer graph construction for the model's graph branch.

Each window becomes a chain graph: node i is the k-mer starting at
position i (so an L-base window yields L-k+1 nodes), and consecutive
k-mers, which overlap in k-1 bases, are joined by an undirected edge.
Repeated identical k-mers stay separate nodes; long-range interaction is
the job of the stacked graph convolutions, not of extra edges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoding import one_hot_encode
from .errors import GraphConstructionError
from .fasta import NucleotideSequence


@dataclass
class DeBruijnGraph:
    """node_features is (N, 4k) {0,1}; adjacency is (N, N) {0,1}, zero diagonal."""

    k: int
    kmers: list[str]
    node_features: np.ndarray
    adjacency: np.ndarray
    norm_adjacency: np.ndarray


def path_adjacency(num_nodes: int) -> np.ndarray:
    """Binary adjacency of the chain graph on num_nodes nodes."""
    a = np.zeros((num_nodes, num_nodes), dtype=np.float32)
    idx = np.arange(num_nodes - 1)
    a[idx, idx + 1] = 1.0
    a[idx + 1, idx] = 1.0
    return a


def normalize_adjacency(adjacency: np.ndarray) -> np.ndarray:
    """Return D^(-1/2) (A + I) D^(-1/2) with D the degree matrix of A + I.

    Computed as outer(d^-1/2, d^-1/2) * (A + I) so the result is bitwise
    symmetric whenever the input is.
    """
    adjacency = np.asarray(adjacency)
    if adjacency.ndim != 2 or adjacency.shape[0] != adjacency.shape[1]:
        raise GraphConstructionError(f"adjacency must be square, got shape {adjacency.shape}")
    if not np.array_equal(adjacency, adjacency.T):
        raise GraphConstructionError("adjacency must be symmetric")
    with_loops = adjacency + np.eye(adjacency.shape[0], dtype=adjacency.dtype)
    dinv_sqrt = 1.0 / np.sqrt(with_loops.sum(axis=1))
    return (np.outer(dinv_sqrt, dinv_sqrt) * with_loops).astype(adjacency.dtype)


def normalized_path_adjacency(num_nodes: int) -> np.ndarray:
    """Normalized adjacency shared by every window of the same length."""
    return normalize_adjacency(path_adjacency(num_nodes))


def build_debruijn(seq: NucleotideSequence | str, k: int = 3) -> DeBruijnGraph:
    """Build the positional k-mer graph of a window.

    Node features are the k concatenated one-hot rows of the k-mer, giving
    width 4k (12 for the default k=3).
    """
    bases = seq.bases if isinstance(seq, NucleotideSequence) else seq
    if k < 2:
        raise GraphConstructionError(f"k must be at least 2, got {k}")
    if len(bases) < k:
        raise GraphConstructionError(f"sequence of length {len(bases)} is shorter than k={k}")

    onehot = one_hot_encode(bases)
    num_nodes = len(bases) - k + 1
    # Row i = rows [i, i+k) of the window's one-hot matrix, flattened.
    windows = np.lib.stride_tricks.sliding_window_view(onehot, (k, 4)).reshape(num_nodes, 4 * k)
    features = np.ascontiguousarray(windows, dtype=np.float32)

    adjacency = path_adjacency(num_nodes)
    return DeBruijnGraph(
        k=k,
        kmers=[bases[i : i + k] for i in range(num_nodes)],
        node_features=features,
        adjacency=adjacency,
        norm_adjacency=normalize_adjacency(adjacency),
    )


def graph_to_json_dict(graph: DeBruijnGraph) -> dict:
    """Debug dump: {k, nodes:[kmer strings], edges:[[i, j]]}."""
    edges = [[int(i), int(j)] for i, j in zip(*np.nonzero(np.triu(graph.adjacency)))]
    return {"k": graph.k, "nodes": list(graph.kmers), "edges": edges}
