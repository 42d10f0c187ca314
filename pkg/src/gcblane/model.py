"""The two-branch network and its ablation variants.

Sequence branch: 4 convolution blocks, an attention block, then a BiLSTM
feeding an LSTM, producing a 64-vector. Graph branch: three graph
convolutions interleaved with two cluster-pooling steps, then its own
BiLSTM/LSTM pair, producing a 16-vector. The head is a dense softmax over
the concatenated branch outputs ([sequence | graph] order).

Variants: GCBLANE uses both branches (head width 80), CBLANE the sequence
branch only (64), GNN_ONLY the graph branch only (16).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Value, concat, softmax
from .errors import ConfigError, ShapeMismatchError
from .layers import (
    AttentionBlock,
    BiLSTM,
    ConvBlock,
    Dense,
    GCNConv,
    LSTM,
    MinCutPool,
    Module,
)

VARIANTS = ("GCBLANE", "CBLANE", "GNN_ONLY")


@dataclass
class ModelConfig:
    variant: str = "GCBLANE"
    conv_filters: tuple[int, ...] = (256, 128, 64, 64)
    conv_kernels: tuple[int, ...] = (11, 7, 5, 3)
    pool_sizes: tuple[int, ...] = (2, 2, 2, 2)
    pool_strides: tuple[int, ...] = (1, 1, 2, 2)
    pool_paddings: tuple[str, ...] = ("same", "same", "valid", "valid")
    dropout: float = 0.2
    attention_width: int = 64
    attention_heads: int = 8
    seq_bilstm_hidden: int = 64
    seq_lstm_hidden: int = 64
    k: int = 3
    gcn_widths: tuple[int, ...] = (128, 64, 16)
    cluster_counts: tuple[int, ...] = (40, 12)
    graph_bilstm_hidden: int = 64
    graph_lstm_hidden: int = 16

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        lengths = {len(self.conv_filters), len(self.conv_kernels), len(self.pool_sizes),
                   len(self.pool_strides), len(self.pool_paddings)}
        if lengths != {4}:
            raise ConfigError("conv block settings must all have exactly 4 entries")
        if len(self.gcn_widths) != 3 or len(self.cluster_counts) != 2:
            raise ConfigError("graph branch needs 3 GCN widths and 2 cluster counts")
        if self.attention_width % self.attention_heads != 0:
            raise ConfigError(
                f"attention width {self.attention_width} is not divisible by {self.attention_heads} heads"
            )
        for name in ("conv_filters", "conv_kernels", "pool_sizes", "pool_strides",
                     "gcn_widths", "cluster_counts"):
            if any(v < 1 for v in getattr(self, name)):
                raise ConfigError(f"{name} entries must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.k < 2:
            raise ConfigError(f"k must be at least 2, got {self.k}")

    @property
    def uses_sequence_branch(self) -> bool:
        return self.variant in ("GCBLANE", "CBLANE")

    @property
    def uses_graph_branch(self) -> bool:
        return self.variant in ("GCBLANE", "GNN_ONLY")

    @property
    def head_width(self) -> int:
        width = 0
        if self.uses_sequence_branch:
            width += self.seq_lstm_hidden
        if self.uses_graph_branch:
            width += self.graph_lstm_hidden
        return width

    def to_dict(self) -> dict:
        d = asdict(self)
        for key, value in d.items():
            if isinstance(value, tuple):
                d[key] = list(value)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        kwargs = dict(d)
        for key, value in kwargs.items():
            if isinstance(value, list):
                kwargs[key] = tuple(value)
        return cls(**kwargs)


class Model(Module):
    """Parameter container plus the full forward pass."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        self.config = config
        rng = np.random.default_rng([seed, 0xC0FFEE])

        if config.uses_sequence_branch:
            in_channels = 4
            for i in range(4):
                self.child(f"conv_block_{i + 1}", ConvBlock(
                    rng, in_channels, config.conv_filters[i], config.conv_kernels[i],
                    config.pool_sizes[i], config.pool_strides[i], config.pool_paddings[i],
                    config.dropout,
                ))
                in_channels = config.conv_filters[i]
            self.child("attention_block", AttentionBlock(
                rng, in_channels, config.attention_width, config.attention_heads))
            self.child("seq_bilstm", BiLSTM(rng, config.attention_width, config.seq_bilstm_hidden))
            self.child("seq_lstm", LSTM(rng, config.seq_bilstm_hidden, config.seq_lstm_hidden))

        if config.uses_graph_branch:
            widths = [4 * config.k, *config.gcn_widths]
            self.child("gcn_1", GCNConv(rng, widths[0], widths[1]))
            self.child("pool_1", MinCutPool(rng, widths[1], config.cluster_counts[0]))
            self.child("gcn_2", GCNConv(rng, widths[1], widths[2]))
            self.child("pool_2", MinCutPool(rng, widths[2], config.cluster_counts[1]))
            self.child("gcn_3", GCNConv(rng, widths[2], widths[3]))
            self.child("graph_bilstm", BiLSTM(rng, widths[3], config.graph_bilstm_hidden))
            self.child("graph_lstm", LSTM(rng, config.graph_bilstm_hidden, config.graph_lstm_hidden))

        self.child("head", Dense(rng, config.head_width, 2))

    # -- forward -----------------------------------------------------------

    def forward(
        self,
        seq_x: Value | np.ndarray | None,
        graph_x: Value | np.ndarray | None = None,
        norm_adjacency: Value | np.ndarray | None = None,
        training: bool = False,
        rng: np.random.Generator | None = None,
        trace: list | None = None,
    ) -> tuple[Value, Value, Value]:
        """Return (probabilities (B,2), cut_loss, ortho_loss).

        The auxiliary losses are scalar Values (exact zeros for variants
        without the graph branch). `trace`, if given, collects
        (layer_name, output_shape) pairs for shape conformance checks.
        """
        cfg = self.config

        def record(name: str, value: Value) -> Value:
            if trace is not None:
                trace.append((name, tuple(value.shape[1:])))
            return value

        pieces: list[Value] = []
        zero = Value(np.zeros((), dtype=np.float32))
        cut_total, ortho_total = zero, zero

        if cfg.uses_sequence_branch:
            if seq_x is None:
                raise ConfigError(f"variant {cfg.variant} needs sequence input")
            h = seq_x if isinstance(seq_x, Value) else Value(seq_x)
            if h.ndim != 3 or h.shape[-1] != 4:
                raise ShapeMismatchError("sequence_input", h.shape, ("B", "L", 4))
            record("sequence_input", h)
            for i in range(4):
                name = f"conv_block_{i + 1}"
                h = self.children[name].forward(h, training=training, rng=rng, trace=trace, prefix=f"{name}/")
            h = self.children["attention_block"].forward(h, trace=trace, prefix="attention_block/")
            h = record("seq_bilstm", self.children["seq_bilstm"].forward(h))
            h = record("seq_lstm", self.children["seq_lstm"].forward(h))
            pieces.append(h)

        if cfg.uses_graph_branch:
            if graph_x is None or norm_adjacency is None:
                raise ConfigError(f"variant {cfg.variant} needs graph input and adjacency")
            g = graph_x if isinstance(graph_x, Value) else Value(graph_x)
            a = norm_adjacency if isinstance(norm_adjacency, Value) else Value(norm_adjacency)
            if g.ndim != 3 or g.shape[-1] != 4 * cfg.k:
                raise ShapeMismatchError("graph_input", g.shape, ("B", "N", 4 * cfg.k))
            record("graph_input", g)
            g = record("gcn_1", self.children["gcn_1"].forward(g, a))
            g, a, cut, ortho = self.children["pool_1"].forward(g, a)
            record("pool_1", g)
            cut_total, ortho_total = cut_total + cut, ortho_total + ortho
            g = record("gcn_2", self.children["gcn_2"].forward(g, a))
            g, a, cut, ortho = self.children["pool_2"].forward(g, a)
            record("pool_2", g)
            cut_total, ortho_total = cut_total + cut, ortho_total + ortho
            g = record("gcn_3", self.children["gcn_3"].forward(g, a))
            g = record("graph_bilstm", self.children["graph_bilstm"].forward(g))
            g = record("graph_lstm", self.children["graph_lstm"].forward(g))
            pieces.append(g)

        merged = pieces[0] if len(pieces) == 1 else record("concatenate", concat(pieces, axis=-1))
        logits = self.children["head"].forward(merged)
        probs = record("head", softmax(logits, axis=-1))
        return probs, cut_total, ortho_total

    def parameter_breakdown(self) -> dict[str, int]:
        """Learnable scalar count per top-level block."""
        counts: dict[str, int] = {}
        for name, module in self.children.items():
            counts[name] = module.parameter_count()
        return counts
