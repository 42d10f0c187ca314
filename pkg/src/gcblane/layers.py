"""Differentiable layers: convolution blocks, attention, LSTMs, graph layers.

Each layer is a Module holding named parameters (and, for batch norm,
running-statistic buffers) plus a forward method. Parameter paths follow
"block/child/name" so checkpoints are self-describing.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Value, concat, conv1d, maxpool1d, softmax
from .errors import ConfigError, ShapeMismatchError

# -- initializers --------------------------------------------------------------


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


def orthogonal(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    """Orthogonal rows/columns via QR with the sign fix that makes Q unique."""
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    # C-contiguous so checkpoint round trips reproduce matmul bit-exactly
    return np.ascontiguousarray(q[:rows, :cols], dtype=np.float32)


# -- module base ---------------------------------------------------------------


class Module:
    """Parameter container with deterministic traversal order."""

    def __init__(self):
        self.params: dict[str, Value] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.children: dict[str, Module] = {}

    def param(self, name: str, array: np.ndarray) -> Value:
        v = Value(np.asarray(array, dtype=np.float32), requires_grad=True)
        self.params[name] = v
        return v

    def buffer(self, name: str, array: np.ndarray) -> np.ndarray:
        arr = np.asarray(array, dtype=np.float32)
        self.buffers[name] = arr
        return arr

    def child(self, name: str, module: "Module") -> "Module":
        self.children[name] = module
        return module

    def named_parameters(self, prefix: str = ""):
        for key, v in self.params.items():
            yield prefix + key, v
        for name, mod in self.children.items():
            yield from mod.named_parameters(f"{prefix}{name}/")

    def named_buffers(self, prefix: str = ""):
        for key, arr in self.buffers.items():
            yield prefix + key, arr
        for name, mod in self.children.items():
            yield from mod.named_buffers(f"{prefix}{name}/")

    def parameter_count(self) -> int:
        return sum(v.data.size for _, v in self.named_parameters())

    def zero_grad(self) -> None:
        for _, v in self.named_parameters():
            v.zero_grad()

    def cast_(self, dtype) -> "Module":
        """In-place dtype change; float64 mode exists for gradient checking."""
        for key, v in self.params.items():
            v.data = v.data.astype(dtype)
        for key in self.buffers:
            self.buffers[key] = self.buffers[key].astype(dtype)
        for mod in self.children.values():
            mod.cast_(dtype)
        return self


# -- elementwise / pointwise ---------------------------------------------------


class PReLU(Module):
    """max(0,x) + a*min(0,x) with one learnable slope per channel."""

    def __init__(self, channels: int, init: float = 0.25):
        super().__init__()
        self.a = self.param("alpha", np.full(channels, init, dtype=np.float32))

    def forward(self, x: Value) -> Value:
        return x.relu() - self.a * (-x).relu()


class SpatialDropout1D(Module):
    """Drops whole channels: the mask is (batch, 1, channels).

    Inverted scaling at train time; identity at inference and at rate 0.
    """

    def __init__(self, rate: float):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x: Value, training: bool = False, rng: np.random.Generator | None = None) -> Value:
        if not training or self.rate == 0.0:
            return x
        if rng is None:
            raise ConfigError("spatial dropout in training mode needs an RNG")
        keep = 1.0 - self.rate
        batch, _, channels = x.shape
        mask = (rng.random((batch, 1, channels)) < keep).astype(x.data.dtype) / keep
        return x * Value(mask)


class BatchNorm(Module):
    """Channel-wise batch normalization over (batch, time) positions.

    Training normalizes with (biased) batch statistics and updates the
    running moments by exponential moving average; inference applies the
    frozen affine map from the running moments.
    """

    # momentum 0.9 warms the running moments within a few dozen batches, so
    # validation scores are meaningful on small corpora as well as large ones
    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-3):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = self.param("gamma", np.ones(channels, dtype=np.float32))
        self.beta = self.param("beta", np.zeros(channels, dtype=np.float32))
        self.buffer("running_mean", np.zeros(channels, dtype=np.float32))
        self.buffer("running_var", np.ones(channels, dtype=np.float32))

    def forward(self, x: Value, training: bool = False) -> Value:
        axes = tuple(range(x.ndim - 1))
        if training:
            mean = x.mean(axis=axes, keepdims=True)
            var = ((x - mean) * (x - mean)).mean(axis=axes, keepdims=True)
            m = self.momentum
            self.buffers["running_mean"][:] = m * self.buffers["running_mean"] + (1 - m) * mean.data.reshape(-1)
            self.buffers["running_var"][:] = m * self.buffers["running_var"] + (1 - m) * var.data.reshape(-1)
        else:
            mean = Value(self.buffers["running_mean"])
            var = Value(self.buffers["running_var"])
        xn = (x - mean) / ((var + self.eps) ** 0.5)
        return self.gamma * xn + self.beta


class Dense(Module):
    def __init__(self, rng: np.random.Generator, in_features: int, out_features: int):
        super().__init__()
        self.weight = self.param("weight", glorot_uniform(rng, (in_features, out_features), in_features, out_features))
        self.bias = self.param("bias", np.zeros(out_features, dtype=np.float32))

    def forward(self, x: Value) -> Value:
        return x @ self.weight + self.bias


# -- convolutional stack ---------------------------------------------------------


class Conv1D(Module):
    """1-D cross-correlation with 'same' padding and stride 1."""

    def __init__(self, rng: np.random.Generator, in_channels: int, filters: int, kernel: int):
        super().__init__()
        self.weight = self.param(
            "weight", glorot_uniform(rng, (kernel, in_channels, filters), kernel * in_channels, kernel * filters)
        )
        self.bias = self.param("bias", np.zeros(filters, dtype=np.float32))

    def forward(self, x: Value) -> Value:
        return conv1d(x, self.weight, self.bias)


class ConvBlock(Module):
    """Conv -> PReLU -> spatial dropout -> max pool -> batch norm."""

    def __init__(
        self,
        rng: np.random.Generator,
        in_channels: int,
        filters: int,
        kernel: int,
        pool_size: int,
        pool_stride: int,
        pool_padding: str,
        dropout: float,
    ):
        super().__init__()
        self.pool_size = pool_size
        self.pool_stride = pool_stride
        self.pool_padding = pool_padding
        self.conv = self.child("conv", Conv1D(rng, in_channels, filters, kernel))
        self.prelu = self.child("prelu", PReLU(filters))
        self.drop = self.child("dropout", SpatialDropout1D(dropout))
        self.norm = self.child("norm", BatchNorm(filters))

    def forward(
        self,
        x: Value,
        training: bool = False,
        rng: np.random.Generator | None = None,
        trace: list | None = None,
        prefix: str = "",
    ) -> Value:
        def rec(name: str, v: Value) -> Value:
            if trace is not None:
                trace.append((prefix + name, tuple(v.shape[1:])))
            return v

        h = rec("conv", self.conv.forward(x))
        h = rec("prelu", self.prelu.forward(h))
        h = rec("dropout", self.drop.forward(h, training=training, rng=rng))
        h = rec("pool", maxpool1d(h, self.pool_size, self.pool_stride, self.pool_padding))
        return rec("norm", self.norm.forward(h, training=training))


# -- attention -------------------------------------------------------------------


class MultiHeadAttention(Module):
    """Self-attention: per head softmax(QK^T / sqrt(d_k)) V, heads concatenated
    and projected back to model width."""

    def __init__(self, rng: np.random.Generator, d_model: int, heads: int):
        super().__init__()
        if d_model % heads != 0:
            raise ConfigError(f"attention width {d_model} is not divisible by {heads} heads")
        self.d_model = d_model
        self.heads = heads
        self.d_k = d_model // heads
        for name in ("q", "k", "v", "out"):
            self.child(name, Dense(rng, d_model, d_model))

    def forward(self, x: Value, return_weights: bool = False):
        if x.shape[-1] != self.d_model:
            raise ShapeMismatchError("multi_head_attention", x.shape, (self.d_model,))
        batch, steps, _ = x.shape

        def split(v: Value) -> Value:
            return v.reshape(batch, steps, self.heads, self.d_k).transpose(0, 2, 1, 3)

        q = split(self.children["q"].forward(x))
        k = split(self.children["k"].forward(x))
        v = split(self.children["v"].forward(x))
        logits = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(self.d_k))
        weights = softmax(logits, axis=-1)
        mixed = (weights @ v).transpose(0, 2, 1, 3).reshape(batch, steps, self.d_model)
        out = self.children["out"].forward(mixed)
        if return_weights:
            return out, weights
        return out


class AttentionBlock(Module):
    """Linear width-1 conv C, attended copy M, gated output C*M."""

    def __init__(self, rng: np.random.Generator, in_channels: int, d_model: int = 64, heads: int = 8):
        super().__init__()
        self.conv = self.child("conv", Conv1D(rng, in_channels, d_model, kernel=1))
        self.attention = self.child("attention", MultiHeadAttention(rng, d_model, heads))

    def forward(self, x: Value, trace: list | None = None, prefix: str = "") -> Value:
        def rec(name: str, v: Value) -> Value:
            if trace is not None:
                trace.append((prefix + name, tuple(v.shape[1:])))
            return v

        c = rec("conv", self.conv.forward(x))
        m = rec("attention", self.attention.forward(c))
        return rec("multiply", c * m)


# -- recurrent --------------------------------------------------------------------


def lstm_cell(x_t: Value, h_prev: Value, c_prev: Value, kernel: Value, recurrent: Value, bias: Value) -> tuple[Value, Value]:
    """One step. Gate layout along the last axis is (input, forget, candidate, output)."""
    hidden = h_prev.shape[-1]
    z = x_t @ kernel + h_prev @ recurrent + bias
    i = z[:, 0 * hidden : 1 * hidden].sigmoid()
    f = z[:, 1 * hidden : 2 * hidden].sigmoid()
    g = z[:, 2 * hidden : 3 * hidden].tanh()
    o = z[:, 3 * hidden : 4 * hidden].sigmoid()
    c_t = f * c_prev + i * g
    h_t = o * c_t.tanh()
    return h_t, c_t


class LSTM(Module):
    """Unidirectional LSTM; orthogonal recurrent kernel, forget bias 1."""

    def __init__(self, rng: np.random.Generator, input_dim: int, hidden: int, go_backwards: bool = False):
        super().__init__()
        self.hidden = hidden
        self.go_backwards = go_backwards
        self.kernel = self.param("kernel", glorot_uniform(rng, (input_dim, 4 * hidden), input_dim, 4 * hidden))
        self.recurrent = self.param("recurrent", orthogonal(rng, (hidden, 4 * hidden)))
        bias = np.zeros(4 * hidden, dtype=np.float32)
        bias[hidden : 2 * hidden] = 1.0
        self.bias = self.param("bias", bias)

    def forward(self, x: Value, return_sequences: bool = False) -> Value:
        batch, steps, _ = x.shape
        order = range(steps - 1, -1, -1) if self.go_backwards else range(steps)
        h = Value(np.zeros((batch, self.hidden), dtype=x.data.dtype))
        c = Value(np.zeros((batch, self.hidden), dtype=x.data.dtype))
        outputs: list[Value | None] = [None] * steps
        for t in order:
            h, c = lstm_cell(x[:, t, :], h, c, self.kernel, self.recurrent, self.bias)
            outputs[t] = h
        if not return_sequences:
            return h
        return concat([o.reshape(batch, 1, self.hidden) for o in outputs], axis=1)


class BiLSTM(Module):
    """Forward and backward LSTMs whose per-step outputs are summed."""

    def __init__(self, rng: np.random.Generator, input_dim: int, hidden: int):
        super().__init__()
        self.fwd = self.child("forward", LSTM(rng, input_dim, hidden))
        self.bwd = self.child("backward", LSTM(rng, input_dim, hidden, go_backwards=True))

    def forward(self, x: Value) -> Value:
        return self.fwd.forward(x, return_sequences=True) + self.bwd.forward(x, return_sequences=True)


# -- graph ----------------------------------------------------------------------------


class GCNConv(Module):
    """ReLU(A_norm @ X @ W + b) with a precomputed normalized adjacency."""

    def __init__(self, rng: np.random.Generator, in_features: int, out_features: int):
        super().__init__()
        self.weight = self.param("weight", glorot_uniform(rng, (in_features, out_features), in_features, out_features))
        self.bias = self.param("bias", np.zeros(out_features, dtype=np.float32))

    def forward(self, x: Value, a_norm: Value) -> Value:
        if x.shape[-2] != a_norm.shape[-1]:
            raise ShapeMismatchError("gcn_conv", x.shape, a_norm.shape)
        return (a_norm @ (x @ self.weight) + self.bias).relu()


def coarsen(x: Value, a: Value, s: Value) -> tuple[Value, Value]:
    """Pooled features S^T X and pooled adjacency S^T A S for a given assignment."""
    st = s.transpose(0, 2, 1) if s.ndim == 3 else s.T
    return st @ x, st @ (a @ s)


class MinCutPool(Module):
    """Soft cluster pooling with its two auxiliary losses.

    Returns pooled features, the renormalized pooled adjacency (diagonal
    zeroed, then symmetric degree normalization), and scalar (cut, ortho)
    losses averaged over the batch.
    """

    def __init__(self, rng: np.random.Generator, in_features: int, clusters: int):
        super().__init__()
        self.clusters = clusters
        self.weight = self.param("weight", glorot_uniform(rng, (in_features, clusters), in_features, clusters))
        self.bias = self.param("bias", np.zeros(clusters, dtype=np.float32))

    def assignments(self, x: Value) -> Value:
        return softmax(x @ self.weight + self.bias, axis=-1)

    def forward(self, x: Value, a: Value) -> tuple[Value, Value, Value, Value]:
        num_nodes = x.shape[-2]
        if self.clusters >= num_nodes:
            raise ConfigError(f"cluster count {self.clusters} must be below node count {num_nodes}")
        if a.ndim == 2:
            a = a.broadcast_to((x.shape[0],) + a.shape)
        s = self.assignments(x)
        pooled_x, pooled_a = coarsen(x, a, s)

        # Cut loss: -Tr(S^T A S) / Tr(S^T D S), per sample, then batch mean.
        numerator = (s * (a @ s)).sum(axis=(1, 2))
        degree = a.sum(axis=-1, keepdims=True)
        denominator = (s * (degree * s)).sum(axis=(1, 2))
        cut_loss = (-(numerator / denominator)).mean()

        # Orthogonality loss: || S^T S / ||S^T S||_F - I/sqrt(K) ||_F.
        gram = s.transpose(0, 2, 1) @ s
        gram_norm = (gram * gram).sum(axis=(1, 2), keepdims=True) ** 0.5
        target = Value(np.eye(self.clusters, dtype=x.data.dtype) / np.sqrt(self.clusters))
        diff = gram / gram_norm - target
        ortho_loss = (((diff * diff).sum(axis=(1, 2))) ** 0.5).mean()

        # Renormalize the coarse adjacency for the next graph layer.
        off_diagonal = Value(1.0 - np.eye(self.clusters, dtype=x.data.dtype))
        pooled_a = pooled_a * off_diagonal
        dinv = (pooled_a.sum(axis=-1, keepdims=True) + 1e-9) ** -0.5
        pooled_a = dinv * pooled_a * dinv.transpose(0, 2, 1)
        return pooled_x, pooled_a, cut_loss, ortho_loss
