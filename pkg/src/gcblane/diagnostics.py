"""Layer-by-layer gradient verification against finite differences.

Shared by the test suite and the `gradcheck` CLI command. Each case builds
a small instance of the real layer code in float64, backpropagates one
scalar, then perturbs every input element and every parameter with central
differences and compares.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Value, softmax
from .graph import normalized_path_adjacency
from .layers import (
    BiLSTM,
    ConvBlock,
    Dense,
    GCNConv,
    LSTM,
    MinCutPool,
    MultiHeadAttention,
    PReLU,
    lstm_cell,
)
from .training import cross_entropy

EPS = 1e-5
TOL = 1e-4


def check_gradients(forward, wrt: dict[str, Value], eps: float = EPS) -> float:
    """Max relative error between backward() grads and central differences.

    forward() must rebuild a scalar Value from the current .data of each
    Value in `wrt` (all float64, requires_grad).
    """
    for v in wrt.values():
        v.zero_grad()
    out = forward()
    out.backward()
    analytic = {
        key: (v.grad.copy() if v.grad is not None else np.zeros_like(v.data)) for key, v in wrt.items()
    }
    worst = 0.0
    for key, v in wrt.items():
        for flat_index in range(v.data.size):
            index = np.unravel_index(flat_index, v.data.shape) if v.data.shape else ()
            original = v.data[index]
            v.data[index] = original + eps
            hi = float(forward().data)
            v.data[index] = original - eps
            lo = float(forward().data)
            v.data[index] = original
            numeric = (hi - lo) / (2.0 * eps)
            a = analytic[key][index]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-3)
            worst = max(worst, rel)
    return worst


def _f64(module):
    module.cast_(np.float64)
    return module


def _input(rng, shape) -> Value:
    return Value(rng.standard_normal(shape), requires_grad=True)


def _with_params(module, x: Value, extra: dict[str, Value] | None = None) -> dict[str, Value]:
    wrt = {"input": x}
    wrt.update({name: p for name, p in module.named_parameters()})
    if extra:
        wrt.update(extra)
    return wrt


# -- one builder per layer type -------------------------------------------------


def _case_prelu(rng):
    layer = _f64(PReLU(3))
    x = _input(rng, (2, 4, 3))
    return lambda: layer.forward(x).sum(), _with_params(layer, x)


def _case_conv_block(rng):
    layer = _f64(ConvBlock(rng, 2, 3, kernel=3, pool_size=2, pool_stride=1, pool_padding="same", dropout=0.0))
    x = _input(rng, (2, 6, 2))
    return lambda: layer.forward(x, training=True).sum(), _with_params(layer, x)


def _case_attention(rng):
    layer = _f64(MultiHeadAttention(rng, d_model=4, heads=2))
    x = _input(rng, (2, 3, 4))
    return lambda: layer.forward(x).sum(), _with_params(layer, x)


def _case_lstm_cell(rng):
    kernel = Value(rng.standard_normal((3, 8)), requires_grad=True)
    recurrent = Value(rng.standard_normal((2, 8)), requires_grad=True)
    bias = Value(rng.standard_normal(8), requires_grad=True)
    x = _input(rng, (2, 3))
    h0 = _input(rng, (2, 2))
    c0 = _input(rng, (2, 2))

    def forward():
        h, c = lstm_cell(x, h0, c0, kernel, recurrent, bias)
        return (h + c).sum()

    return forward, {"x": x, "h0": h0, "c0": c0, "kernel": kernel, "recurrent": recurrent, "bias": bias}


def _case_lstm(rng):
    layer = _f64(LSTM(rng, 3, 2))
    x = _input(rng, (2, 4, 3))
    return lambda: layer.forward(x, return_sequences=True).sum(), _with_params(layer, x)


def _case_bilstm(rng):
    layer = _f64(BiLSTM(rng, 3, 2))
    x = _input(rng, (2, 4, 3))
    return lambda: layer.forward(x).sum(), _with_params(layer, x)


def _case_gcn(rng):
    layer = _f64(GCNConv(rng, 3, 4))
    x = _input(rng, (2, 5, 3))
    a = Value(normalized_path_adjacency(5).astype(np.float64))
    return lambda: layer.forward(x, a).sum(), _with_params(layer, x)


def _case_mincut_pool(rng):
    layer = _f64(MinCutPool(rng, 3, clusters=2))
    x = _input(rng, (2, 5, 3))
    a = Value(np.tile(normalized_path_adjacency(5).astype(np.float64), (2, 1, 1)))

    def forward():
        pooled_x, pooled_a, cut, ortho = layer.forward(x, a)
        return pooled_x.sum() + pooled_a.sum() + cut + ortho

    return forward, _with_params(layer, x)


def _case_dense_softmax(rng):
    layer = _f64(Dense(rng, 5, 2))
    x = _input(rng, (3, 5))
    labels = np.eye(2, dtype=np.float64)[rng.integers(0, 2, size=3)]
    return lambda: cross_entropy(softmax(layer.forward(x), axis=-1), labels), _with_params(layer, x)


LAYER_CASES = {
    "prelu": _case_prelu,
    "conv_block": _case_conv_block,
    "multi_head_attention": _case_attention,
    "lstm_cell": _case_lstm_cell,
    "lstm": _case_lstm,
    "bilstm": _case_bilstm,
    "gcn_conv": _case_gcn,
    "mincut_pool": _case_mincut_pool,
    "dense_softmax": _case_dense_softmax,
}


def run_layer_check(name: str, seed: int, eps: float = EPS) -> float:
    rng = np.random.default_rng([seed, 0xD1A6])
    forward, wrt = LAYER_CASES[name](rng)
    return check_gradients(forward, wrt, eps)


def run_all_checks(seeds=range(5), eps: float = EPS, tol: float = TOL) -> list[dict]:
    rows = []
    for name in LAYER_CASES:
        for seed in seeds:
            worst = run_layer_check(name, seed, eps)
            rows.append({"layer": name, "seed": int(seed), "max_rel_error": worst, "passed": bool(worst < tol)})
    return rows
