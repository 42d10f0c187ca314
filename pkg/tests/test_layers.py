import numpy as np
import pytest

from gcblane.autodiff import Value
from gcblane.errors import ConfigError
from gcblane.graph import normalized_path_adjacency
from gcblane.layers import (
    AttentionBlock,
    BatchNorm,
    BiLSTM,
    Conv1D,
    ConvBlock,
    Dense,
    GCNConv,
    LSTM,
    MinCutPool,
    MultiHeadAttention,
    PReLU,
    SpatialDropout1D,
    coarsen,
    glorot_uniform,
    lstm_cell,
    orthogonal,
)


def gen(seed=0):
    return np.random.default_rng(seed)


# ------------------------------------------------------------------ inits

def test_glorot_bounds_and_determinism():
    limit = np.sqrt(6.0 / (40 + 60))
    w1 = glorot_uniform(gen(7), (40, 60), 40, 60)
    w2 = glorot_uniform(gen(7), (40, 60), 40, 60)
    assert np.abs(w1).max() <= limit
    assert np.array_equal(w1, w2)
    assert w1.dtype == np.float32


def test_orthogonal_rows_orthonormal():
    for shape in ((8, 32), (16, 64), (64, 256)):
        r = orthogonal(gen(3), shape)
        assert r.shape == shape
        assert np.allclose(r @ r.T, np.eye(shape[0]), atol=1e-5)


# ------------------------------------------------------------------ pointwise

def test_prelu_examples():
    layer = PReLU(1)
    out = layer.forward(Value(np.array([[3.0], [-2.0], [0.0]])))
    assert np.allclose(out.data, [[3.0], [-0.5], [0.0]])


def test_prelu_slope_one_is_identity():
    layer = PReLU(4, init=1.0)
    x = np.linspace(-2, 2, 12).reshape(3, 4)
    assert np.allclose(layer.forward(Value(x.astype(np.float32))).data, x, atol=1e-7)


def test_prelu_slope_is_per_channel():
    layer = PReLU(2)
    layer.a.data[:] = [0.0, 1.0]
    out = layer.forward(Value(np.array([[-4.0, -4.0]])))
    assert np.allclose(out.data, [[0.0, -4.0]])


def test_dropout_identity_when_not_training():
    layer = SpatialDropout1D(0.5)
    x = Value(np.ones((2, 5, 3)))
    assert layer.forward(x, training=False) is x


def test_dropout_rate_zero_identity_in_training():
    layer = SpatialDropout1D(0.0)
    x = Value(np.ones((2, 5, 3)))
    assert layer.forward(x, training=True, rng=gen()) is x


def test_dropout_drops_whole_channels_with_inverted_scaling():
    layer = SpatialDropout1D(0.4)
    x = Value(np.ones((4, 10, 8), dtype=np.float32))
    out = layer.forward(x, training=True, rng=gen(5)).data
    scale = 1.0 / 0.6
    for b in range(4):
        for c in range(8):
            channel = out[b, :, c]
            assert np.all(channel == 0.0) or np.allclose(channel, scale)
    assert (out == 0).any()
    assert (out != 0).any()


def test_dropout_needs_rng_in_training():
    with pytest.raises(ConfigError):
        SpatialDropout1D(0.5).forward(Value(np.ones((1, 2, 3))), training=True)


def test_dropout_rejects_bad_rate():
    with pytest.raises(ConfigError):
        SpatialDropout1D(1.0)
    with pytest.raises(ConfigError):
        SpatialDropout1D(-0.1)


def test_batchnorm_constant_batch_maps_to_beta():
    layer = BatchNorm(3)
    layer.beta.data[:] = [1.0, -2.0, 0.5]
    x = Value(np.full((4, 7, 3), 9.0, dtype=np.float32))
    out = layer.forward(x, training=True)
    assert np.allclose(out.data, np.broadcast_to([1.0, -2.0, 0.5], (4, 7, 3)), atol=1e-6)


def test_batchnorm_train_normalizes_batch():
    rng = gen(1)
    layer = BatchNorm(5)
    x = Value(rng.standard_normal((8, 11, 5)).astype(np.float32) * 3 + 2)
    out = layer.forward(x, training=True).data
    assert np.allclose(out.mean(axis=(0, 1)), 0.0, atol=1e-5)
    # biased variance shrunk slightly by eps
    assert np.allclose(out.var(axis=(0, 1)), 1.0, atol=2e-3)


def test_batchnorm_running_stats_ema():
    layer = BatchNorm(2)
    x = np.stack([np.full((4, 3), 2.0), np.full((4, 3), -1.0)], axis=-1).astype(np.float32)
    layer.forward(Value(x), training=True)
    assert np.allclose(layer.buffers["running_mean"], [0.1 * 2.0, 0.1 * -1.0], atol=1e-7)
    assert np.allclose(layer.buffers["running_var"], [0.9, 0.9], atol=1e-7)  # batch var 0


def test_batchnorm_inference_uses_frozen_stats():
    layer = BatchNorm(3)
    x = np.array([[[1.0, -4.0, 2.5]]], dtype=np.float32)
    out = layer.forward(Value(x), training=False)
    assert np.allclose(out.data, x / np.sqrt(1.0 + 1e-3), atol=1e-7)
    # inference must not touch the buffers
    assert np.array_equal(layer.buffers["running_mean"], np.zeros(3, dtype=np.float32))


# ------------------------------------------------------------------ conv stack

def test_dense_shapes_and_bias():
    layer = Dense(gen(2), 6, 3)
    layer.weight.data[:] = 0.0
    layer.bias.data[:] = [1.0, 2.0, 3.0]
    out = layer.forward(Value(np.ones((4, 6))))
    assert np.allclose(out.data, np.broadcast_to([1.0, 2.0, 3.0], (4, 3)))


def test_conv1d_layer_shape():
    layer = Conv1D(gen(3), in_channels=4, filters=16, kernel=11)
    out = layer.forward(Value(np.ones((2, 101, 4), dtype=np.float32)))
    assert out.shape == (2, 101, 16)
    assert layer.weight.shape == (11, 4, 16)


def test_conv_block_shapes_along_the_stack():
    rng = gen(4)
    x = Value(rng.standard_normal((2, 101, 4)).astype(np.float32))
    b1 = ConvBlock(rng, 4, 256, 11, pool_size=2, pool_stride=1, pool_padding="same", dropout=0.0)
    b3 = ConvBlock(rng, 128, 64, 5, pool_size=2, pool_stride=2, pool_padding="valid", dropout=0.0)
    b4 = ConvBlock(rng, 64, 64, 3, pool_size=2, pool_stride=2, pool_padding="valid", dropout=0.0)
    h1 = b1.forward(x)
    assert h1.shape == (2, 101, 256)
    h3 = b3.forward(Value(rng.standard_normal((2, 101, 128)).astype(np.float32)))
    assert h3.shape == (2, 50, 64)
    h4 = b4.forward(h3)
    assert h4.shape == (2, 25, 64)


def test_conv_block_trace_names():
    rng = gen(5)
    block = ConvBlock(rng, 4, 8, 3, 2, 1, "same", dropout=0.0)
    trace = []
    block.forward(Value(np.ones((1, 10, 4), dtype=np.float32)), trace=trace, prefix="blk/")
    assert [name for name, _ in trace] == ["blk/conv", "blk/prelu", "blk/dropout", "blk/pool", "blk/norm"]
    assert trace[0][1] == (10, 8)


# ------------------------------------------------------------------ attention

def test_attention_weights_uniform_when_query_key_zero():
    mha = MultiHeadAttention(gen(6), d_model=8, heads=2)
    for name in ("q", "k"):
        mha.children[name].weight.data[:] = 0.0
        mha.children[name].bias.data[:] = 0.0
    x = Value(np.random.default_rng(0).standard_normal((3, 5, 8)).astype(np.float32))
    _, weights = mha.forward(x, return_weights=True)
    assert weights.shape == (3, 2, 5, 5)
    assert np.allclose(weights.data, 0.2, atol=1e-6)


def test_attention_weights_row_stochastic():
    mha = MultiHeadAttention(gen(7), d_model=64, heads=8)
    x = Value(np.random.default_rng(1).standard_normal((2, 25, 64)).astype(np.float32))
    out, weights = mha.forward(x, return_weights=True)
    assert out.shape == (2, 25, 64)
    assert np.allclose(weights.data.sum(axis=-1), 1.0, atol=1e-6)
    assert weights.data.min() >= 0.0


def test_attention_single_step_weight_is_one():
    mha = MultiHeadAttention(gen(8), d_model=4, heads=2)
    x = Value(np.ones((1, 1, 4), dtype=np.float32))
    _, weights = mha.forward(x, return_weights=True)
    assert np.allclose(weights.data, 1.0)


def test_attention_rejects_indivisible_heads():
    with pytest.raises(ConfigError):
        MultiHeadAttention(gen(9), d_model=10, heads=3)


def test_attention_block_is_gated_product():
    rng = gen(10)
    block = AttentionBlock(rng, in_channels=32, d_model=16, heads=4)
    x = Value(np.random.default_rng(2).standard_normal((2, 9, 32)).astype(np.float32))
    out = block.forward(x)
    c = block.conv.forward(x)
    m = block.attention.forward(c)
    assert np.array_equal(out.data, (c * m).data)
    assert out.shape == (2, 9, 16)


# ------------------------------------------------------------------ recurrent

def zero_cell_params(input_dim, hidden):
    kernel = Value(np.zeros((input_dim, 4 * hidden), dtype=np.float32))
    recurrent = Value(np.zeros((hidden, 4 * hidden), dtype=np.float32))
    bias = Value(np.zeros(4 * hidden, dtype=np.float32))
    return kernel, recurrent, bias


def test_lstm_cell_forget_gate_carries_state():
    hidden = 3
    kernel, recurrent, bias = zero_cell_params(2, hidden)
    bias.data[0 * hidden : 1 * hidden] = -20.0  # input gate closed
    bias.data[1 * hidden : 2 * hidden] = 20.0   # forget gate open
    c_prev = Value(np.array([[0.3, -0.7, 1.2]], dtype=np.float32))
    h_prev = Value(np.zeros((1, hidden), dtype=np.float32))
    x_t = Value(np.ones((1, 2), dtype=np.float32))
    h, c = lstm_cell(x_t, h_prev, c_prev, kernel, recurrent, bias)
    assert np.allclose(c.data, c_prev.data, atol=1e-6)
    assert np.allclose(h.data, 0.5 * np.tanh(c_prev.data), atol=1e-6)  # o = sigmoid(0)


def test_lstm_cell_closed_gates_reset_state():
    hidden = 2
    kernel, recurrent, bias = zero_cell_params(2, hidden)
    bias.data[0 * hidden : 1 * hidden] = 20.0   # input open, candidate tanh(0)=0
    bias.data[1 * hidden : 2 * hidden] = -20.0  # forget closed
    c_prev = Value(np.array([[5.0, -5.0]], dtype=np.float32))
    h, c = lstm_cell(Value(np.ones((1, 2), dtype=np.float32)), Value(np.zeros((1, 2), dtype=np.float32)), c_prev, kernel, recurrent, bias)
    assert np.allclose(c.data, 0.0, atol=1e-6)
    assert np.allclose(h.data, 0.0, atol=1e-6)


def test_lstm_forget_bias_initialized_to_one():
    layer = LSTM(gen(11), input_dim=4, hidden=6)
    bias = layer.bias.data
    assert np.array_equal(bias[6:12], np.ones(6, dtype=np.float32))
    assert np.array_equal(bias[:6], np.zeros(6, dtype=np.float32))
    assert np.array_equal(bias[12:], np.zeros(12, dtype=np.float32))


def test_lstm_output_shapes():
    layer = LSTM(gen(12), input_dim=8, hidden=5)
    x = Value(np.random.default_rng(3).standard_normal((2, 7, 8)).astype(np.float32))
    assert layer.forward(x).shape == (2, 5)
    assert layer.forward(x, return_sequences=True).shape == (2, 7, 5)


def test_lstm_final_state_matches_manual_unroll():
    layer = LSTM(gen(13), input_dim=3, hidden=4)
    x = np.random.default_rng(4).standard_normal((2, 5, 3)).astype(np.float32)
    h = Value(np.zeros((2, 4), dtype=np.float32))
    c = Value(np.zeros((2, 4), dtype=np.float32))
    xv = Value(x)
    for t in range(5):
        h, c = lstm_cell(xv[:, t, :], h, c, layer.kernel, layer.recurrent, layer.bias)
    assert np.allclose(layer.forward(Value(x)).data, h.data, atol=1e-6)


def test_backwards_lstm_reverses_time():
    layer = LSTM(gen(14), input_dim=3, hidden=4, go_backwards=True)
    x = np.random.default_rng(5).standard_normal((1, 6, 3)).astype(np.float32)
    out = layer.forward(Value(x)).data
    # feeding the reversed sequence to an identical forward LSTM gives the same final state
    fwd = LSTM(gen(14), input_dim=3, hidden=4)
    assert np.allclose(fwd.forward(Value(x[:, ::-1, :].copy())).data, out, atol=1e-6)


def test_bilstm_sums_directions():
    layer = BiLSTM(gen(15), input_dim=3, hidden=4)
    x = Value(np.random.default_rng(6).standard_normal((2, 5, 3)).astype(np.float32))
    out = layer.forward(x)
    assert out.shape == (2, 5, 4)  # sum keeps the hidden width
    f = layer.fwd.forward(x, return_sequences=True)
    b = layer.bwd.forward(x, return_sequences=True)
    assert np.allclose(out.data, f.data + b.data, atol=1e-7)


def test_bilstm_parameter_count():
    layer = BiLSTM(gen(16), input_dim=64, hidden=64)
    assert layer.parameter_count() == 2 * (64 * 256 + 64 * 256 + 256)


# ------------------------------------------------------------------ graph layers

def test_gcn_single_node_is_dense_relu():
    layer = GCNConv(gen(17), 4, 6)
    x = np.random.default_rng(7).standard_normal((1, 1, 4)).astype(np.float32)
    out = layer.forward(Value(x), Value(np.ones((1, 1), dtype=np.float32)))
    expected = np.maximum(x @ layer.weight.data + layer.bias.data, 0.0)
    assert np.allclose(out.data, expected, atol=1e-6)


def test_gcn_shape_on_window_graph():
    layer = GCNConv(gen(18), 12, 128)
    a = Value(normalized_path_adjacency(99))
    x = Value(np.random.default_rng(8).standard_normal((2, 99, 12)).astype(np.float32))
    assert layer.forward(x, a).shape == (2, 99, 128)


def test_gcn_disconnected_components_independent():
    layer = GCNConv(gen(19), 3, 5)
    a = np.zeros((4, 4), dtype=np.float32)
    a[0, 1] = a[1, 0] = 1.0
    a[2, 3] = a[3, 2] = 1.0
    from gcblane.graph import normalize_adjacency
    a_norm = Value(normalize_adjacency(a))
    rng = np.random.default_rng(9)
    x1 = rng.standard_normal((1, 4, 3)).astype(np.float32)
    x2 = x1.copy()
    x2[0, 2:] += 1.0  # perturb only the second component
    out1 = layer.forward(Value(x1), a_norm).data
    out2 = layer.forward(Value(x2), a_norm).data
    assert np.array_equal(out1[0, :2], out2[0, :2])
    assert not np.allclose(out1[0, 2:], out2[0, 2:])


def test_coarsen_with_hard_assignment():
    x = np.arange(12, dtype=np.float32).reshape(1, 4, 3)
    a = np.array([[0, 1, 0, 0], [1, 0, 1, 0], [0, 1, 0, 1], [0, 0, 1, 0]], dtype=np.float32)[None]
    s = np.array([[1, 0], [1, 0], [0, 1], [0, 1]], dtype=np.float32)[None]
    pooled_x, pooled_a = coarsen(Value(x), Value(a), Value(s))
    assert np.allclose(pooled_x.data[0], [x[0, 0] + x[0, 1], x[0, 2] + x[0, 3]])
    # edges: inside {0,1}: 1; inside {2,3}: 1; across: 1 (node 1-2)
    assert np.allclose(pooled_a.data[0], [[2.0, 1.0], [1.0, 2.0]])


def test_mincut_pool_contract():
    pool = MinCutPool(gen(20), in_features=16, clusters=5)
    x = Value(np.random.default_rng(10).standard_normal((3, 20, 16)).astype(np.float32))
    a = Value(normalized_path_adjacency(20))
    pooled_x, pooled_a, cut, ortho = pool.forward(x, a)
    assert pooled_x.shape == (3, 5, 16)
    assert pooled_a.shape == (3, 5, 5)
    s = pool.assignments(x)
    assert np.allclose(s.data.sum(axis=-1), 1.0, atol=1e-6)
    assert np.allclose(pooled_a.data, pooled_a.data.transpose(0, 2, 1), atol=1e-5)
    assert np.allclose(np.diagonal(pooled_a.data, axis1=1, axis2=2), 0.0, atol=1e-7)
    assert -1.0 - 1e-5 <= float(cut.data) <= 0.0
    assert 0.0 <= float(ortho.data) <= np.sqrt(2.0) + 1e-5
    assert pooled_a.data.min() >= 0.0


def test_mincut_rejects_cluster_count_at_or_above_nodes():
    pool = MinCutPool(gen(21), in_features=4, clusters=6)
    x = Value(np.ones((1, 6, 4), dtype=np.float32))
    with pytest.raises(ConfigError):
        pool.forward(x, Value(np.eye(6, dtype=np.float32)))


def test_mincut_uniform_assignment_minimizes_ortho_target_distance():
    # With weight=0 and bias=0 every node gets the uniform assignment row;
    # S^T S / ||.|| equals J/K / (N/K) scaled, far from I/sqrt(K): ortho > 0.
    pool = MinCutPool(gen(22), in_features=4, clusters=2)
    pool.weight.data[:] = 0.0
    x = Value(np.ones((1, 8, 4), dtype=np.float32))
    a = Value(normalized_path_adjacency(8))
    _, _, cut, ortho = pool.forward(x, a)
    # uniform S: S^T A S proportional to total weight; cut loss == -1 exactly
    assert np.isclose(float(cut.data), -1.0, atol=1e-6)
    gram = np.full((2, 2), 4.0)  # S^T S for N=8, K=2 uniform
    expected = np.linalg.norm(gram / np.linalg.norm(gram) - np.eye(2) / np.sqrt(2))
    assert np.isclose(float(ortho.data), expected, atol=1e-5)


# ------------------------------------------------------------------ module plumbing

def test_named_parameters_use_slash_prefixes():
    block = ConvBlock(gen(23), 4, 8, 3, 2, 1, "same", dropout=0.1)
    names = [n for n, _ in block.named_parameters()]
    assert names == [
        "conv/weight", "conv/bias", "prelu/alpha", "norm/gamma", "norm/beta",
    ]
    buffer_names = [n for n, _ in block.named_buffers()]
    assert buffer_names == ["norm/running_mean", "norm/running_var"]


def test_zero_grad_clears_all():
    layer = Dense(gen(24), 3, 2)
    out = layer.forward(Value(np.ones((4, 3), dtype=np.float32))).sum()
    out.backward()
    assert layer.weight.grad is not None
    layer.zero_grad()
    assert layer.weight.grad is None
    assert layer.bias.grad is None
