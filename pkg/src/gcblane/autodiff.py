"""Reverse-mode automatic differentiation over numpy arrays.

A Value wraps an ndarray and records how it was computed; backward() walks
the graph once in reverse topological order and accumulates gradients.
Training runs in float32; gradient checking runs the same graph in float64.
Everything is dense: the largest tensors here are a few MB, and dense keeps
the code obvious.
"""

from __future__ import annotations

import contextlib
from collections.abc import Callable, Sequence

import numpy as np

from .errors import AutodiffContractError, ShapeMismatchError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, metric code)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad down to `shape`, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if keep:
        grad = grad.sum(axis=keep, keepdims=True)
    return grad


class Value:
    """An array node in the differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")
    __array_priority__ = 100  # so ndarray + Value dispatches here

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Value):
            raise AutodiffContractError("Value cannot wrap another Value")
        self.data = np.asarray(data)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float32)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad and _grad_enabled
        self._backward: Callable[[np.ndarray], None] | None = None
        self._parents: tuple[Value, ...] = ()

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Value(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def detach(self) -> "Value":
        return Value(self.data)

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Populate grads of every reachable requires_grad node."""
        if self.data.size != 1:
            raise AutodiffContractError(f"backward requires a scalar loss, got shape {self.shape}")
        # Iterative topological sort; recursion would overflow on long
        # unrolled-LSTM chains.
        order: list[Value] = []
        visited: set[int] = set()
        stack: list[tuple[Value, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # Interior gradients are never read after their node has
                # propagated; dropping them halves peak memory. Leaves
                # (parameters, inputs) have no _backward and keep theirs.
                node.grad = None

    # -- helpers ----------------------------------------------------------

    def _lift(self, other) -> "Value":
        if isinstance(other, Value):
            return other
        return Value(np.asarray(other, dtype=self.data.dtype))

    @staticmethod
    def _make(data: np.ndarray, parents: Sequence["Value"], backward: Callable[[np.ndarray], None]) -> "Value":
        out = Value(data)
        tracked = tuple(p for p in parents if p.requires_grad)
        if _grad_enabled and tracked:
            out.requires_grad = True
            out._parents = tracked
            out._backward = backward
        return out

    # -- arithmetic primitives ---------------------------------------------

    def __add__(self, other) -> "Value":
        other = self._lift(other)
        try:
            data = self.data + other.data
        except ValueError:
            raise ShapeMismatchError("add", self.shape, other.shape) from None

        def backward(grad: np.ndarray) -> None:
            if self.requires_grad:
                self._accumulate(_unbroadcast(grad, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(grad, other.shape))

        return Value._make(data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self) -> "Value":
        def backward(grad: np.ndarray) -> None:
            self._accumulate(-grad)

        return Value._make(-self.data, (self,), backward)

    def __sub__(self, other) -> "Value":
        return self + (-self._lift(other))

    def __rsub__(self, other) -> "Value":
        return self._lift(other) + (-self)

    def __mul__(self, other) -> "Value":
        other = self._lift(other)
        try:
            data = self.data * other.data
        except ValueError:
            raise ShapeMismatchError("multiply", self.shape, other.shape) from None
        a_data, b_data = self.data, other.data

        def backward(grad: np.ndarray) -> None:
            if self.requires_grad:
                self._accumulate(_unbroadcast(grad * b_data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(grad * a_data, other.shape))

        return Value._make(data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Value":
        other = self._lift(other)
        return self * other ** -1.0

    def __rtruediv__(self, other) -> "Value":
        return self._lift(other) * self ** -1.0

    def __pow__(self, exponent: float) -> "Value":
        if isinstance(exponent, Value):
            raise AutodiffContractError("pow supports only constant exponents")
        data = self.data**exponent
        x = self.data

        def backward(grad: np.ndarray) -> None:
            self._accumulate(grad * exponent * x ** (exponent - 1.0))

        return Value._make(data, (self,), backward)

    def __matmul__(self, other) -> "Value":
        other = self._lift(other)
        try:
            data = self.data @ other.data
        except ValueError:
            raise ShapeMismatchError("matmul", self.shape, other.shape) from None
        a, b = self, other

        def backward(grad: np.ndarray) -> None:
            if a.requires_grad:
                ga = grad @ np.swapaxes(b.data, -1, -2) if b.ndim > 1 else np.outer(grad, b.data).reshape(a.shape)
                a._accumulate(_unbroadcast(ga, a.shape))
            if b.requires_grad:
                if a.ndim > 1:
                    gb = np.swapaxes(a.data, -1, -2) @ grad
                else:
                    gb = np.outer(a.data, grad).reshape(b.shape)
                b._accumulate(_unbroadcast(gb, b.shape))

        return Value._make(data, (self, other), backward)

    # -- structural primitives ---------------------------------------------

    def transpose(self, *axes: int) -> "Value":
        order = axes if axes else tuple(reversed(range(self.ndim)))
        inverse = np.argsort(order)

        def backward(grad: np.ndarray) -> None:
            self._accumulate(grad.transpose(inverse))

        return Value._make(self.data.transpose(order), (self,), backward)

    @property
    def T(self) -> "Value":
        return self.transpose()

    def reshape(self, *shape: int) -> "Value":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape

        def backward(grad: np.ndarray) -> None:
            self._accumulate(grad.reshape(old))

        return Value._make(self.data.reshape(shape), (self,), backward)

    def broadcast_to(self, shape: tuple[int, ...]) -> "Value":
        def backward(grad: np.ndarray) -> None:
            self._accumulate(_unbroadcast(grad, self.shape))

        return Value._make(np.broadcast_to(self.data, shape).copy(), (self,), backward)

    def __getitem__(self, index) -> "Value":
        def backward(grad: np.ndarray) -> None:
            full = np.zeros_like(self.data)
            np.add.at(full, index, grad)
            self._accumulate(full)

        return Value._make(self.data[index], (self,), backward)

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Value":
        data = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.shape

        def backward(grad: np.ndarray) -> None:
            g = grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, shape).copy())

        return Value._make(data, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Value":
        count = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(count))

    def max(self, axis=None, keepdims: bool = False) -> "Value":
        data = self.data.max(axis=axis, keepdims=keepdims)
        expanded = data if keepdims or axis is None else np.expand_dims(data, axis)

        def backward(grad: np.ndarray) -> None:
            mask = (self.data == expanded).astype(self.data.dtype)
            mask /= mask.sum(axis=axis, keepdims=True)  # split grad across ties
            g = grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(mask * g)

        return Value._make(data, (self,), backward)

    # -- elementwise nonlinearities -------------------------------------------

    def exp(self) -> "Value":
        data = np.exp(self.data)

        def backward(grad: np.ndarray) -> None:
            self._accumulate(grad * data)

        return Value._make(data, (self,), backward)

    def log(self) -> "Value":
        x = self.data

        def backward(grad: np.ndarray) -> None:
            self._accumulate(grad / x)

        return Value._make(np.log(x), (self,), backward)

    def sqrt(self) -> "Value":
        data = np.sqrt(self.data)

        def backward(grad: np.ndarray) -> None:
            self._accumulate(grad * 0.5 / data)

        return Value._make(data, (self,), backward)

    def tanh(self) -> "Value":
        data = np.tanh(self.data)

        def backward(grad: np.ndarray) -> None:
            self._accumulate(grad * (1.0 - data * data))

        return Value._make(data, (self,), backward)

    def sigmoid(self) -> "Value":
        # Stable in both tails.
        x = self.data
        data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

        def backward(grad: np.ndarray) -> None:
            self._accumulate(grad * data * (1.0 - data))

        return Value._make(data, (self,), backward)

    def relu(self) -> "Value":
        mask = self.data > 0

        def backward(grad: np.ndarray) -> None:
            self._accumulate(grad * mask)

        return Value._make(np.where(mask, self.data, 0.0), (self,), backward)

    def clip(self, lo: float, hi: float) -> "Value":
        inside = (self.data >= lo) & (self.data <= hi)

        def backward(grad: np.ndarray) -> None:
            self._accumulate(grad * inside)

        return Value._make(np.clip(self.data, lo, hi), (self,), backward)


# -- free-function forms -------------------------------------------------------


def concat(values: Sequence[Value], axis: int = -1) -> Value:
    vals = [v if isinstance(v, Value) else Value(v) for v in values]
    data = np.concatenate([v.data for v in vals], axis=axis)
    sizes = [v.shape[axis] for v in vals]
    splits = np.cumsum(sizes)[:-1]

    def backward(grad: np.ndarray) -> None:
        for v, piece in zip(vals, np.split(grad, splits, axis=axis)):
            if v.requires_grad:
                v._accumulate(piece)

    return Value._make(data, vals, backward)


def softmax(x: Value, axis: int = -1) -> Value:
    """Shift-stable softmax built from primitives.

    The subtracted max is a constant (softmax is shift-invariant), so the
    gradient is exact without differentiating through the max.
    """
    shifted = x - Value(x.data.max(axis=axis, keepdims=True))
    e = shifted.exp()
    return e / e.sum(axis=axis, keepdims=True)


def conv1d(x: Value, weight: Value, bias: Value | None = None) -> Value:
    """1-D cross-correlation, 'same' padding, stride 1.

    x: (B, L, Cin); weight: (K, Cin, Cout); output: (B, L, Cout).
    Padding follows the asymmetric convention pad_left = (K-1)//2.
    """
    if x.ndim != 3 or weight.ndim != 3 or x.shape[2] != weight.shape[1]:
        raise ShapeMismatchError("conv1d", x.shape, weight.shape)
    batch, length, cin = x.shape
    ksize, _, cout = weight.shape
    pad_left = (ksize - 1) // 2
    pad_right = ksize - 1 - pad_left
    xp = np.pad(x.data, ((0, 0), (pad_left, pad_right), (0, 0)))

    # One GEMM per kernel offset; K is at most 11 here so the loop is cheap.
    data = np.zeros((batch, length, cout), dtype=x.data.dtype)
    for offset in range(ksize):
        data += xp[:, offset : offset + length, :] @ weight.data[offset]
    if bias is not None:
        data += bias.data

    def backward(grad: np.ndarray) -> None:
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for offset in range(ksize):
                gxp[:, offset : offset + length, :] += grad @ weight.data[offset].T
            x._accumulate(gxp[:, pad_left : pad_left + length, :])
        if weight.requires_grad:
            gw = np.empty_like(weight.data)
            flat_grad = grad.reshape(-1, cout)
            for offset in range(ksize):
                gw[offset] = xp[:, offset : offset + length, :].reshape(-1, cin).T @ flat_grad
            weight._accumulate(gw)
        if bias is not None and bias.requires_grad:
            bias._accumulate(grad.sum(axis=(0, 1)))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Value._make(data, parents, backward)


def maxpool1d(x: Value, pool_size: int, stride: int, padding: str = "valid") -> Value:
    """1-D max pool over the time axis of (B, L, C).

    'same' padding pads on the right with -inf so output length is
    ceil(L / stride); 'valid' gives floor((L - pool_size) / stride) + 1.
    """
    if x.ndim != 3:
        raise ShapeMismatchError("maxpool1d", x.shape, (pool_size,))
    if padding not in ("same", "valid"):
        raise AutodiffContractError(f"maxpool1d padding must be 'same' or 'valid', got {padding!r}")
    batch, length, channels = x.shape
    if padding == "same":
        out_len = -(-length // stride)
        pad_total = max((out_len - 1) * stride + pool_size - length, 0)
        pad_left = pad_total // 2
        xp = np.pad(x.data, ((0, 0), (pad_left, pad_total - pad_left), (0, 0)), constant_values=-np.inf)
    else:
        out_len = (length - pool_size) // stride + 1
        if out_len < 1:
            raise ShapeMismatchError("maxpool1d", x.shape, (pool_size,))
        pad_left = 0
        xp = x.data

    starts = np.arange(out_len) * stride
    # windows: (B, out_len, pool, C)
    windows = np.stack([xp[:, s : s + pool_size, :] for s in starts], axis=1)
    arg = windows.argmax(axis=2)
    data = np.take_along_axis(windows, arg[:, :, None, :], axis=2)[:, :, 0, :]

    def backward(grad: np.ndarray) -> None:
        gxp = np.zeros((batch, xp.shape[1], channels), dtype=x.data.dtype)
        b_idx = np.arange(batch)[:, None, None]
        c_idx = np.arange(channels)[None, None, :]
        t_idx = starts[None, :, None] + arg
        np.add.at(gxp, (b_idx, t_idx, c_idx), grad)
        x._accumulate(gxp[:, pad_left : pad_left + length, :])

    return Value._make(data, (x,), backward)


def as_value(x, dtype=np.float32) -> Value:
    if isinstance(x, Value):
        return x
    return Value(np.asarray(x, dtype=dtype))


def grad_check(f: Callable[[Value], Value], x: np.ndarray, eps: float = 1e-5, tol: float = 1e-4) -> dict:
    """Compare analytic gradients against central finite differences.

    Runs in float64. Returns {"max_rel_error", "passed", "analytic", "numeric"}.
    """
    x64 = np.asarray(x, dtype=np.float64)
    v = Value(x64.copy(), requires_grad=True)
    out = f(v)
    if out.data.size != 1:
        raise AutodiffContractError(f"grad_check requires a scalar-valued function, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise AutodiffContractError("grad_check: function produced non-finite output")
    out.backward()
    analytic = v.grad.copy() if v.grad is not None else np.zeros_like(x64)

    numeric = np.zeros_like(x64)
    flat = x64.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(Value(x64.copy())).data)
        flat[i] = orig - eps
        lo = float(f(Value(x64.copy())).data)
        flat[i] = orig
        num_flat[i] = (hi - lo) / (2.0 * eps)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
    max_rel = float(np.max(np.abs(analytic - numeric) / denom)) if flat.size else 0.0
    return {"max_rel_error": max_rel, "passed": max_rel < tol, "analytic": analytic, "numeric": numeric}
