"""Reverse-mode differentiable tensors on numpy arrays.

Every operation records its parents and a closure that pushes the upstream
gradient to them; `Tensor.backward` replays the tape in reverse topological
order. Image tensors are NCHW.
"""

import logging
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import AutodiffError, NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.2


class Tensor:
    """An n-d array with an optional gradient and the op that produced it."""

    def __init__(self, data, requires_grad: bool = False, name: str = "", _parents=(), _op: str = ""):
        array = np.asarray(data)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float64)
        self.data = array
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents = tuple(_parents)
        self._op = _op
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        label = self.name or self._op or "tensor"
        return f"Tensor({label}, shape={self.shape}, dtype={self.dtype})"

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into every leaf that requires grad."""
        if grad is None:
            if self.data.size != 1:
                raise AutodiffError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.dtype)
        if grad.shape != self.shape:
            raise ShapeError(f"Output gradient shape {grad.shape} != output shape {self.shape}")

        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"Non-finite gradient at {node!r}")
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, parent_grad in zip(node._parents, node._backward(g)):
                if parent_grad is None or not _tracks(parent):
                    continue
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad


def _tracks(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _topological_order(root: Tensor) -> list[Tensor]:
    """Parents before children; iterative DFS in parent order."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    array = np.asarray(value, dtype=dtype)
    return Tensor(array)


def _result(data: np.ndarray, parents, op: str, backward) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"Non-finite value produced by {op}")
    out = Tensor(data, _parents=parents, _op=op)
    if any(_tracks(p) for p in parents):
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _coerce_pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return as_tensor(a), as_tensor(b)


# Elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), "add", backward)


def sub(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), "sub", backward)


def mul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), "mul", backward)


# Reductions and reshaping


def total(x: Tensor) -> Tensor:
    """Sum of all entries."""

    def backward(g):
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return _result(np.sum(x.data), (x,), "sum", backward)


def mean(x: Tensor) -> Tensor:
    """Mean of all entries."""
    n = x.data.size

    def backward(g):
        return (np.full(x.shape, g / n, dtype=x.dtype),)

    return _result(np.mean(x.data), (x,), "mean", backward)


def spatial_mean(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C) mean over the spatial axes."""
    if x.data.ndim != 4:
        raise ShapeError(f"spatial_mean expects NCHW input, got shape {x.shape}")
    hw = x.shape[2] * x.shape[3]

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / hw, x.shape).astype(x.dtype),)

    return _result(x.data.mean(axis=(2, 3)), (x,), "spatial_mean", backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    def backward(g):
        return (g.reshape(x.shape),)

    return _result(x.data.reshape(shape), (x,), "reshape", backward)


def flatten(x: Tensor) -> Tensor:
    """(N, ...) -> (N, prod(...))."""
    return reshape(x, (x.shape[0], -1))


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along an axis; backward splits the gradient back exactly."""
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        index = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            index[axis] = slice(int(lo), int(hi))
            parts.append(g[tuple(index)])
        return tuple(parts)

    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {[t.shape for t in tensors]} along axis {axis}: {e}") from e
    return _result(data, tuple(tensors), "concat", backward)


# Nonlinearities


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    positive = x.data > 0
    factor = np.where(positive, 1.0, slope).astype(x.dtype)

    def backward(g):
        return (g * factor,)

    return _result(x.data * factor, (x,), "leaky_relu", backward)


def sigmoid(x: Tensor) -> Tensor:
    y = (0.5 * (1.0 + np.tanh(0.5 * x.data))).astype(x.dtype)

    def backward(g):
        return (g * y * (1.0 - y),)

    return _result(y, (x,), "sigmoid", backward)


# Dense and convolutional layers


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x (N, in) @ weight.T (out, in) + bias (out,)."""
    if x.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    parents = (x, weight) if bias is None else (x, weight, bias)
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return _result(out, parents, "linear", backward)


def _conv_windows(x: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))
    return windows[:, :, ::stride, ::stride]


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> tuple[np.ndarray, np.ndarray]:
    k = w.shape[2]
    windows = _conv_windows(x, k, stride, padding)  # (N, C, Ho, Wo, k, k)
    out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3]))  # (N, Ho, Wo, O)
    return out.transpose(0, 3, 1, 2), windows


def _conv_backward(
    g: np.ndarray, x_shape: tuple, w: np.ndarray, windows: np.ndarray, stride: int, padding: int
) -> tuple[np.ndarray, np.ndarray]:
    n, c, h, width = x_shape
    k = w.shape[2]
    ho, wo = g.shape[2], g.shape[3]
    dw = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))  # (O, C, k, k)
    dxp = np.zeros((n, c, h + 2 * padding, width + 2 * padding), dtype=g.dtype)
    for i in range(k):
        for j in range(k):
            contrib = np.tensordot(g, w[:, :, i, j], axes=([1], [0]))  # (N, Ho, Wo, C)
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += contrib.transpose(
                0, 3, 1, 2
            )
    dx = dxp[:, :, padding : padding + h, padding : padding + width]
    return dx, dw.astype(w.dtype)


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Zero-padded cross-correlation; weight is (out, in, k, k)."""
    if x.data.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} does not match weight {weight.shape}")
    k = weight.shape[2]
    if conv_output_size(min(x.shape[2:]), k, stride, padding) < 1:
        raise ShapeError(f"conv2d: input {x.shape} too small for kernel {k} stride {stride}")
    out, windows = _conv_forward(x.data, weight.data, stride, padding)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        dx, dw = _conv_backward(g, x.shape, weight.data, windows, stride, padding)
        grads = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _result(out, parents, "conv2d", backward)


def conv_transpose2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    output_padding: int = 0,
) -> Tensor:
    """Transposed convolution; weight is (in, out, k, k).

    Output size is (H - 1) * stride - 2 * padding + k + output_padding.
    """
    if x.data.ndim != 4 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"conv_transpose2d: input {x.shape} does not match weight {weight.shape}")
    k = weight.shape[2]
    lo = k - 1 - padding
    if lo < 0 or output_padding >= stride:
        raise ShapeError(f"conv_transpose2d: unsupported padding {padding} for kernel {k}")
    n, c, h, w = x.shape
    hi = lo + output_padding

    dilated = np.zeros((n, c, (h - 1) * stride + 1, (w - 1) * stride + 1), dtype=x.dtype)
    dilated[:, :, ::stride, ::stride] = x.data
    padded = np.pad(dilated, ((0, 0), (0, 0), (lo, hi), (lo, hi)))
    kernel = np.ascontiguousarray(np.flip(weight.data, axis=(2, 3)).transpose(1, 0, 2, 3))
    out, windows = _conv_forward(padded, kernel, 1, 0)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        dpadded, dkernel = _conv_backward(g, padded.shape, kernel, windows, 1, 0)
        ddilated = dpadded[:, :, lo : lo + dilated.shape[2], lo : lo + dilated.shape[3]]
        dx = ddilated[:, :, ::stride, ::stride]
        dw = np.flip(dkernel.transpose(1, 0, 2, 3), axis=(2, 3))
        grads = [np.ascontiguousarray(dx), np.ascontiguousarray(dw)]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _result(out, parents, "conv_transpose2d", backward)


# Losses and sampling


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer targets under softmax(logits)."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: logits {logits.shape}, targets {targets.shape}")
    if len(targets) == 0:
        raise ShapeError("softmax_cross_entropy: empty batch")
    n, k = logits.shape
    if targets.min() < 0 or targets.max() >= k:
        raise ShapeError(f"softmax_cross_entropy: target outside [0, {k})")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    loss = -log_probs[np.arange(n), targets].mean()

    def backward(g):
        probs = np.exp(log_probs)
        probs[np.arange(n), targets] -= 1.0
        return ((g / n * probs).astype(logits.dtype),)

    return _result(np.asarray(loss, dtype=logits.dtype), (logits,), "softmax_cross_entropy", backward)


def _interp_matrix(out_size: int, lo: float, hi: float, in_size: int, dtype) -> np.ndarray:
    """Rows of bilinear weights sampling [lo, hi) at out_size pixel centres."""
    matrix = np.zeros((out_size, in_size), dtype=dtype)
    step = (hi - lo) / out_size
    for i in range(out_size):
        pos = lo + (i + 0.5) * step - 0.5
        pos = min(max(pos, 0.0), in_size - 1)
        p0 = int(math.floor(pos))
        p1 = min(p0 + 1, in_size - 1)
        frac = pos - p0
        matrix[i, p0] += 1.0 - frac
        matrix[i, p1] += frac
    return matrix


def crop_resize(x: Tensor, boxes: list[tuple[int, tuple[float, float, float, float]]], size: int) -> Tensor:
    """Bilinear crops of batch items resized to (size, size).

    boxes holds (batch_index, (x0, y0, x1, y1)) with exclusive pixel bounds.
    Returns (len(boxes), C, size, size).
    """
    if x.data.ndim != 4:
        raise ShapeError(f"crop_resize expects NCHW input, got {x.shape}")
    if not boxes:
        raise ShapeError("crop_resize: no boxes")
    _, c, h, w = x.shape
    plans = []
    for index, (x0, y0, x1, y1) in boxes:
        if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
            raise ShapeError(f"crop_resize: box {(x0, y0, x1, y1)} outside {w}x{h}")
        rows = _interp_matrix(size, y0, y1, h, x.dtype)
        cols = _interp_matrix(size, x0, x1, w, x.dtype)
        plans.append((index, rows, cols))

    out = np.stack([rows @ x.data[index] @ cols.T for index, rows, cols in plans])

    def backward(g):
        dx = np.zeros_like(x.data)
        for (index, rows, cols), gi in zip(plans, g):
            dx[index] += rows.T @ gi @ cols
        return (dx,)

    return _result(out, (x,), "crop_resize", backward)
