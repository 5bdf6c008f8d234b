"""Differentiable operations.

Every operation takes tensors, computes its result with numpy and, when any input requires a
gradient and recording is enabled, records a node with a backward closure on the current tape.

Shape rules:
  - add, sub, mul, div: numpy broadcasting.
  - matmul: (N, K) @ (K, M).
  - conv2d: x (B, C, H, W), weight (O, C, kh, kw), optional bias (O,).
  - depthwise_conv2d: x (B, C, H, W), kernel (K, kh, kw) with K in {1, B}; valid padding.
  - avgpool2d: x (B, C, H, W) with H and W divisible by the pool size.
  - softmax, log_softmax: any shape, normalized over `axis`.
  - gather_rows: x (B, C), index (B,).
  - pad: one (before, after) pair per dimension.
"""

from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from dentlab.autodiff.tensor import (
    ShapeMismatchException,
    Tensor,
    current_tape,
    default_dtype,
    is_recording,
)

Grads = Tuple[Optional[np.ndarray], ...]
Needs = Tuple[bool, ...]


def as_tensor(value: Union[Tensor, float, int, np.ndarray]) -> Tensor:
    """Wrap constants into a leaf tensor which does not require a gradient.

    :param value: A tensor (returned as is), a scalar or an array.
    :return: A tensor.
    """
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _make(
    op_name: str,
    data: np.ndarray,
    parents: Tuple[Tensor, ...],
    backward_fn: Callable[[np.ndarray, Needs], Grads],
) -> Tensor:
    dtype = np.result_type(*(parent.data.dtype for parent in parents))
    out = Tensor(np.asarray(data, dtype=dtype))
    if is_recording() and any(parent.requires_grad for parent in parents):
        out.requires_grad = True
        current_tape().record(op_name, parents, out, backward_fn)
    return out


def unbroadcast(grad: np.ndarray, to_shape: Tuple[int, ...]) -> np.ndarray:
    """Sum out the dimensions numpy broadcasting added so `grad` matches `to_shape`.

    :param grad: Gradient in the broadcast shape.
    :param to_shape: Shape of the input before broadcasting.
    :return: Gradient in `to_shape`.
    """
    if grad.shape == to_shape:
        return grad
    while grad.ndim > len(to_shape):
        grad = grad.sum(axis=0)
    for dim, extent in enumerate(to_shape):
        if extent == 1 and grad.shape[dim] != 1:
            grad = grad.sum(axis=dim, keepdims=True)
    return grad


def _broadcast_shape(op_name: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return tuple(np.broadcast_shapes(a.shape, b.shape))
    except ValueError:
        raise ShapeMismatchException(op_name, a.shape, b.shape, detail="not broadcastable")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a + b."""
    _broadcast_shape("add", a, b)

    def backward(g: np.ndarray, needs: Needs) -> Grads:
        return (
            unbroadcast(g, a.shape) if needs[0] else None,
            unbroadcast(g, b.shape) if needs[1] else None,
        )

    return _make("add", a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a - b."""
    _broadcast_shape("sub", a, b)

    def backward(g: np.ndarray, needs: Needs) -> Grads:
        return (
            unbroadcast(g, a.shape) if needs[0] else None,
            unbroadcast(-g, b.shape) if needs[1] else None,
        )

    return _make("sub", a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a * b."""
    _broadcast_shape("mul", a, b)

    def backward(g: np.ndarray, needs: Needs) -> Grads:
        return (
            unbroadcast(g * b.data, a.shape) if needs[0] else None,
            unbroadcast(g * a.data, b.shape) if needs[1] else None,
        )

    return _make("mul", a.data * b.data, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a / b."""
    _broadcast_shape("div", a, b)

    def backward(g: np.ndarray, needs: Needs) -> Grads:
        return (
            unbroadcast(g / b.data, a.shape) if needs[0] else None,
            unbroadcast(-g * a.data / (b.data * b.data), b.shape) if needs[1] else None,
        )

    return _make("div", a.data / b.data, (a, b), backward)


def neg(x: Tensor) -> Tensor:
    """Elementwise -x."""
    return _make("neg", -x.data, (x,), lambda g, needs: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of (N, K) and (K, M) tensors."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchException(
            "matmul", a.shape, b.shape, detail="expected (N, K) @ (K, M)"
        )

    def backward(g: np.ndarray, needs: Needs) -> Grads:
        return (
            g @ b.data.T if needs[0] else None,
            a.data.T @ g if needs[1] else None,
        )

    return _make("matmul", a.data @ b.data, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(x, 0)."""
    mask = x.data > 0
    return _make("relu", np.where(mask, x.data, 0), (x,), lambda g, needs: (g * mask,))


def exp(x: Tensor) -> Tensor:
    """Elementwise exponential."""
    out = np.exp(x.data)
    return _make("exp", out, (x,), lambda g, needs: (g * out,))


def log(x: Tensor) -> Tensor:
    """Elementwise natural logarithm."""
    return _make("log", np.log(x.data), (x,), lambda g, needs: (g / x.data,))


def sqrt(x: Tensor) -> Tensor:
    """Elementwise square root."""
    out = np.sqrt(x.data)
    return _make("sqrt", out, (x,), lambda g, needs: (g * 0.5 / out,))


def softplus(x: Tensor) -> Tensor:
    """Elementwise log(1 + exp(x)), computed stably."""
    out = np.log1p(np.exp(-np.abs(x.data))) + np.maximum(x.data, 0)
    sigmoid = 1.0 / (1.0 + np.exp(-x.data))
    return _make("softplus", out, (x,), lambda g, needs: (g * sigmoid,))


def clamp(
    x: Tensor,
    low: Optional[Union[float, np.ndarray]] = None,
    high: Optional[Union[float, np.ndarray]] = None,
) -> Tensor:
    """Clip x into [low, high]; the gradient passes only where x is inside the range."""
    out = np.clip(x.data, low, high) if (low is not None or high is not None) else x.data.copy()
    mask = np.ones_like(x.data, dtype=bool)
    if low is not None:
        mask &= x.data >= low
    if high is not None:
        mask &= x.data <= high
    return _make("clamp", out, (x,), lambda g, needs: (g * mask,))


def _normalize_axes(axis: Optional[Union[int, Sequence[int]]], ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum(  # noqa: A001
    x: Tensor, axis: Optional[Union[int, Sequence[int]]] = None, keepdims: bool = False
) -> Tensor:
    """Sum over `axis` (all axes when None)."""
    axes = _normalize_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g: np.ndarray, needs: Needs) -> Grads:
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape),)

    return _make("sum", out, (x,), backward)


def mean(
    x: Tensor, axis: Optional[Union[int, Sequence[int]]] = None, keepdims: bool = False
) -> Tensor:
    """Mean over `axis` (all axes when None)."""
    axes = _normalize_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def backward(g: np.ndarray, needs: Needs) -> Grads:
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape),)

    return _make("mean", out, (x,), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    """View x with a new shape of the same size."""
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeMismatchException("reshape", x.shape, tuple(shape), detail="size differs")
    return _make("reshape", out, (x,), lambda g, needs: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    """Permute the dimensions of x."""
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(
        "transpose", x.data.transpose(axes), (x,), lambda g, needs: (g.transpose(inverse),)
    )


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Normalized exponentials along `axis`."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray, needs: Needs) -> Grads:
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make("softmax", out, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Logarithm of the softmax along `axis`, computed stably."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g: np.ndarray, needs: Needs) -> Grads:
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make("log_softmax", out, (x,), backward)


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Pick x[b, index[b]] for every row b."""
    index = np.asarray(index, dtype=np.int64)
    if x.ndim != 2 or index.shape != (x.shape[0],):
        raise ShapeMismatchException("gather_rows", x.shape, index.shape)
    rows = np.arange(x.shape[0])

    def backward(g: np.ndarray, needs: Needs) -> Grads:
        dx = np.zeros_like(x.data)
        dx[rows, index] = g
        return (dx,)

    return _make("gather_rows", x.data[rows, index], (x,), backward)


def pad(x: Tensor, pads: Sequence[Tuple[int, int]], mode: str = "constant") -> Tensor:
    """Pad every dimension by (before, after) elements.

    :param x: Input tensor.
    :param pads: One (before, after) pair per dimension.
    :param mode: 'constant' pads zeros, 'edge' replicates the border values.
    """
    if len(pads) != x.ndim:
        raise ShapeMismatchException("pad", x.shape, (len(pads),), detail="one pair per dim")
    if mode not in ("constant", "edge"):
        raise ValueError(f"Unknown pad mode '{mode}', expected 'constant' or 'edge'.")

    if mode == "constant":
        out = np.pad(x.data, pads, mode="constant")

        def backward(g: np.ndarray, needs: Needs) -> Grads:
            slices = tuple(slice(before, before + n) for (before, _), n in zip(pads, x.shape))
            return (g[slices],)

        return _make("pad", out, (x,), backward)

    indices = [
        np.clip(np.arange(-before, n + after), 0, n - 1)
        for (before, after), n in zip(pads, x.shape)
    ]
    out = x.data
    for dim, index in enumerate(indices):
        if len(index) != x.shape[dim] or pads[dim] != (0, 0):
            out = np.take(out, index, axis=dim)

    def backward_edge(g: np.ndarray, needs: Needs) -> Grads:
        for dim in reversed(range(x.ndim)):
            if pads[dim] == (0, 0):
                continue
            moved = np.moveaxis(g, dim, 0)
            folded = np.zeros((x.shape[dim],) + moved.shape[1:], dtype=g.dtype)
            np.add.at(folded, indices[dim], moved)
            g = np.moveaxis(folded, 0, dim)
        return (g,)

    return _make("pad", out, (x,), backward_edge)


def avgpool2d(x: Tensor, size: int) -> Tensor:
    """Non-overlapping average pooling with a square window of `size`."""
    if x.ndim != 4 or x.shape[2] % size or x.shape[3] % size:
        raise ShapeMismatchException(
            "avgpool2d", x.shape, detail=f"spatial extents must be divisible by {size}"
        )
    b, c, h, w = x.shape
    out = x.data.reshape(b, c, h // size, size, w // size, size).mean(axis=(3, 5))

    def backward(g: np.ndarray, needs: Needs) -> Grads:
        expanded = np.repeat(np.repeat(g, size, axis=2), size, axis=3)
        return (expanded / (size * size),)

    return _make("avgpool2d", out, (x,), backward)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2D cross-correlation by patch expansion (im2col).

    :param x: Input of shape (B, C, H, W).
    :param weight: Filters of shape (O, C, kh, kw).
    :param bias: Optional per-filter offset of shape (O,).
    :param stride: Step between windows.
    :param padding: Zero padding added on every spatial side.
    """
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeMismatchException(
            "conv2d", x.shape, weight.shape, detail="expected (B, C, H, W) and (O, C, kh, kw)"
        )
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeMismatchException("conv2d", weight.shape, bias.shape, detail="bias is (O,)")
    b, c, h, w = x.shape
    o, _, kh, kw = weight.shape
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ShapeMismatchException("conv2d", x.shape, weight.shape, detail="kernel too large")

    x_padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(x_padded, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride][:, :, :h_out, :w_out]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * h_out * w_out, c * kh * kw)
    w_mat = weight.data.reshape(o, -1)
    out = (cols @ w_mat.T).reshape(b, h_out, w_out, o).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)

    parents: Tuple[Tensor, ...] = (x, weight) if bias is None else (x, weight, bias)

    def backward(g: np.ndarray, needs: Needs) -> Grads:
        g_mat = g.transpose(0, 2, 3, 1).reshape(-1, o)
        dx = None
        if needs[0]:
            d_cols = (g_mat @ w_mat).reshape(b, h_out, w_out, c, kh, kw)
            d_cols = d_cols.transpose(0, 3, 1, 2, 4, 5)
            dx_padded = np.zeros_like(x_padded)
            for i in range(kh):
                for j in range(kw):
                    dx_padded[
                        :, :, i : i + stride * h_out : stride, j : j + stride * w_out : stride
                    ] += d_cols[..., i, j]
            dx = dx_padded[:, :, padding : padding + h, padding : padding + w]
        dw = (g_mat.T @ cols).reshape(weight.shape) if needs[1] else None
        if bias is None:
            return dx, dw
        db = g.sum(axis=(0, 2, 3)) if needs[2] else None
        return dx, dw, db

    return _make("conv2d", out, parents, backward)


def depthwise_conv2d(x: Tensor, kernel: Tensor) -> Tensor:
    """Filter every channel of x with the same 2D kernel (valid padding).

    :param x: Input of shape (B, C, H, W).
    :param kernel: Kernel of shape (1, kh, kw) shared by the batch, or (B, kh, kw) per sample.
    """
    if x.ndim != 4 or kernel.ndim != 3 or kernel.shape[0] not in (1, x.shape[0]):
        raise ShapeMismatchException(
            "depthwise_conv2d", x.shape, kernel.shape, detail="expected kernel (1|B, kh, kw)"
        )
    _, _, h, w = x.shape
    _, kh, kw = kernel.shape
    if kh > h or kw > w:
        raise ShapeMismatchException("depthwise_conv2d", x.shape, kernel.shape)
    h_out, w_out = h - kh + 1, w - kw + 1
    windows = sliding_window_view(x.data, (kh, kw), axis=(2, 3))
    shared = kernel.shape[0] == 1
    if shared:
        out = np.einsum("bchwij,ij->bchw", windows, kernel.data[0])
    else:
        out = np.einsum("bchwij,bij->bchw", windows, kernel.data)

    def backward(g: np.ndarray, needs: Needs) -> Grads:
        dx = None
        if needs[0]:
            dx = np.zeros_like(x.data)
            per_sample = kernel.data[:, None, None, None, :, :]
            for i in range(kh):
                for j in range(kw):
                    dx[:, :, i : i + h_out, j : j + w_out] += g * per_sample[..., i, j]
        dk = None
        if needs[1]:
            if shared:
                dk = np.einsum("bchwij,bchw->ij", windows, g)[None]
            else:
                dk = np.einsum("bchwij,bchw->bij", windows, g)
        return dx, dk

    return _make("depthwise_conv2d", out, (x, kernel), backward)


FORWARD_OPS = {
    "matmul": matmul,
    "conv2d": conv2d,
    "depthwise_conv2d": depthwise_conv2d,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "relu": relu,
    "avgpool2d": avgpool2d,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "log": log,
    "exp": exp,
    "sqrt": sqrt,
    "softplus": softplus,
    "sum": sum,
    "mean": mean,
    "clamp": clamp,
    "pad": pad,
    "reshape": reshape,
    "transpose": transpose,
    "gather_rows": gather_rows,
}
"""Operations by name, as dispatched by `forward_op`."""


def forward_op(op_name: str, *inputs: Tensor, **kwargs: object) -> Tensor:
    """Run a differentiable operation by name.

    :param op_name: One of the keys of `FORWARD_OPS`.
    :param inputs: Input tensors of the operation.
    :param kwargs: Operation specific options (axis, stride, padding, ...).
    :return: The output tensor.
    """
    op = FORWARD_OPS.get(op_name)
    if op is None:
        raise ValueError(
            f"Unknown operation '{op_name}'. Valid operations: {', '.join(sorted(FORWARD_OPS))}"
        )
    return op(*inputs, **kwargs)  # type: ignore[operator]


def zeros(shape: Sequence[int]) -> Tensor:
    """Leaf tensor of zeros in the default precision."""
    return Tensor(np.zeros(tuple(shape), dtype=default_dtype()))
