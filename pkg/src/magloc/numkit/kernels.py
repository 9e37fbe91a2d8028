"""Forward and backward kernels on raw numpy arrays.

Activations use a channel-major layout ``(C, N, L)``: channels, batch,
time.  Keeping the batch next to time lets every convolution run as one
large matrix product over ``N * L`` columns.  A plain ``(C, L)`` array is
a batch of one.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from magloc.errors import ShapeError

PADDING_MODES = ("same", "causal")


def pad_amounts(k: int, dilation: int, padding: str = "same") -> tuple[int, int]:
    """Zeros added (left, right) so the output keeps the input length."""
    total = dilation * (k - 1)
    if padding == "same":
        left = total // 2
        return left, total - left
    if padding == "causal":
        return total, 0
    raise ValueError(f"unknown padding mode {padding!r}; expected one of {PADDING_MODES}")


def _as_batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 2:
        return x[:, None, :], True
    if x.ndim == 3:
        return x, False
    raise ShapeError(f"expected a (C, L) or (C, N, L) array, got shape {x.shape}")


def im2col(x: np.ndarray, k: int, dilation: int, padding: str = "same") -> np.ndarray:
    """Gather dilated taps of ``x`` (C, N, L) into a (C * k, N * L) matrix."""
    c, n, length = x.shape
    left, right = pad_amounts(k, dilation, padding)
    xp = np.zeros((c, n, length + left + right), dtype=x.dtype)
    xp[:, :, left : left + length] = x
    s0, s1, s2 = xp.strides
    taps = as_strided(xp, shape=(c, k, n, length), strides=(s0, s2 * dilation, s1, s2), writeable=False)
    return taps.reshape(c * k, n * length)


def col2im(cols: np.ndarray, shape: tuple[int, int, int], k: int, dilation: int, padding: str = "same") -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add tap gradients back onto the input."""
    c, n, length = shape
    left, right = pad_amounts(k, dilation, padding)
    taps = cols.reshape(c, k, n, length)
    xp = np.zeros((c, n, length + left + right), dtype=cols.dtype)
    for j in range(k):
        xp[:, :, j * dilation : j * dilation + length] += taps[:, j]
    return xp[:, :, left : left + length]


def check_conv_shapes(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> None:
    if w.ndim != 3:
        raise ShapeError(f"conv weights must be (C_out, C_in, k), got {w.shape}")
    if x.shape[0] != w.shape[1]:
        raise ShapeError(f"input has {x.shape[0]} channels but weights expect {w.shape[1]}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"bias shape {b.shape} does not match {w.shape[0]} output channels")
    if x.shape[-1] < 1:
        raise ShapeError("input length must be at least 1")


def conv1d_forward(x, w, b, dilation=1, padding="same"):
    """Dilated 1-D convolution with zero padding that preserves length.

    Returns ``(out, cols)``; ``cols`` is the im2col matrix needed by the
    backward pass.
    """
    check_conv_shapes(x, w, b)
    if dilation < 1:
        raise ValueError("dilation must be >= 1")
    xb, squeeze = _as_batched(x)
    c_out, c_in, k = w.shape
    _, n, length = xb.shape
    cols = im2col(xb, k, dilation, padding)
    out = w.reshape(c_out, c_in * k) @ cols
    out = out.reshape(c_out, n, length)
    out += b[:, None, None]
    return (out[:, 0, :] if squeeze else out), cols


def conv1d_backward(grad_out, cols, x_shape, w, dilation=1, padding="same", need_input_grad=True):
    c_out, c_in, k = w.shape
    squeeze = len(x_shape) == 2
    if squeeze:
        x_shape = (x_shape[0], 1, x_shape[1])
        grad_out = grad_out[:, None, :]
    g2 = grad_out.reshape(c_out, -1)
    grad_w = (g2 @ cols.T).reshape(w.shape)
    grad_b = g2.sum(axis=1)
    grad_x = None
    if need_input_grad:
        dcols = w.reshape(c_out, c_in * k).T @ g2
        grad_x = col2im(dcols, x_shape, k, dilation, padding)
        if squeeze:
            grad_x = grad_x[:, 0, :]
    return grad_x, grad_w, grad_b


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(grad_out, x):
    return grad_out * (x > 0)


def dense_forward(x, w, b):
    """``W @ x + b`` with ``x`` either a vector (n,) or a batch (n, N)."""
    if w.ndim != 2 or x.shape[0] != w.shape[1]:
        raise ShapeError(f"dense weights {w.shape} incompatible with input {x.shape}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"bias shape {b.shape} does not match {w.shape[0]} outputs")
    out = w @ x
    if x.ndim == 1:
        return out + b
    return out + b[:, None]


def dense_backward(grad_out, x, w):
    if x.ndim == 1:
        return w.T @ grad_out, np.outer(grad_out, x), grad_out.copy()
    return w.T @ grad_out, grad_out @ x.T, grad_out.sum(axis=1)


def global_avg_pool_forward(x):
    """Mean over the last (time) axis."""
    return x.mean(axis=-1)


def global_avg_pool_backward(grad_out, x_shape):
    length = x_shape[-1]
    return np.broadcast_to((grad_out / length)[..., None], x_shape).copy()


def mse_forward(pred, target):
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    return np.mean(diff * diff)


def mse_backward(grad_out, pred, target):
    return (2.0 / pred.size) * (pred - target) * grad_out


def mae_metric(pred, target):
    """Mean Euclidean distance between columns (or rows of 2-vectors) of pred and target."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if pred.ndim == 1:
        return float(np.linalg.norm(pred - target))
    return float(np.mean(np.linalg.norm(pred - target, axis=0)))
