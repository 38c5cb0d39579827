"""Numeric kernels on rank-4 (batch, channel, height, width) arrays.

Every forward kernel has a matching backward kernel.  Arrays are plain
numpy arrays; float32 is the working precision and float64 is used only
for gradient checking.  Convolutions are same-padded cross-correlations
with stride 1 and square kernels of size 1 or 3.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when tensor shapes do not satisfy a kernel's contract."""


class NonFiniteError(ValueError):
    """Raised when a kernel receives NaN or Inf values."""


def check_tensor4(x: np.ndarray, name: str = "x") -> None:
    if x.ndim != 4:
        raise ShapeError(f"{name} must be rank 4 (n, c, h, w), got shape {x.shape}")
    if min(x.shape) < 1:
        raise ShapeError(f"{name} has an empty dimension: {x.shape}")


def _check_same(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape {a.shape} != {b.shape}")


@dataclass
class ConvParams:
    weight: np.ndarray  # (c_out, c_in, k, k)
    bias: np.ndarray  # (c_out,)

    def __post_init__(self):
        if self.weight.ndim != 4 or self.weight.shape[2] != self.weight.shape[3]:
            raise ShapeError(f"conv weight must be (c_out, c_in, k, k), got {self.weight.shape}")
        if self.kernel_size not in (1, 3):
            raise ShapeError(f"kernel size must be 1 or 3, got {self.kernel_size}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match c_out={self.weight.shape[0]}")

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    @property
    def c_in(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[2]

    @property
    def padding(self) -> int:
        return self.kernel_size // 2


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """Return per-image columns (n, c*k*k, h*w), rows ordered c-then-u-then-v."""
    n, c, h, w = x.shape
    if k == 1:
        return x.reshape(n, c, h * w)
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # (n, c, h, w, k, k)
    return win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, h * w)


def _col2im(cols: np.ndarray, shape: tuple[int, int, int, int], k: int) -> np.ndarray:
    n, c, h, w = shape
    if k == 1:
        return cols.reshape(n, c, h, w)
    p = k // 2
    cols = cols.reshape(n, c, k, k, h, w)
    out = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    for u in range(k):
        for v in range(k):
            out[:, :, u:u + h, v:v + w] += cols[:, :, u, v]
    return np.ascontiguousarray(out[:, :, p:p + h, p:p + w])


def conv2d_forward(x: np.ndarray, p: ConvParams, *, return_cols: bool = False):
    """Same-padded 2-D cross-correlation plus bias.

    With ``return_cols`` the im2col matrix is returned as well so that the
    backward pass can reuse it.
    """
    check_tensor4(x)
    if x.shape[1] != p.c_in:
        raise ShapeError(f"input has {x.shape[1]} channels, conv expects {p.c_in}")
    if not np.isfinite(x).all():
        raise NonFiniteError("conv2d_forward received non-finite input")
    n, _, h, w = x.shape
    cols = _im2col(x, p.kernel_size)
    y = np.matmul(p.weight.reshape(p.c_out, -1), cols)
    y += p.bias[:, None]
    y = y.reshape(n, p.c_out, h, w)
    if return_cols:
        return y, cols
    return y


def conv2d_backward(x: np.ndarray, p: ConvParams, grad_y: np.ndarray, cols: np.ndarray | None = None):
    """Gradients of ``conv2d_forward`` w.r.t. input, weight and bias."""
    check_tensor4(grad_y, "grad_y")
    n, _, h, w = x.shape
    expected = (n, p.c_out, h, w)
    if grad_y.shape != expected:
        raise ShapeError(f"grad_y shape {grad_y.shape} != conv output shape {expected}")
    if cols is None:
        cols = _im2col(x, p.kernel_size)
    gy = grad_y.reshape(n, p.c_out, h * w)
    grad_w = np.matmul(gy, cols.transpose(0, 2, 1)).sum(axis=0).reshape(p.weight.shape)
    grad_b = gy.sum(axis=(0, 2))
    gcols = np.matmul(p.weight.reshape(p.c_out, -1).T, gy)
    grad_x = _col2im(gcols, x.shape, p.kernel_size)
    return grad_x, grad_w, grad_b


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_y: np.ndarray) -> np.ndarray:
    _check_same(x, grad_y, "relu_backward")
    return np.where(x > 0, grad_y, 0).astype(grad_y.dtype, copy=False)


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same(a, b, "add")
    return a + b


def pixel_shuffle(x: np.ndarray, r: int) -> np.ndarray:
    """Rearrange (n, c*r*r, h, w) into (n, c, h*r, w*r).

    out[n, c, r*i + di, r*j + dj] = x[n, c*r*r + di*r + dj, i, j]
    """
    check_tensor4(x)
    n, c, h, w = x.shape
    if r < 1 or c % (r * r):
        raise ShapeError(f"channel count {c} not divisible by r^2 = {r * r}")
    oc = c // (r * r)
    return np.ascontiguousarray(
        x.reshape(n, oc, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, oc, h * r, w * r)
    )


def pixel_unshuffle(x: np.ndarray, r: int) -> np.ndarray:
    """Inverse of :func:`pixel_shuffle`; also its backward pass."""
    check_tensor4(x)
    n, c, hh, ww = x.shape
    if hh % r or ww % r:
        raise ShapeError(f"spatial size {hh}x{ww} not divisible by {r}")
    h, w = hh // r, ww // r
    return np.ascontiguousarray(
        x.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h, w)
    )


pixel_shuffle_backward = pixel_unshuffle
