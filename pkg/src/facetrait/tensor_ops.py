"""Dense tensor primitives for the classifier.

Tensors are plain C-contiguous numpy arrays, channels-first ``[N, C, H, W]``
for image-like data. Every operation is a pure function, preserves the input
dtype (float32 in production, float64 in gradient-check builds) and is
deterministic: the same inputs always produce bit-identical outputs.

Only the primitives the network needs are provided: 3x3 valid convolution,
2x2 max pooling, matrix multiply, ReLU, a numerically safe two-way softmax,
and align-corners bilinear resizing for heatmap upsampling. Each operation
with learnable inputs has an exact backward companion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when operand shapes are inconsistent; message carries both."""


class NumericError(ValueError):
    """Raised on non-finite values where the contract requires finite input."""


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of ``a [m,k]`` and ``b [k,n]``."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} x {b.shape}")
    return a @ b


def conv2d_valid(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Valid (no padding), stride-1 correlation with 3x3 kernels.

    ``x [N,C,H,W]`` with ``kernels [K,C,3,3]`` and ``bias [K]`` gives
    ``out[n,k,y,x] = bias[k] + sum_{c,dy,dx} x[n,c,y+dy,x+dx] * kernels[k,c,dy,dx]``
    of shape ``[N,K,H-2,W-2]``.
    """
    _check_conv_shapes(x, kernels, bias)
    windows = sliding_window_view(x, (3, 3), axis=(2, 3))  # [N,C,Ho,Wo,3,3]
    out = np.tensordot(windows, kernels, axes=([1, 4, 5], [1, 2, 3]))  # [N,Ho,Wo,K]
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    out += bias[None, :, None, None]
    return out


def conv2d_valid_backward(
    x: np.ndarray, kernels: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of ``sum(conv2d_valid(x, kernels, bias) * grad_out)``.

    Returns ``(grad_x, grad_kernels, grad_bias)``. ``grad_x`` is the full
    correlation of the zero-padded ``grad_out`` with spatially flipped
    kernels; ``grad_kernels`` correlates ``grad_out`` against input windows.
    """
    _check_conv_shapes(x, kernels, None)
    n, c, h, w = x.shape
    k = kernels.shape[0]
    expected = (n, k, h - 2, w - 2)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match {expected}")

    windows = sliding_window_view(x, (3, 3), axis=(2, 3))
    grad_kernels = np.tensordot(grad_out, windows, axes=([0, 2, 3], [0, 2, 3]))
    grad_bias = grad_out.sum(axis=(0, 2, 3))

    padded = np.zeros((n, k, h + 2, w + 2), dtype=grad_out.dtype)
    padded[:, :, 2:-2, 2:-2] = grad_out
    pwindows = sliding_window_view(padded, (3, 3), axis=(2, 3))  # [N,K,H,W,3,3]
    flipped = kernels[:, :, ::-1, ::-1]
    grad_x = np.tensordot(pwindows, flipped, axes=([1, 4, 5], [0, 2, 3]))
    grad_x = np.ascontiguousarray(grad_x.transpose(0, 3, 1, 2))
    return grad_x, np.ascontiguousarray(grad_kernels), grad_bias


def _check_conv_shapes(x, kernels, bias) -> None:
    if x.ndim != 4:
        raise ShapeError(f"conv input must be [N,C,H,W], got {x.shape}")
    if kernels.ndim != 4 or kernels.shape[2:] != (3, 3):
        raise ShapeError(f"kernels must be [K,C,3,3], got {kernels.shape}")
    if x.shape[1] != kernels.shape[1]:
        raise ShapeError(f"channel mismatch: input {x.shape} vs kernels {kernels.shape}")
    if x.shape[2] < 3 or x.shape[3] < 3:
        raise ShapeError(f"spatial dims must be >= 3 for a 3x3 kernel, got {x.shape}")
    if bias is not None and bias.shape != (kernels.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} does not match K={kernels.shape[0]}")


@dataclass(frozen=True)
class PoolMask:
    """Argmax bookkeeping from :func:`maxpool2`.

    ``indices[n,c,oy,ox]`` is the flat row-major index (``y * in_w + x``) of
    the winning element of each 2x2 window; ties go to the first element in
    scan order. The input spatial extent is kept so the backward pass can
    rebuild planes even when a trailing odd row/column was dropped.
    """

    indices: np.ndarray
    in_h: int
    in_w: int


def maxpool2(x: np.ndarray) -> tuple[np.ndarray, PoolMask]:
    """2x2 max pooling with stride 2; odd trailing row/column is dropped."""
    if x.ndim != 4:
        raise ShapeError(f"pool input must be [N,C,H,W], got {x.shape}")
    n, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ShapeError(f"spatial dims must be >= 2 for 2x2 pooling, got {x.shape}")
    oh, ow = h // 2, w // 2
    win = x[:, :, : oh * 2, : ow * 2].reshape(n, c, oh, 2, ow, 2)
    win = win.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, 4)
    local = win.argmax(axis=-1)  # first max wins, window scan order
    out = np.take_along_axis(win, local[..., None], axis=-1)[..., 0]
    oy, ox = np.meshgrid(np.arange(oh), np.arange(ow), indexing="ij")
    flat = (2 * oy + local // 2) * w + (2 * ox + local % 2)
    return np.ascontiguousarray(out), PoolMask(flat.astype(np.int64), h, w)


def maxpool2_backward(mask: PoolMask, grad_out: np.ndarray) -> np.ndarray:
    """Route ``grad_out`` to the argmax positions; everything else gets zero."""
    if grad_out.shape != mask.indices.shape:
        raise ShapeError(
            f"grad_out shape {grad_out.shape} does not match mask {mask.indices.shape}"
        )
    n, c, oh, ow = grad_out.shape
    grad_x = np.zeros((n, c, mask.in_h * mask.in_w), dtype=grad_out.dtype)
    np.put_along_axis(
        grad_x, mask.indices.reshape(n, c, oh * ow), grad_out.reshape(n, c, oh * ow), axis=2
    )
    return grad_x.reshape(n, c, mask.in_h, mask.in_w)


def relu(x: np.ndarray) -> np.ndarray:
    """Elementwise ``max(0, x)``."""
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Pass gradient where ``x > 0``; subgradient at 0 is 0."""
    if x.shape != grad_out.shape:
        raise ShapeError(f"relu_backward shapes differ: {x.shape} vs {grad_out.shape}")
    return np.where(x > 0, grad_out, grad_out.dtype.type(0))


def softmax2(logits: np.ndarray) -> np.ndarray:
    """Row-wise two-class softmax, max-shifted so huge logits cannot overflow."""
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise ShapeError(f"softmax2 expects [N,2] logits, got {logits.shape}")
    if np.isnan(logits).any():
        raise NumericError("softmax2 received NaN logits")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def bilinear_resize(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Align-corners bilinear resampling of a 2-D map.

    Corner samples are reproduced exactly; a 1x1 input broadcasts its value.
    """
    if grid.ndim != 2:
        raise ShapeError(f"bilinear_resize expects a 2-D map, got {grid.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output extent must be positive, got {out_h}x{out_w}")
    h, w = grid.shape
    # Multiply before dividing so the last sample lands exactly on h-1 / w-1.
    ys = (np.arange(out_h) * (h - 1)) / (out_h - 1) if out_h > 1 else np.zeros(1)
    xs = (np.arange(out_w) * (w - 1)) / (out_w - 1) if out_w > 1 else np.zeros(1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = (1 - fx) * grid[np.ix_(y0, x0)] + fx * grid[np.ix_(y0, x1)]
    bot = (1 - fx) * grid[np.ix_(y1, x0)] + fx * grid[np.ix_(y1, x1)]
    return ((1 - fy) * top + fy * bot).astype(grid.dtype, copy=False)
