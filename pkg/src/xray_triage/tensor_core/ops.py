"""Forward and backward primitives for the two desk-scale networks.

All operations take and return plain numpy arrays (float32 by default; float64
flows through unchanged, which the gradient checker relies on). Convolution
uses cross-correlation semantics — no kernel flip — and is implemented as
im2col plus one matmul so that desk-scale training stays in BLAS.

Every ``*_backward`` function receives the upstream gradient plus whatever the
forward pass needed, and returns gradients in input-argument order.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError


def tensor(data, dtype=np.float32) -> np.ndarray:
    """Coerce ``data`` to a contiguous array of the given float dtype."""
    return np.ascontiguousarray(np.asarray(data, dtype=dtype))


def _conv_out_size(extent: int, k: int, stride: int, padding: int) -> int:
    return (extent + 2 * padding - k) // stride + 1


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Unfold ``x`` [N,C,H,W] into columns [N, C*kh*kw, H'*W']."""
    n, c, h, w = x.shape
    out_h = _conv_out_size(h, kh, stride, padding)
    out_w = _conv_out_size(w, kw, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    s0, s1, s2, s3 = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, kh, kw, out_h, out_w),
        strides=(s0, s1, s2, s3, s2 * stride, s3 * stride),
        writeable=False,
    )
    return windows.reshape(n, c * kh * kw, out_h * out_w)


def col2im(
    cols: np.ndarray, input_shape: tuple, kh: int, kw: int, stride: int, padding: int
) -> np.ndarray:
    """Scatter-add columns [N, C*kh*kw, H'*W'] back onto the input layout.

    Adjoint of :func:`im2col`: overlapping windows accumulate.
    """
    n, c, h, w = input_shape
    out_h = _conv_out_size(h, kh, stride, padding)
    out_w = _conv_out_size(w, kw, stride, padding)
    dx = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    cols = cols.reshape(n, c, kh, kw, out_h, out_w)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride] += cols[
                :, :, i, j
            ]
    if padding:
        return dx[:, :, padding:-padding, padding:-padding]
    return dx


def _check_conv_args(x: np.ndarray, kernel: np.ndarray, stride: int, padding: int) -> None:
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be 4-D [N,C,H,W], got {x.ndim}-D {x.shape}")
    if kernel.ndim != 4:
        raise ShapeError(
            f"conv2d: kernel must be 4-D [Cout,Cin,kh,kw], got {kernel.ndim}-D {kernel.shape}"
        )
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    _, cin, h, w = x.shape
    _, k_cin, kh, kw = kernel.shape
    if cin != k_cin:
        raise ShapeError(
            f"conv2d: input channel axis has {cin} channels but kernel expects {k_cin}"
        )
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} exceeds padded spatial extent "
            f"{h + 2 * padding}x{w + 2 * padding}"
        )


def conv2d(
    x: np.ndarray,
    kernel: np.ndarray,
    bias: np.ndarray | None,
    stride: int = 1,
    padding: int = 0,
) -> np.ndarray:
    """Cross-correlate ``x`` [N,Cin,H,W] with ``kernel`` [Cout,Cin,kh,kw]."""
    _check_conv_args(x, kernel, stride, padding)
    n, _, h, w = x.shape
    cout, cin, kh, kw = kernel.shape
    out_h = _conv_out_size(h, kh, stride, padding)
    out_w = _conv_out_size(w, kw, stride, padding)
    cols = im2col(x, kh, kw, stride, padding)
    out = np.matmul(kernel.reshape(cout, cin * kh * kw), cols)
    if bias is not None:
        if bias.shape != (cout,):
            raise ShapeError(f"conv2d: bias axis must be ({cout},), got {bias.shape}")
        out = out + bias[None, :, None]
    return out.reshape(n, cout, out_h, out_w)


def conv2d_backward(
    grad_out: np.ndarray,
    x: np.ndarray,
    kernel: np.ndarray,
    stride: int = 1,
    padding: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of :func:`conv2d` w.r.t. (input, kernel, bias)."""
    n = x.shape[0]
    cout, cin, kh, kw = kernel.shape
    g = grad_out.reshape(n, cout, -1)
    cols = im2col(x, kh, kw, stride, padding)
    dbias = g.sum(axis=(0, 2))
    dkernel = np.einsum("nol,nkl->ok", g, cols).reshape(kernel.shape)
    dcols = np.einsum("ok,nol->nkl", kernel.reshape(cout, -1), g)
    dx = col2im(dcols, x.shape, kh, kw, stride, padding)
    return dx, dkernel, dbias


def depthwise_conv2d(
    x: np.ndarray, kernel: np.ndarray, stride: int = 1, padding: int = 0
) -> np.ndarray:
    """Per-channel convolution: ``kernel`` [C,1,kh,kw], no cross-channel mixing."""
    if x.ndim != 4:
        raise ShapeError(f"depthwise: input must be 4-D [N,C,H,W], got {x.shape}")
    n, c, h, w = x.shape
    kc, one, kh, kw = kernel.shape
    if one != 1 or kc != c:
        raise ShapeError(
            f"depthwise: kernel must be [{c},1,kh,kw] for {c}-channel input, got {kernel.shape}"
        )
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(
            f"depthwise: kernel {kh}x{kw} exceeds padded extent "
            f"{h + 2 * padding}x{w + 2 * padding}"
        )
    out_h = _conv_out_size(h, kh, stride, padding)
    out_w = _conv_out_size(w, kw, stride, padding)
    cols = im2col(x, kh, kw, stride, padding).reshape(n, c, kh * kw, out_h * out_w)
    out = np.einsum("nckl,ck->ncl", cols, kernel.reshape(c, kh * kw))
    return out.reshape(n, c, out_h, out_w)


def depthwise_conv2d_backward(
    grad_out: np.ndarray, x: np.ndarray, kernel: np.ndarray, stride: int = 1, padding: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    n, c, _, _ = x.shape
    _, _, kh, kw = kernel.shape
    g = grad_out.reshape(n, c, -1)
    cols = im2col(x, kh, kw, stride, padding).reshape(n, c, kh * kw, -1)
    dkernel = np.einsum("ncl,nckl->ck", g, cols).reshape(kernel.shape)
    dcols = np.einsum("ck,ncl->nckl", kernel.reshape(c, kh * kw), g)
    dx = col2im(dcols.reshape(n, c * kh * kw, -1), x.shape, kh, kw, stride, padding)
    return dx, dkernel


def depthwise_separable_conv(
    x: np.ndarray,
    depthwise_kernel: np.ndarray,
    pointwise_kernel: np.ndarray,
    stride: int = 1,
    padding: int = 0,
) -> np.ndarray:
    """Depthwise conv followed by a 1x1 pointwise conv (no bias, no activation).

    ``depthwise_kernel`` is [C,1,kh,kw]; ``pointwise_kernel`` is [Cout,C,1,1].
    """
    c = x.shape[1]
    if pointwise_kernel.ndim != 4 or pointwise_kernel.shape[2:] != (1, 1):
        raise ShapeError(
            f"separable: pointwise kernel must be [Cout,C,1,1], got {pointwise_kernel.shape}"
        )
    if pointwise_kernel.shape[1] != c:
        raise ShapeError(
            f"separable: pointwise stage expects {pointwise_kernel.shape[1]} channels "
            f"but depthwise stage produces {c}"
        )
    mid = depthwise_conv2d(x, depthwise_kernel, stride, padding)
    return conv2d(mid, pointwise_kernel, None, stride=1, padding=0)


def avg_pool2d(x: np.ndarray, window: int, stride: int) -> np.ndarray:
    """Mean pooling over ``window`` x ``window`` patches."""
    if x.ndim != 4:
        raise ShapeError(f"avg_pool2d: input must be 4-D, got {x.shape}")
    n, c, h, w = x.shape
    if window > h or window > w:
        raise ShapeError(f"avg_pool2d: window {window} exceeds spatial extent {h}x{w}")
    out_h = _conv_out_size(h, window, stride, 0)
    out_w = _conv_out_size(w, window, stride, 0)
    s0, s1, s2, s3 = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, window, window, out_h, out_w),
        strides=(s0, s1, s2, s3, s2 * stride, s3 * stride),
        writeable=False,
    )
    return windows.mean(axis=(2, 3))


def avg_pool2d_backward(
    grad_out: np.ndarray, input_shape: tuple, window: int, stride: int
) -> np.ndarray:
    n, c, _, _ = input_shape
    g = grad_out / np.asarray(window * window, dtype=grad_out.dtype)
    l = grad_out.shape[2] * grad_out.shape[3]
    cols = np.broadcast_to(
        g.reshape(n, c, 1, l), (n, c, window * window, l)
    ).reshape(n, c * window * window, l)
    return col2im(cols, input_shape, window, window, stride, 0)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """[N,C,H,W] -> [N,C], mean over all spatial positions."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool: input must be 4-D, got {x.shape}")
    return x.mean(axis=(2, 3))


def global_avg_pool_backward(grad_out: np.ndarray, input_shape: tuple) -> np.ndarray:
    n, c, h, w = input_shape
    scale = np.asarray(h * w, dtype=grad_out.dtype)
    return np.broadcast_to(grad_out[:, :, None, None] / scale, input_shape).copy()


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, grad_out, np.zeros((), dtype=grad_out.dtype))


def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """[N,F] @ weight[C,F].T + bias[C]."""
    if x.ndim != 2:
        raise ShapeError(f"linear: input must be 2-D [N,F], got {x.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"linear: input feature axis has {x.shape[1]} features "
            f"but weight expects {weight.shape[1]}"
        )
    return x @ weight.T + bias


def linear_backward(
    grad_out: np.ndarray, x: np.ndarray, weight: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    dx = grad_out @ weight
    dweight = grad_out.T @ x
    dbias = grad_out.sum(axis=0)
    return dx, dweight, dbias


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-subtraction for overflow safety."""
    if logits.ndim != 2:
        raise ShapeError(f"softmax: expected 2-D [N,C] logits, got {logits.shape}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)
