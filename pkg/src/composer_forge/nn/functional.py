"""Differentiable ops used by the residual network.

Convolution goes through im2col so the inner loop is one BLAS matmul.
Backward closures capture the padded input rather than the unfolded
column matrix; columns are rebuilt on demand, which keeps peak memory at
one unfold per live backward instead of one per recorded op.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .autodiff import Tensor, make_op


def _check_4d(x: Tensor, name: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4-d (N, C, H, W), got shape {x.shape}")


def _pad_hw(data: np.ndarray, padding: int, fill: float = 0.0) -> np.ndarray:
    if padding == 0:
        return data
    return np.pad(data, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                  mode="constant", constant_values=fill)


def _unfold(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """View of shape (N, C, Ho, Wo, kh, kw) over the padded input."""
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return windows[:, :, ::stride, ::stride]


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    _check_4d(x, "conv2d input")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d weight must be 4-d (F, C, kh, kw), got {weight.shape}")
    n, c, h, w = x.shape
    f, wc, kh, kw = weight.shape
    if wc != c:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, weight expects {wc}")
    if bias is not None and bias.shape != (f,):
        raise ShapeError(f"conv2d bias must have shape ({f},), got {bias.shape}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(f"kernel ({kh}, {kw}) larger than padded input ({hp}, {wp})")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    xp = _pad_hw(x.data, padding)
    win = _unfold(xp, kh, kw, stride)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = weight.data.reshape(f, c * kh * kw)
    out = cols @ wmat.T
    out = out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(dy: np.ndarray):
        dy_mat = dy.transpose(0, 2, 3, 1).reshape(n * ho * wo, f)
        # rebuild columns from the saved padded input (view + one copy)
        win_b = _unfold(xp, kh, kw, stride)
        cols_b = win_b.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
        dw = (dy_mat.T @ cols_b).reshape(f, c, kh, kw)
        dcols = (dy_mat @ wmat).reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            hi = i + stride * (ho - 1) + 1
            for j in range(kw):
                wj = j + stride * (wo - 1) + 1
                dxp[:, :, i:hi:stride, j:wj:stride] += dcols[:, :, :, :, i, j]
        dx = dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp
        if bias is None:
            return dx, dw
        return dx, dw, dy.sum(axis=(0, 2, 3))

    return make_op(out, parents, "conv2d", backward)


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                 running_mean: np.ndarray, running_var: np.ndarray,
                 training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    _check_4d(x, "batch_norm2d input")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm2d affine parameters must have shape ({c},)")
    axes = (0, 2, 3)

    if training:
        if n < 2:
            raise ShapeError("batch_norm2d in training mode needs batch size >= 2")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean
        var = running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(dy: np.ndarray):
        dgamma = (dy * xhat).sum(axis=axes)
        dbeta = dy.sum(axis=axes)
        scale = (gamma.data * inv_std)[None, :, None, None]
        if training:
            m_dy = dy.mean(axis=axes)[None, :, None, None]
            m_dyx = (dy * xhat).mean(axis=axes)[None, :, None, None]
            dx = scale * (dy - m_dy - xhat * m_dyx)
        else:
            dx = scale * dy
        return dx, dgamma, dbeta

    return make_op(out, (x, gamma, beta), "batch_norm2d", backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0)

    def backward(dy: np.ndarray):
        return (dy * mask,)

    return make_op(out, (x,), "relu", backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum for residual joins; no broadcasting."""
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = a.data + b.data

    def backward(dy: np.ndarray):
        return dy, dy

    return make_op(out, (a, b), "add", backward)


def max_pool2d(x: Tensor, kernel: int = 3, stride: int = 2, padding: int = 1) -> Tensor:
    _check_4d(x, "max_pool2d input")
    n, c, h, w = x.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    if kernel > hp or kernel > wp:
        raise ShapeError(f"pool kernel {kernel} larger than padded input ({hp}, {wp})")
    ho = (hp - kernel) // stride + 1
    wo = (wp - kernel) // stride + 1

    xp = _pad_hw(x.data, padding, fill=-np.inf)
    win = _unfold(xp, kernel, kernel, stride)
    flat = win.reshape(n, c, ho, wo, kernel * kernel)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(dy: np.ndarray):
        # source coordinates in the unpadded input for every window max
        src_h = (np.arange(ho) * stride - padding)[None, None, :, None] + idx // kernel
        src_w = (np.arange(wo) * stride - padding)[None, None, None, :] + idx % kernel
        ni, ci = np.meshgrid(np.arange(n), np.arange(c), indexing="ij")
        ni = ni[:, :, None, None]
        ci = ci[:, :, None, None]
        flat_idx = ((ni * c + ci) * h + src_h) * w + src_w
        dx = np.zeros(n * c * h * w, dtype=dy.dtype)
        np.add.at(dx, flat_idx.ravel(), dy.ravel())
        return (dx.reshape(n, c, h, w),)

    return make_op(out, (x,), "max_pool2d", backward)


def global_avg_pool(x: Tensor) -> Tensor:
    _check_4d(x, "global_avg_pool input")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def backward(dy: np.ndarray):
        dx = np.broadcast_to(dy[:, :, None, None] / (h * w), (n, c, h, w))
        return (np.ascontiguousarray(dx),)

    return make_op(out, (x,), "global_avg_pool", backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError(f"linear expects 2-d input and weight, got {x.shape} and {weight.shape}")
    k, d = weight.shape
    if x.shape[1] != d:
        raise ShapeError(f"linear feature mismatch: input has {x.shape[1]}, weight expects {d}")
    if bias is not None and bias.shape != (k,):
        raise ShapeError(f"linear bias must have shape ({k},), got {bias.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data[None, :]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(dy: np.ndarray):
        dx = dy @ weight.data
        dw = dy.T @ x.data
        if bias is None:
            return dx, dw
        return dx, dw, dy.sum(axis=0)

    return make_op(out, parents, "linear", backward)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-stabilized softmax on a plain array (inference helper)."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects (N, K) logits, got {logits.shape}")
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"labels must have shape ({n},), got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ShapeError(f"label outside class range [0, {k})")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(n), labels]
    loss = np.asarray((logsumexp - picked).mean(), dtype=logits.dtype)

    def backward(dy: np.ndarray):
        probs = np.exp(shifted - logsumexp[:, None])
        probs[np.arange(n), labels] -= 1.0
        return (probs * (dy / n),)

    return make_op(loss, (logits,), "cross_entropy", backward)
