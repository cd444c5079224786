"""Dense float64 primitives used by the toy detector, plus a finite-difference oracle.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 in C order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64)


def softmax(logits, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis`` (max-subtracted)."""
    z = as_tensor(logits)
    if z.size == 0 or z.shape[axis] == 0:
        raise ValueError("empty logits")
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. softmax outputs back to the logits (last axis)."""
    inner = np.sum(grad_probs * probs, axis=-1, keepdims=True)
    return probs * (grad_probs - inner)


def sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def channel_mean(features) -> np.ndarray:
    """Mean over the trailing channel axis: ``[..., H, W, C] -> [..., H, W]``."""
    a = as_tensor(features)
    if a.ndim < 3 or a.shape[-1] < 1:
        raise ValueError(f"expected [..., H, W, C] with C >= 1, got shape {a.shape}")
    return a.mean(axis=-1)


def channel_mean_backward(grad_map: np.ndarray, channels: int) -> np.ndarray:
    """Adjoint of :func:`channel_mean`: broadcast ``grad / C`` to every channel."""
    g = np.asarray(grad_map, dtype=np.float64)[..., None] / channels
    return np.repeat(g, channels, axis=-1)


# --------------------------------------------------------------------------
# convolution (direct correlation, NHWC, weights laid out [kh, kw, cin, cout])
# --------------------------------------------------------------------------


def conv_output_size(size: int, kernel: int, stride: int) -> int:
    pad = kernel // 2
    return (size + 2 * pad - kernel) // stride + 1


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int):
    """Zero-padded ("same" for odd kernels) strided correlation.

    Returns ``(out, cache)``; ``cache`` feeds :func:`conv2d_backward`.
    """
    kh, kw, cin, cout = w.shape
    pad = kh // 2
    B, H, W, _ = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    ho = conv_output_size(H, kh, stride)
    wo = conv_output_size(W, kw, stride)
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    win = win[:, :ho, :wo]  # (B, ho, wo, cin, kh, kw)
    cols = win.reshape(B * ho * wo, cin * kh * kw)
    wmat = w.transpose(2, 0, 1, 3).reshape(cin * kh * kw, cout)
    out = (cols @ wmat).reshape(B, ho, wo, cout) + b
    return out, (cols, x.shape, w.shape, stride)


def conv2d_backward(dout: np.ndarray, cache, w: np.ndarray, need_dx: bool = True):
    """Gradients ``(dx, dw, db)`` of :func:`conv2d_forward`; ``dx`` is None unless requested."""
    cols, (B, H, W, cin), (kh, kw, _, cout), stride = cache
    _, ho, wo, _ = dout.shape
    pad = kh // 2
    d2 = dout.reshape(-1, cout)
    db = d2.sum(axis=0)
    dw = (cols.T @ d2).reshape(cin, kh, kw, cout).transpose(1, 2, 0, 3)
    if not need_dx:
        return None, dw, db
    wmat = w.transpose(2, 0, 1, 3).reshape(cin * kh * kw, cout)
    dcols = (d2 @ wmat.T).reshape(B, ho, wo, cin, kh, kw)
    dxp = np.zeros((B, H + 2 * pad, W + 2 * pad, cin))
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dcols[..., i, j]
    return dxp[:, pad:pad + H, pad:pad + W, :], dw, db


# --------------------------------------------------------------------------
# finite differences
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GradCheckReport:
    max_abs_diff: float
    max_rel_diff: float
    num_params: int
    passed: bool


def finite_diff_grad(f: Callable[[np.ndarray], float], params, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat parameter vector."""
    if not h > 0:
        raise ValueError("step h must be positive")
    p = np.array(params, dtype=np.float64).ravel()
    grad = np.zeros_like(p)
    for i in range(p.size):
        old = p[i]
        p[i] = old + h
        fp = float(f(p))
        p[i] = old - h
        fm = float(f(p))
        p[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at parameter index {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return np.abs(a - n) / scale


def grad_check(f, analytic, params, h: float = 1e-6, tolerance: float = 1e-5) -> GradCheckReport:
    """Compare an analytic gradient with :func:`finite_diff_grad`."""
    numeric = finite_diff_grad(f, params, h)
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    if analytic.shape != numeric.shape:
        raise ValueError(f"gradient shape {analytic.shape} != parameter shape {numeric.shape}")
    diff = np.abs(analytic - numeric)
    rel = relative_error(analytic, numeric)
    return GradCheckReport(
        max_abs_diff=float(diff.max(initial=0.0)),
        max_rel_diff=float(rel.max(initial=0.0)),
        num_params=int(numeric.size),
        passed=bool(rel.max(initial=0.0) <= tolerance),
    )
