"""Forward/backward kernels for [batch, length, channels] tensors."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..arch import same_padding

BN_EPS = 1e-5


def _pad(x, left, right, value=0.0):
    if left == 0 and right == 0:
        return x
    return np.pad(x, ((0, 0), (left, right), (0, 0)), constant_values=value)


def _windows(xp, size, stride):
    # -> [B, out, C, size]
    return sliding_window_view(xp, size, axis=1)[:, ::stride]


def _scatter_windows(dwin, padded_len, size, stride):
    """Adjoint of ``_windows``: sum window gradients back onto the input."""
    b, out, c, _ = dwin.shape
    dxp = np.zeros((b, padded_len, c), dtype=dwin.dtype)
    span = stride * (out - 1) + 1
    for j in range(size):
        dxp[:, j : j + span : stride] += dwin[..., j]
    return dxp


def _padding_for(in_len, size, stride, padding):
    return same_padding(in_len, size, stride) if padding == "same" else (0, 0)


def conv_forward(x, w, b, stride, padding):
    """``w`` has shape [kernel, C_in, C_out]."""
    k, c_in, c_out = w.shape
    left, right = _padding_for(x.shape[1], k, stride, padding)
    xp = _pad(x, left, right)
    win = _windows(xp, k, stride)
    bsz, out_len = win.shape[:2]
    cols = win.reshape(bsz * out_len, c_in * k)
    w2 = w.transpose(1, 0, 2).reshape(c_in * k, c_out)
    y = (cols @ w2 + b).reshape(bsz, out_len, c_out)
    return y, (cols, w2, xp.shape[1], left, x.shape[1], k, stride)


def conv_backward(dy, cache):
    cols, w2, padded_len, left, in_len, k, stride = cache
    bsz, out_len, c_out = dy.shape
    dy2 = dy.reshape(bsz * out_len, c_out)
    dw2 = cols.T @ dy2
    c_in = dw2.shape[0] // k
    dw = dw2.reshape(c_in, k, c_out).transpose(1, 0, 2)
    db = dy2.sum(axis=0)
    dwin = (dy2 @ w2.T).reshape(bsz, out_len, c_in, k)
    dxp = _scatter_windows(dwin, padded_len, k, stride)
    return dxp[:, left : left + in_len], dw, db


def bn_forward_train(x, gamma, beta, eps=BN_EPS):
    mean = x.mean(axis=(0, 1))
    var = x.var(axis=(0, 1))
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    return gamma * xhat + beta, (xhat, inv_std, gamma), mean, var


def bn_forward_eval(x, gamma, beta, mean, var, eps=BN_EPS):
    return gamma * (x - mean) / np.sqrt(var + eps) + beta


def bn_backward(dy, cache):
    xhat, inv_std, gamma = cache
    n = dy.shape[0] * dy.shape[1]
    dgamma = (dy * xhat).sum(axis=(0, 1))
    dbeta = dy.sum(axis=(0, 1))
    dxhat = dy * gamma
    dx = (inv_std / n) * (
        n * dxhat - dxhat.sum(axis=(0, 1)) - xhat * (dxhat * xhat).sum(axis=(0, 1))
    )
    return dx, dgamma, dbeta


def maxpool_forward(x, size, stride, padding):
    left, right = _padding_for(x.shape[1], size, stride, padding)
    xp = _pad(x, left, right, -np.inf)
    win = _windows(xp, size, stride)
    arg = win.argmax(axis=-1)  # first maximum on ties
    y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return y, (arg, xp.shape[1], left, x.shape[1], size, stride)


def maxpool_backward(dy, cache):
    arg, padded_len, left, in_len, size, stride = cache
    dwin = np.zeros(dy.shape + (size,), dtype=dy.dtype)
    np.put_along_axis(dwin, arg[..., None], dy[..., None], axis=-1)
    dxp = _scatter_windows(dwin, padded_len, size, stride)
    return dxp[:, left : left + in_len]


def avgpool_forward(x, size, stride, padding):
    """Padding positions are excluded from each window's average."""
    left, right = _padding_for(x.shape[1], size, stride, padding)
    xp = _pad(x, left, right)
    ones = _pad(np.ones((1, x.shape[1], 1), dtype=x.dtype), left, right)
    count = _windows(ones, size, stride).sum(axis=-1)  # [1, out, 1]
    y = _windows(xp, size, stride).sum(axis=-1) / count
    return y, (count, xp.shape[1], left, x.shape[1], size, stride)


def avgpool_backward(dy, cache):
    count, padded_len, left, in_len, size, stride = cache
    share = dy / count
    dwin = np.broadcast_to(share[..., None], dy.shape + (size,))
    dxp = _scatter_windows(dwin, padded_len, size, stride)
    return dxp[:, left : left + in_len]


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits, labels):
    """Mean cross-entropy and its gradient with respect to the logits."""
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    n = logits.shape[0]
    idx = np.arange(n)
    loss = -logp[idx, labels].mean()
    grad = np.exp(logp)
    grad[idx, labels] -= 1.0
    return float(loss), grad / n
