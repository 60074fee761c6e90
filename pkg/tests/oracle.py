"""Slow reference implementations used as test oracles.

Written directly from the layer definitions with explicit loops; nothing
here is shared with the package's vectorised kernels.
"""

import math

import numpy as np

from flownas.arch import Architecture, BlockSpec, infer_shapes
from flownas.engine.network import loss_and_grad
from flownas.errors import DegenerateShape


def _pads(n, k, s, padding):
    if padding == "valid":
        return 0, 0, (n - k) // s + 1
    out = math.ceil(n / s)
    total = max((out - 1) * s + k - n, 0)
    return total // 2, total - total // 2, out


def naive_conv(x, w, b, stride, padding):
    n, c_in = x.shape
    k, _, c_out = w.shape
    left, _, out = _pads(n, k, stride, padding)
    y = np.zeros((out, c_out))
    for t in range(out):
        for o in range(c_out):
            acc = b[o]
            for j in range(k):
                pos = t * stride + j - left
                if 0 <= pos < n:
                    for c in range(c_in):
                        acc += x[pos, c] * w[j, c, o]
            y[t, o] = acc
    return y


def naive_pool(x, kind, size, stride, padding):
    n, ch = x.shape
    left, _, out = _pads(n, size, stride, padding)
    y = np.zeros((out, ch))
    for t in range(out):
        lo = t * stride - left
        idx = [p for p in range(lo, lo + size) if 0 <= p < n]
        for c in range(ch):
            vals = [x[p, c] for p in idx]
            y[t, c] = max(vals) if kind == "max" else sum(vals) / len(vals)
    return y


def naive_logits(arch, weights, sample):
    """Eval-mode logits for one sample of shape [length, channels]."""
    h = np.asarray(sample, dtype=np.float64)
    for i, b in enumerate(arch.blocks, start=1):
        p = f"block{i}"
        h = naive_conv(h, weights[f"{p}.conv.w"], weights[f"{p}.conv.b"], b.stride, b.padding)
        for c in range(h.shape[1]):
            std = math.sqrt(weights[f"{p}.bn.var"][c] + 1e-5)
            h[:, c] = (weights[f"{p}.bn.gamma"][c] * (h[:, c] - weights[f"{p}.bn.mean"][c]) / std
                       + weights[f"{p}.bn.beta"][c])
        h = np.where(h > 0, h, 0.0)
        if b.has_pool:
            h = naive_pool(h, b.pool_kind, b.pool_size, b.pool_stride, b.pool_padding)
    gap = h.sum(axis=0) / h.shape[0]
    out = np.array(weights["dense.b"], dtype=np.float64)
    for c in range(gap.shape[0]):
        out = out + gap[c] * weights["dense.w"][c]
    return out


def gradient_check(arch, weights, x, labels, eps=1e-4, seed=0, rtol=1e-4, atol=1e-9):
    """Compare analytic gradients with central differences.

    Returns (n_ok, n_total, worst). Dropout masks are held fixed by reseeding
    the rng for every loss evaluation. A coordinate passes when the relative
    error is within ``rtol`` or both values are below ``atol``.
    """
    _, grads, _ = loss_and_grad(arch, weights, x, labels, np.random.default_rng(seed))
    ok = total = 0
    worst = 0.0
    for name, g in grads.items():
        w = weights[name]
        for idx in np.ndindex(w.shape):
            orig = w[idx]
            w[idx] = orig + eps
            up = loss_and_grad(arch, weights, x, labels, np.random.default_rng(seed))[0]
            w[idx] = orig - eps
            down = loss_and_grad(arch, weights, x, labels, np.random.default_rng(seed))[0]
            w[idx] = orig
            num = (up - down) / (2 * eps)
            ana = g[idx]
            denom = max(abs(num), abs(ana))
            err = 0.0 if denom < atol else abs(num - ana) / denom
            worst = max(worst, err)
            ok += err <= rtol
            total += 1
    return ok, total, worst


def random_small_arch(rng, max_blocks=3, length=(16, 48), max_filters=6, n_classes=None,
                      dropout=False):
    """A random architecture small enough for loop-based oracles."""
    while True:
        blocks = []
        for _ in range(int(rng.integers(1, max_blocks + 1))):
            kind = ["none", "max", "avg"][int(rng.integers(3))]
            size = int(rng.integers(2, 4))
            blocks.append(BlockSpec(
                filters=int(rng.integers(2, max_filters + 1)),
                kernel=int(rng.integers(1, 6)),
                stride=int(rng.integers(1, 3)),
                padding=["valid", "same"][int(rng.integers(2))],
                pool_kind=kind,
                pool_size=size if kind != "none" else 0,
                pool_stride=int(rng.integers(1, 4)) if kind != "none" else 0,
                pool_padding=["valid", "same"][int(rng.integers(2))],
                dropout=float(rng.uniform(0.1, 0.5)) if dropout and rng.random() < 0.5 else 0.0,
            ))
        arch = Architecture(int(rng.integers(*length)),
                            n_classes or int(rng.integers(2, 6)), tuple(blocks))
        try:
            infer_shapes(arch)
        except DegenerateShape:
            continue
        return arch


def randomise_bn(weights, rng):
    """Non-trivial BN parameters and running statistics, in place."""
    for name in weights:
        if name.endswith(".bn.gamma"):
            weights[name][:] = rng.uniform(0.5, 1.5, weights[name].shape)
        elif name.endswith((".bn.beta", ".bn.mean", ".conv.b", "dense.b")):
            weights[name][:] = rng.normal(0, 0.2, weights[name].shape)
        elif name.endswith(".bn.var"):
            weights[name][:] = rng.uniform(0.5, 2.0, weights[name].shape)
    return weights
