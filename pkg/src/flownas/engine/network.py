"""Forward and reverse passes for an ``Architecture`` over plain weight dicts.

Weights are a ``dict[str, ndarray]`` keyed like ``block1.conv.w``. Conv
kernels are stored [kernel, C_in, C_out], dense weights [C_in, n_classes].
Batch-norm running statistics live in the same dict but are never trained.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..arch import Architecture
from ..errors import NonFiniteActivation, ShapeMismatch
from . import layers as L

Weights = dict[str, np.ndarray]

BN_MOMENTUM = 0.9
NON_TRAINABLE = (".bn.mean", ".bn.var")


def is_trainable(name: str) -> bool:
    return not name.endswith(NON_TRAINABLE)


def init_weights(arch: Architecture, rng: np.random.Generator, dtype=np.float32) -> Weights:
    """Fan-in scaled uniform conv/dense init (Glorot-style bound), BN at identity."""
    w: Weights = {}
    c_in = arch.input_channels
    for i, b in enumerate(arch.blocks, start=1):
        p = f"block{i}"
        fan_in, fan_out = b.kernel * c_in, b.kernel * b.filters
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        w[f"{p}.conv.w"] = rng.uniform(-lim, lim, (b.kernel, c_in, b.filters)).astype(dtype)
        w[f"{p}.conv.b"] = np.zeros(b.filters, dtype)
        w[f"{p}.bn.gamma"] = np.ones(b.filters, dtype)
        w[f"{p}.bn.beta"] = np.zeros(b.filters, dtype)
        w[f"{p}.bn.mean"] = np.zeros(b.filters, dtype)
        w[f"{p}.bn.var"] = np.ones(b.filters, dtype)
        c_in = b.filters
    lim = np.sqrt(6.0 / (c_in + arch.n_classes))
    w["dense.w"] = rng.uniform(-lim, lim, (c_in, arch.n_classes)).astype(dtype)
    w["dense.b"] = np.zeros(arch.n_classes, dtype)
    return w


def expected_shapes(arch: Architecture) -> dict[str, tuple[int, ...]]:
    shapes = {}
    c_in = arch.input_channels
    for i, b in enumerate(arch.blocks, start=1):
        p = f"block{i}"
        shapes[f"{p}.conv.w"] = (b.kernel, c_in, b.filters)
        for name in ("conv.b", "bn.gamma", "bn.beta", "bn.mean", "bn.var"):
            shapes[f"{p}.{name}"] = (b.filters,)
        c_in = b.filters
    shapes["dense.w"] = (c_in, arch.n_classes)
    shapes["dense.b"] = (arch.n_classes,)
    return shapes


def check_weights(arch: Architecture, weights: Weights) -> None:
    want = expected_shapes(arch)
    if set(want) != set(weights):
        missing = sorted(set(want) - set(weights))
        extra = sorted(set(weights) - set(want))
        raise ShapeMismatch(f"weights do not fit architecture (missing {missing}, extra {extra})")
    for name, shape in want.items():
        if weights[name].shape != shape:
            raise ShapeMismatch(f"{name}: shape {weights[name].shape}, expected {shape}")


@dataclass
class ForwardResult:
    logits: np.ndarray
    caches: list = field(default_factory=list)
    bn_stats: dict = field(default_factory=dict)  # name -> (batch mean, batch var)
    activations: dict = field(default_factory=dict)


def _as_batch(arch: Architecture, x: np.ndarray, dtype) -> np.ndarray:
    x = np.asarray(x, dtype=dtype)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3 or x.shape[1:] != (arch.input_len, arch.input_channels):
        raise ShapeMismatch(
            f"batch shape {x.shape} does not match input {arch.input_len}x{arch.input_channels}"
        )
    return x


def _finite(name, a):
    if not np.isfinite(a).all():
        raise NonFiniteActivation(f"non-finite values after {name}")


def forward(
    arch: Architecture,
    weights: Weights,
    x: np.ndarray,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
    keep_activations: bool = False,
) -> ForwardResult:
    """Run the network; ``train`` uses batch statistics and dropout.

    In train mode a ``rng`` is needed only when some block has dropout.
    ``keep_activations`` records every layer output by name (for
    calibration and tests); the caches are what ``backward`` consumes.
    """
    dtype = weights["dense.w"].dtype
    h = _as_batch(arch, x, dtype)
    res = ForwardResult(logits=None)
    acts = res.activations

    def keep(name, a):
        _finite(name, a)
        if keep_activations:
            acts[name] = a

    keep("input", h)
    for i, b in enumerate(arch.blocks, start=1):
        p = f"block{i}"
        h, c = L.conv_forward(h, weights[f"{p}.conv.w"], weights[f"{p}.conv.b"],
                              b.stride, b.padding)
        res.caches.append(("conv", p, c))
        keep(f"{p}.conv", h)

        if train:
            h, c, mean, var = L.bn_forward_train(h, weights[f"{p}.bn.gamma"],
                                                 weights[f"{p}.bn.beta"])
            res.caches.append(("bn", p, c))
            res.bn_stats[p] = (mean, var)
        else:
            h = L.bn_forward_eval(h, weights[f"{p}.bn.gamma"], weights[f"{p}.bn.beta"],
                                  weights[f"{p}.bn.mean"], weights[f"{p}.bn.var"])
        keep(f"{p}.bn", h)

        mask = h > 0
        h = h * mask
        res.caches.append(("relu", p, mask))
        keep(f"{p}.relu", h)

        if b.pool_kind == "max":
            h, c = L.maxpool_forward(h, b.pool_size, b.pool_stride, b.pool_padding)
            res.caches.append(("maxpool", p, c))
            keep(f"{p}.pool", h)
        elif b.pool_kind == "avg":
            h, c = L.avgpool_forward(h, b.pool_size, b.pool_stride, b.pool_padding)
            res.caches.append(("avgpool", p, c))
            keep(f"{p}.pool", h)

        if train and b.dropout > 0:
            keep_prob = 1.0 - b.dropout
            drop = (rng.random(h.shape) < keep_prob).astype(dtype) / dtype.type(keep_prob)
            h = h * drop
            res.caches.append(("dropout", p, drop))

    res.caches.append(("gap", "gap", h.shape[1]))
    h = h.mean(axis=1)
    keep("gap", h)
    res.caches.append(("dense", "dense", h))
    logits = h @ weights["dense.w"] + weights["dense.b"]
    keep("dense", logits)
    res.logits = logits
    return res


def backward(arch: Architecture, weights: Weights, res: ForwardResult,
             dlogits: np.ndarray) -> Weights:
    """Gradients of every trainable weight given d(loss)/d(logits)."""
    grads: Weights = {}
    g = dlogits
    for kind, name, c in reversed(res.caches):
        if kind == "dense":
            grads["dense.w"] = c.T @ g
            grads["dense.b"] = g.sum(axis=0)
            g = g @ weights["dense.w"].T
        elif kind == "gap":
            g = np.repeat(g[:, None, :] / c, c, axis=1)
        elif kind == "dropout":
            g = g * c
        elif kind == "maxpool":
            g = L.maxpool_backward(g, c)
        elif kind == "avgpool":
            g = L.avgpool_backward(g, c)
        elif kind == "relu":
            g = g * c
        elif kind == "bn":
            g, grads[f"{name}.bn.gamma"], grads[f"{name}.bn.beta"] = L.bn_backward(g, c)
        elif kind == "conv":
            g, grads[f"{name}.conv.w"], grads[f"{name}.conv.b"] = L.conv_backward(g, c)
    return grads


def loss_and_grad(arch: Architecture, weights: Weights, x: np.ndarray, labels: np.ndarray,
                  rng: Optional[np.random.Generator] = None):
    """Train-mode mean cross-entropy, trainable gradients and the forward result."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= arch.n_classes):
        raise ValueError(f"labels must lie in [0, {arch.n_classes})")
    res = forward(arch, weights, x, train=True, rng=rng)
    loss, dlogits = L.softmax_xent(res.logits, labels)
    return loss, backward(arch, weights, res, dlogits), res


def update_running_stats(weights: Weights, bn_stats: dict, momentum: float = BN_MOMENTUM) -> None:
    for p, (mean, var) in bn_stats.items():
        weights[f"{p}.bn.mean"] *= momentum
        weights[f"{p}.bn.mean"] += (1 - momentum) * mean
        weights[f"{p}.bn.var"] *= momentum
        weights[f"{p}.bn.var"] += (1 - momentum) * var


def predict_proba(arch: Architecture, weights: Weights, x: np.ndarray,
                  batch_size: int = 256) -> np.ndarray:
    out = [L.softmax(forward(arch, weights, x[s : s + batch_size]).logits)
           for s in range(0, len(x), batch_size)]
    if not out:
        return np.zeros((0, arch.n_classes))
    return np.concatenate(out)

