"""Simulated post-training quantization (fake-quant in float arithmetic).

Batch norm is folded into the preceding convolution, then every conv and
dense layer sees its input activation and its weights rounded onto an
integer grid and mapped back to reals. Biases stay real-valued, as an
int32 accumulator bias would be in an integer kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .arch import Architecture
from .dataset import Dataset
from .engine import layers as L
from .engine.metrics import classification_metrics
from .engine.network import check_weights
from .engine.train import predict_logits
from .errors import EmptyCalibration, NotCalibrated

SCALE_FLOOR = 1e-8


@dataclass(frozen=True)
class QuantParams:
    """Affine map ``real = scale * (code - zero_point)``; scale may be per channel."""

    scale: np.ndarray
    zero_point: np.ndarray
    bits: int = 8

    @property
    def qmin(self) -> int:
        return -(1 << (self.bits - 1))

    @property
    def qmax(self) -> int:
        return (1 << (self.bits - 1)) - 1

    def quantize(self, x: np.ndarray) -> np.ndarray:
        q = np.round(np.asarray(x) / self.scale) + self.zero_point
        return np.clip(q, self.qmin, self.qmax).astype(np.int64)

    def dequantize(self, q: np.ndarray) -> np.ndarray:
        return (np.asarray(q, dtype=np.float64) - self.zero_point) * self.scale

    def fake(self, x: np.ndarray) -> np.ndarray:
        return self.dequantize(self.quantize(x)).astype(np.asarray(x).dtype)


def params_from_range(lo, hi, bits: int = 8, symmetric: bool = False) -> QuantParams:
    """Min/max calibration; the range is widened to include 0 so it is exact."""
    lo = np.minimum(np.asarray(lo, dtype=np.float64), 0.0)
    hi = np.maximum(np.asarray(hi, dtype=np.float64), 0.0)
    qmin, qmax = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    if symmetric:
        scale = np.maximum(np.maximum(-lo, hi) / qmax, SCALE_FLOOR)
        zero = np.zeros_like(scale)
    else:
        scale = np.maximum((hi - lo) / (qmax - qmin), SCALE_FLOOR)
        zero = np.clip(qmin - np.round(lo / scale), qmin, qmax)
    return QuantParams(scale, zero, bits)


def fold_batchnorm(arch: Architecture, weights: dict, eps: float = L.BN_EPS) -> dict:
    """Conv weights with eval-mode batch norm absorbed; BN entries dropped."""
    folded = {}
    for i in range(1, arch.depth + 1):
        p = f"block{i}"
        mult = weights[f"{p}.bn.gamma"] / np.sqrt(weights[f"{p}.bn.var"] + eps)
        folded[f"{p}.conv.w"] = weights[f"{p}.conv.w"] * mult
        folded[f"{p}.conv.b"] = (weights[f"{p}.conv.b"] - weights[f"{p}.bn.mean"]) * mult \
            + weights[f"{p}.bn.beta"]
    folded["dense.w"] = weights["dense.w"]
    folded["dense.b"] = weights["dense.b"]
    return folded


def folded_forward(arch: Architecture, folded: dict, x: np.ndarray,
                   qparams: Optional[dict] = None, observe: Optional[dict] = None) -> np.ndarray:
    """Eval-mode forward over folded weights.

    ``qparams`` maps ``<layer>.in`` / ``<layer>.w`` to QuantParams and turns
    on fake quantization; ``observe`` collects each layer's input.
    """
    h = np.asarray(x, dtype=folded["dense.w"].dtype)
    if h.ndim == 2:
        h = h[:, :, None]

    def compute_inputs(name, h, w):
        if observe is not None:
            observe[name] = h
        if qparams is not None:
            h = qparams[f"{name}.in"].fake(h)
            w = qparams[f"{name}.w"].fake(w)
        return h, w

    for i, b in enumerate(arch.blocks, start=1):
        p = f"block{i}.conv"
        h, w = compute_inputs(p, h, folded[f"{p}.w"])
        h, _ = L.conv_forward(h, w, folded[f"{p}.b"], b.stride, b.padding)
        h = np.maximum(h, 0)
        if b.pool_kind == "max":
            h, _ = L.maxpool_forward(h, b.pool_size, b.pool_stride, b.pool_padding)
        elif b.pool_kind == "avg":
            h, _ = L.avgpool_forward(h, b.pool_size, b.pool_stride, b.pool_padding)
    h = h.mean(axis=1)
    h, w = compute_inputs("dense", h, folded["dense.w"])
    return h @ w + folded["dense.b"]


def _layer_names(arch: Architecture) -> list[str]:
    return [f"block{i}.conv" for i in range(1, arch.depth + 1)] + ["dense"]


@dataclass
class Calibration:
    params: dict = field(default_factory=dict)
    bits: int = 8
    per_channel: bool = False


def calibrate(arch: Architecture, weights: dict, batches: Iterable[np.ndarray],
              bits: int = 8, per_channel: bool = False) -> Calibration:
    """Weight ranges from the folded weights, activation ranges from data.

    Weights get a symmetric range (zero point 0), per tensor or per output
    channel; activations an asymmetric range from the running min/max of
    every calibration batch.
    """
    check_weights(arch, weights)
    folded = fold_batchnorm(arch, weights)
    lo: dict[str, float] = {}
    hi: dict[str, float] = {}
    n_batches = 0
    for batch in batches:
        seen: dict[str, np.ndarray] = {}
        folded_forward(arch, folded, batch, observe=seen)
        for name, a in seen.items():
            lo[name] = min(lo.get(name, np.inf), float(a.min()))
            hi[name] = max(hi.get(name, -np.inf), float(a.max()))
        n_batches += 1
    if n_batches == 0:
        raise EmptyCalibration("need at least one calibration batch")

    params = {}
    for name in _layer_names(arch):
        w = folded[f"{name}.w"]
        axes = tuple(range(w.ndim - 1))
        if per_channel:
            wlo, whi = w.min(axis=axes), w.max(axis=axes)
        else:
            wlo, whi = w.min(), w.max()
        params[f"{name}.w"] = params_from_range(wlo, whi, bits, symmetric=True)
        params[f"{name}.in"] = params_from_range(lo[name], hi[name], bits)
    return Calibration(params, bits, per_channel)


def quantized_forward(arch: Architecture, weights: dict, calib: Optional[Calibration],
                      batch: np.ndarray) -> np.ndarray:
    if calib is None or not calib.params:
        raise NotCalibrated("calibrate() the model before quantized inference")
    missing = [n for n in _layer_names(arch) if f"{n}.w" not in calib.params]
    if missing:
        raise NotCalibrated(f"no quantization parameters for {missing}")
    return folded_forward(arch, fold_batchnorm(arch, weights), batch, calib.params)


def quantized_predict(arch, weights, calib, x, batch_size: int = 256) -> np.ndarray:
    out = [quantized_forward(arch, weights, calib, x[s : s + batch_size]).argmax(axis=1)
           for s in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


@dataclass
class Comparison:
    acc_real: float
    acc_quant: float
    per_class_real: np.ndarray
    per_class_quant: np.ndarray

    @property
    def delta(self) -> float:
        return self.acc_real - self.acc_quant

    @property
    def per_class_delta(self) -> np.ndarray:
        return self.per_class_real - self.per_class_quant

    def rows(self) -> list[tuple[str, float, float, float]]:
        """(scope, real accuracy, quantized accuracy, delta): overall then per class."""
        out = [("overall", self.acc_real, self.acc_quant, self.delta)]
        for c, (r, q) in enumerate(zip(self.per_class_real, self.per_class_quant)):
            out.append((f"class_{c}", float(r), float(q), float(r - q)))
        return out


def compare_predictions(y_true, pred_real, pred_quant, n_classes: int) -> Comparison:
    real = classification_metrics(y_true, pred_real, n_classes)
    quant = classification_metrics(y_true, pred_quant, n_classes)
    # per-class accuracy is recall: fraction of that class classified correctly
    return Comparison(real.accuracy, quant.accuracy, real.recall, quant.recall)


def compare(arch: Architecture, weights: dict, calib: Calibration, ds: Dataset) -> Comparison:
    dtype = weights["dense.w"].dtype
    x = ds.scaled(dtype)
    pred_real = predict_logits(arch, weights, x).argmax(axis=1)
    pred_quant = quantized_predict(arch, weights, calib, x)
    return compare_predictions(ds.y, pred_real, pred_quant, arch.n_classes)
