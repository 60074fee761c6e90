"""SESS dataset files: labelled, unscaled session byte vectors.

Layout (little-endian)::

    "SESS" | version u16 = 1 | n_classes u16 | input_len u32 | n_samples u64
    then n_samples times: label u16 | input_len raw bytes
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BadMagic, LabelOutOfRange, LengthMismatch

MAGIC = b"SESS"
VERSION = 1
_HEADER = struct.Struct("<4sHHIQ")
HEADER_LEN = _HEADER.size  # 20


@dataclass
class Dataset:
    x: np.ndarray  # uint8 (n, input_len)
    y: np.ndarray  # int64 (n,)
    n_classes: int

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.uint8)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.x.shape[0] != self.y.shape[0]:
            raise LengthMismatch(f"x {self.x.shape} and y {self.y.shape} disagree")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise LabelOutOfRange(f"labels must lie in [0, {self.n_classes})")

    def __len__(self) -> int:
        return int(self.x.shape[0])

    @property
    def input_len(self) -> int:
        return int(self.x.shape[1])

    def scaled(self, dtype=np.float64) -> np.ndarray:
        """Inputs in [0, 1] with shape (n, input_len, 1)."""
        return (self.x.astype(dtype) / np.dtype(dtype).type(255.0))[:, :, None]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], self.n_classes)

    @classmethod
    def from_vectors(cls, vectors: Sequence, n_classes: int) -> "Dataset":
        if not vectors:
            return cls(np.zeros((0, 0), np.uint8), np.zeros(0, np.int64), n_classes)
        lengths = {v.length for v in vectors}
        if len(lengths) != 1:
            raise LengthMismatch(f"vectors have mixed lengths {sorted(lengths)}")
        return cls(np.stack([v.data for v in vectors]), [v.label for v in vectors], n_classes)


def holdout_split(ds: Dataset, fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Random (train, holdout) split with ``fraction`` of samples held out."""
    order = np.random.default_rng(seed).permutation(len(ds))
    n_hold = int(round(len(ds) * fraction))
    return ds.subset(np.sort(order[n_hold:])), ds.subset(np.sort(order[:n_hold]))


def write_dataset(ds: Dataset, path) -> None:
    if ds.n_classes > 0xFFFF:
        raise LabelOutOfRange("n_classes does not fit in u16")
    records = np.empty(len(ds), dtype=[("label", "<u2"), ("data", "u1", (ds.input_len,))])
    records["label"] = ds.y
    records["data"] = ds.x
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, ds.n_classes, ds.input_len, len(ds)))
        fh.write(records.tobytes())


def read_dataset(path) -> Dataset:
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        head = fh.read(HEADER_LEN)
        if len(head) < 4 or head[:4] != MAGIC:
            raise BadMagic(f"{path}: not a SESS dataset")
        if len(head) < HEADER_LEN:
            raise LengthMismatch(f"{path}: header truncated")
        _, version, n_classes, input_len, n = _HEADER.unpack(head)
        if version != VERSION:
            raise BadMagic(f"{path}: unsupported SESS version {version}")
        expected = HEADER_LEN + n * (2 + input_len)
        if size != expected:
            raise LengthMismatch(f"{path}: {size} bytes on disk, header implies {expected}")
        dtype = np.dtype([("label", "<u2"), ("data", "u1", (input_len,))])
        records = np.frombuffer(fh.read(), dtype=dtype, count=n)
    labels = records["label"].astype(np.int64)
    if n and labels.max() >= n_classes:
        bad = int(np.argmax(labels >= n_classes))
        raise LabelOutOfRange(f"{path}: sample {bad} has label {labels[bad]} >= n_classes {n_classes}")
    return Dataset(records["data"].reshape(n, input_len), labels, n_classes)
