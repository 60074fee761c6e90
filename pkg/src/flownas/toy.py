"""Synthetic class-separable session vectors for runs without a pcap corpus.

Each class owns a fixed 20-byte header template and a payload-length range.
A session is a run of packets, each one the class header with a few bytes
corrupted followed by uniformly random payload, concatenated then
truncated or zero-padded to the requested length.
"""

from __future__ import annotations

import numpy as np

from .dataset import Dataset

HEADER_LEN = 20


def toy_dataset(n: int, length: int = 784, n_classes: int = 4, seed: int = 0,
                noise: float = 0.1) -> Dataset:
    rng = np.random.default_rng(seed)
    templates = rng.integers(0, 256, (n_classes, HEADER_LEN), dtype=np.uint8)
    low = rng.integers(16, 96, n_classes)
    high = low + rng.integers(32, 160, n_classes)

    x = np.zeros((n, length), dtype=np.uint8)
    y = np.arange(n) % n_classes
    rng.shuffle(y)
    for i, label in enumerate(y):
        pos = 0
        # fewer packets -> padded tail, like short sessions
        stop = rng.integers(length // 3, length + 1)
        while pos < stop:
            header = templates[label].copy()
            flip = rng.random(HEADER_LEN) < noise
            header[flip] = rng.integers(0, 256, int(flip.sum()), dtype=np.uint8)
            payload = rng.integers(0, 256, int(rng.integers(low[label], high[label] + 1)),
                                   dtype=np.uint8)
            packet = np.concatenate([header, payload])[: length - pos]
            x[i, pos : pos + len(packet)] = packet
            pos += len(packet)
    return Dataset(x, y, n_classes)
