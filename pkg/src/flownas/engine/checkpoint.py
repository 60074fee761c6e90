"""WGTS weight files.

Layout (little-endian): ``"WGTS" | version u16`` followed, until end of
file, by tensors ``name_len u16 | name | rank u8 | dims u32 * rank |
float32 data``.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import FormatError

MAGIC = b"WGTS"
VERSION = 1


def write_weights(weights: dict, path) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<H", VERSION))
        for name, arr in weights.items():
            raw = name.encode("utf-8")
            arr = np.asarray(arr)
            fh.write(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_weights(path, dtype=np.float32) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: not a WGTS weight file")
    if len(blob) < 6:
        raise FormatError(f"{path}: truncated header")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported WGTS version {version}")
    pos = 6
    out = {}
    try:
        while pos < len(blob):
            (n,) = struct.unpack_from("<H", blob, pos)
            name = blob[pos + 2 : pos + 2 + n].decode("utf-8")
            pos += 2 + n
            (rank,) = struct.unpack_from("<B", blob, pos)
            dims = struct.unpack_from(f"<{rank}I", blob, pos + 1)
            pos += 1 + 4 * rank
            count = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * count > len(blob):
                raise FormatError(f"{path}: tensor {name!r} truncated")
            out[name] = np.frombuffer(blob, "<f4", count, pos).reshape(dims).astype(dtype)
            pos += 4 * count
    except (struct.error, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: corrupt tensor record at byte {pos}") from exc
    return out
