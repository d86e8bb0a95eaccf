"""Binary weight files with bit-exact round trips.

Layout: 8-byte magic "MEVTW001", then one record per array:
    u32 name length, UTF-8 name, u32 rank, u32 dims[rank], float32 data.
All integers little-endian, data IEEE-754 binary32. Every array of the
model (learned parameters and batch-norm running statistics) appears
exactly once, keyed by its dotted path.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .model import ModelParams, named_arrays

MAGIC = b"MEVTW001"


class WeightFileError(Exception):
    """Weight-file failure with a machine-readable `code`."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _read_exact(f: BinaryIO, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise WeightFileError("truncated", "unexpected end of file")
    return data


def write_weight_file(path, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        for name, arr in arrays.items():
            if arr.dtype != np.float32:
                raise WeightFileError("dtype", f"{name}: weight files store float32 only")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr).tobytes())


def read_weight_file(path) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise WeightFileError("bad_magic", "magic/version mismatch")
        while True:
            head = f.read(4)
            if len(head) == 0:
                break
            if len(head) != 4:
                raise WeightFileError("truncated", "unexpected end of file")
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(f, name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(f, 4))
            dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank)) if rank else ()
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            data = _read_exact(f, 4 * count)
            if name in arrays:
                raise WeightFileError("duplicate", f"duplicate parameter {name!r}")
            arrays[name] = np.frombuffer(data, dtype="<f4").reshape(dims).copy()
    return arrays


def save_weights(path, model: ModelParams) -> None:
    """Serialize every model array (parameters and buffers) to `path`."""
    write_weight_file(path, {name: arr for name, arr, _ in named_arrays(model)})


def load_weights(path, model: ModelParams) -> None:
    """Load arrays into an existing model, validating names and shapes.

    The file must contain exactly the model's arrays; loads are bit-exact.
    """
    arrays = read_weight_file(path)
    seen = set()
    for name, arr, _ in named_arrays(model):
        if name not in arrays:
            raise WeightFileError("missing_parameter", f"missing parameter {name!r}")
        new = arrays[name]
        if new.shape != arr.shape:
            raise WeightFileError(
                "shape_mismatch",
                f"{name}: expected {arr.shape}, file has {new.shape}")
        arr[...] = new
        seen.add(name)
    extra = set(arrays) - seen
    if extra:
        raise WeightFileError("unexpected_parameter",
                              f"unexpected parameter {sorted(extra)[0]!r}")
