"""Binary parameter checkpoints.

Layout, all little-endian:

    magic      8 bytes   b"LCTCKPT1"
    count      u32       number of parameters
    per parameter:
      name_len u16, name utf-8
      dtype    u8        0 = float64, 1 = float32
      ndim     u8, extents u32 * ndim
      values   raw IEEE-754, row-major

Loading returns name -> array; applying to a model requires the exact same
parameter names and shapes, so a checkpoint can only be restored into a model
built from the same configuration.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .exceptions import DataError

_MAGIC = b"LCTCKPT1"
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_DTYPE_CODES = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}


def save_checkpoint(params, path) -> None:
    chunks = [_MAGIC, struct.pack("<I", len(params))]
    for p in params:
        name = p.name.encode("utf-8")
        # not ascontiguousarray: that would promote 0-d arrays to 1-d
        arr = np.asarray(p.tensor.data)
        code = _DTYPE_CODES[arr.dtype]
        chunks.append(struct.pack("<H", len(name)))
        chunks.append(name)
        chunks.append(struct.pack("<BB", code, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype(arr.dtype.newbyteorder("<")).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < len(_MAGIC) + 4 or raw[:len(_MAGIC)] != _MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    pos = len(_MAGIC)

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise DataError(f"{path}: truncated checkpoint")
        piece = raw[pos:pos + n]
        pos += n
        return piece

    (count,) = struct.unpack("<I", take(4))
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        code, ndim = struct.unpack("<BB", take(2))
        if code not in _DTYPES:
            raise DataError(f"{path}: unknown dtype code {code}")
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        dtype = _DTYPES[code]
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
        arr = np.frombuffer(take(n_bytes), dtype=dtype).reshape(shape)
        if name in out:
            raise DataError(f"{path}: duplicate parameter name '{name}'")
        out[name] = arr.astype(dtype.newbyteorder("="))
    if pos != len(raw):
        raise DataError(f"{path}: {len(raw) - pos} trailing bytes after checkpoint payload")
    return out


def apply_checkpoint(params, arrays: dict[str, np.ndarray]) -> None:
    """Copy loaded arrays into parameters, matching on name and shape."""
    names = [p.name for p in params]
    missing = [n for n in names if n not in arrays]
    extra = [n for n in arrays if n not in set(names)]
    if missing or extra:
        raise DataError(f"checkpoint does not match model: missing={missing} unexpected={extra}")
    for p in params:
        arr = arrays[p.name]
        if arr.shape != p.tensor.data.shape:
            raise DataError(f"checkpoint shape {arr.shape} does not match "
                            f"parameter '{p.name}' shape {p.tensor.data.shape}")
        p.tensor.data[...] = arr.astype(p.tensor.data.dtype)
