"""Versioned binary checkpoints.

Layout (all little-endian):
    magic   4 bytes  b"QRNN"
    version u32      currently 1
    config  u32 length + UTF-8 bytes (resolved config echo)
    records until EOF, each:
        name   u32 length + UTF-8 bytes
        dtype  u8   0=float32 1=float64 2=int32 3=uint8
        rank   u8
        dims   rank x u32
        data   raw row-major little-endian values

Record order is preserved on load, so save(load(x)) == x byte for byte.
"""

import struct

import numpy as np

from .errors import CheckpointError

MAGIC = b"QRNN"
VERSION = 1

_TAG_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8"),
                 2: np.dtype("<i4"), 3: np.dtype("<u1")}
_KIND_TO_TAG = {"f4": 0, "f8": 1, "i4": 2, "u1": 3}


def _tag_for(arr):
    key = f"{arr.dtype.kind}{arr.dtype.itemsize}"
    if key not in _KIND_TO_TAG:
        raise CheckpointError(f"unsupported dtype {arr.dtype} in checkpoint")
    return _KIND_TO_TAG[key]


def save_checkpoint(path, config_text, tensors):
    """Write config echo plus named tensors (dict order is the file order)."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        blob = config_text.encode("utf-8")
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr)
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<BB", _tag_for(arr), arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            fh.write(le.tobytes(order="C"))


def load_checkpoint(path):
    """Returns (config_text, ordered dict of name -> array)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointError(f"{path}: truncated at byte {pos}")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (clen,) = struct.unpack("<I", take(4))
    config_text = take(clen).decode("utf-8")
    tensors = {}
    while pos < len(raw):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        tag, rank = struct.unpack("<BB", take(2))
        if tag not in _TAG_TO_DTYPE:
            raise CheckpointError(f"{path}: unknown dtype tag {tag}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        dtype = _TAG_TO_DTYPE[tag]
        count = 1
        for d in dims:
            count *= d
        data = take(count * dtype.itemsize)
        tensors[name] = np.frombuffer(data, dtype=dtype).reshape(dims).copy()
    return config_text, tensors
