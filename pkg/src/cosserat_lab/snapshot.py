"""Binary field snapshots.

Layout (little-endian)::

    offset  size  content
    0       4     magic b"CSRF"
    4       2     version (u16, currently 1)
    6       2     kind (u16): 0 scalar, 1 vector, 2 matrix, 3 rotation
    8       12    dims n1, n2, n3 (3 x u32)
    20      8     spacing h (f64)
    28      4     reserved, zero
    32      ...   payload: f64 values in C (row-major) order of the
                  array ``(n1, n2, n3, *k)``

The grid origin is not stored; snapshots are read back on a grid with
origin zero unless the caller supplies one.
"""
import struct

import numpy as np

from .errors import DataError
from .fields import Grid
from .geometry import check_rotation

MAGIC = b"CSRF"
VERSION = 1
HEADER = struct.Struct("<4sHH3Id4x")
KINDS = {"scalar": 0, "vector": 1, "matrix": 2, "rotation": 3}
_KIND_NAMES = {v: k for k, v in KINDS.items()}
_TRAILING = {"scalar": (), "vector": (3,), "matrix": (3, 3), "rotation": (3, 3)}

assert HEADER.size == 32


def encode(values, grid, kind):
    if kind not in KINDS:
        raise ValueError(f"unknown field kind {kind!r}")
    values = np.asarray(values, dtype="<f8")
    expected = tuple(grid.dims) + _TRAILING[kind]
    if values.shape != expected:
        raise ValueError(f"{kind} field on {grid.dims} needs shape {expected}, got {values.shape}")
    header = HEADER.pack(MAGIC, VERSION, KINDS[kind], *grid.dims, grid.h)
    return header + np.ascontiguousarray(values).tobytes(order="C")


def decode(data, origin=(0.0, 0.0, 0.0)):
    """Parse snapshot bytes into ``(values, grid, kind)``."""
    if len(data) < HEADER.size:
        raise DataError("snapshot shorter than its 32-byte header")
    magic, version, kind_code, n1, n2, n3, h = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise DataError(f"bad snapshot magic {magic!r}")
    if version != VERSION:
        raise DataError(f"unsupported snapshot version {version}")
    if kind_code not in _KIND_NAMES:
        raise DataError(f"unknown snapshot kind code {kind_code}")
    kind = _KIND_NAMES[kind_code]
    grid = Grid((n1, n2, n3), h, origin)
    shape = (n1, n2, n3) + _TRAILING[kind]
    count = int(np.prod(shape))
    payload = data[HEADER.size:]
    if len(payload) != 8 * count:
        raise DataError(f"snapshot payload has {len(payload)} bytes, expected {8 * count}")
    values = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(float)
    if not np.all(np.isfinite(values)):
        raise DataError("snapshot contains non-finite values")
    if kind == "rotation":
        check_rotation(values, what="rotation snapshot")
    return values, grid, kind


def write(path, values, grid, kind):
    with open(path, "wb") as fh:
        fh.write(encode(values, grid, kind))


def read(path, origin=(0.0, 0.0, 0.0)):
    with open(path, "rb") as fh:
        return decode(fh.read(), origin)
