"""Matrix and artifact serialisation.

Binary matrix layout: 8-byte magic ``SKLMAT01``, rows and cols as
little-endian uint64, then rows*cols little-endian float64 in row-major
order. CSV uses one matrix row per line with 17 significant digits, which
round-trips float64 exactly.
"""
import json
import struct
from pathlib import Path

import numpy as np

from .linalg import as_matrix

MAGIC = b"SKLMAT01"
_HEADER = struct.Struct("<8sQQ")


def write_matrix_bin(path, A):
    A = as_matrix(A)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, A.shape[0], A.shape[1]))
        f.write(np.ascontiguousarray(A, dtype="<f8").tobytes())


def read_matrix_bin(path):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, rows, cols = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    body = data[_HEADER.size:]
    if len(body) != rows * cols * 8:
        raise ValueError(f"{path}: expected {rows * cols} values, found {len(body) // 8}")
    return np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(np.float64)


def write_matrix_csv(path, A):
    A = as_matrix(A)
    np.savetxt(path, A, delimiter=",", fmt="%.17g")


def read_matrix_csv(path):
    return as_matrix(np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64))


def write_matrix(path, A):
    if str(path).endswith(".csv"):
        write_matrix_csv(path, A)
    else:
        write_matrix_bin(path, A)


def read_matrix(path):
    if str(path).endswith(".csv"):
        return read_matrix_csv(path)
    return read_matrix_bin(path)


def save_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2) + "\n")


def load_json(path):
    return json.loads(Path(path).read_text())
