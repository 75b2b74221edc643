"""Dense float64 numerics and the binary matrix format.

A "matrix" throughout the package is a 2-D C-contiguous float64 ndarray; the
helpers here validate shapes and keep the numerically delicate pieces
(log-sum-exp, row normalization, cosine tables) in one place. Heavy lifting is
numpy's; the contracts (error types, clamping, zero-row guards) are ours.

Binary matrix block, also embedded in dataset and checkpoint files:

    magic  b"DBMX"
    u32    version (= 1)
    u64    rows
    u64    cols
    f64    rows*cols values, row-major, little-endian
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .errors import (
    DimMismatchError,
    EmptyInputError,
    FormatError,
    VersionMismatchError,
    ZeroRowError,
)
from .rng import Rng

MATRIX_MAGIC = b"DBMX"
MATRIX_VERSION = 1

_ZERO_NORM = 1e-300


def as_matrix(a) -> np.ndarray:
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise DimMismatchError(f"expected a 2-D matrix, got ndim={m.ndim}")
    return m


def matmul(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimMismatchError(f"matmul {a.shape} @ {b.shape}")
    return a @ b


def transpose(a) -> np.ndarray:
    return np.ascontiguousarray(as_matrix(a).T)


def add(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape != b.shape:
        raise DimMismatchError(f"add {a.shape} + {b.shape}")
    return a + b


def scale(a, alpha: float) -> np.ndarray:
    return as_matrix(a) * float(alpha)


def apply_elementwise(a, fn) -> np.ndarray:
    a = as_matrix(a)
    out = np.empty_like(a)
    flat_in, flat_out = a.ravel(), out.ravel()
    for i in range(flat_in.size):
        flat_out[i] = fn(flat_in[i])
    return out


def argmax(v) -> int:
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise EmptyInputError("argmax of empty input")
    return int(np.argmax(v))


def mean(v) -> float:
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise EmptyInputError("mean of empty input")
    return float(np.mean(v))


def variance(v) -> float:
    """Population variance (divides by N)."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise EmptyInputError("variance of empty input")
    return float(np.var(v))


def row_norms(m) -> np.ndarray:
    return np.sqrt(np.sum(as_matrix(m) ** 2, axis=1))


def l2_normalize_rows(m) -> np.ndarray:
    """Rows scaled to unit L2 norm. A row with norm < 1e-300 raises ZeroRowError."""
    m = as_matrix(m)
    norms = row_norms(m)
    if np.any(norms < _ZERO_NORM):
        bad = int(np.argmin(norms))
        raise ZeroRowError(f"row {bad} has zero norm")
    return m / norms[:, None]


def cosine_matrix(a, b) -> np.ndarray:
    """Pairwise cosine similarities between rows of a and rows of b.

    Values are clamped to [-1, 1] so downstream margin arithmetic never sees
    rounding excursions past the valid range.
    """
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[1]:
        raise DimMismatchError(f"cosine_matrix {a.shape} vs {b.shape}")
    an = l2_normalize_rows(a)
    bn = l2_normalize_rows(b)
    return np.clip(an @ bn.T, -1.0, 1.0)


def log_sum_exp(values) -> float:
    """log(sum(exp(v))) with the max-shift trick; exact for one element."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise EmptyInputError("log_sum_exp of empty input")
    m = float(np.max(v))
    return m + float(np.log(np.sum(np.exp(v - m))))


def seeded_gaussian(rng: Rng, rows: int, cols: int) -> np.ndarray:
    if rows <= 0 or cols <= 0:
        raise EmptyInputError(f"seeded_gaussian({rows}, {cols})")
    return rng.gaussian_matrix(rows, cols)


def write_matrix_to(fh: BinaryIO, m) -> None:
    m = as_matrix(m)
    fh.write(MATRIX_MAGIC)
    fh.write(struct.pack("<IQQ", MATRIX_VERSION, m.shape[0], m.shape[1]))
    fh.write(m.astype("<f8", copy=False).tobytes())


def read_matrix_from(fh: BinaryIO) -> np.ndarray:
    magic = fh.read(4)
    if len(magic) < 4:
        raise OSError("truncated matrix block")
    if magic != MATRIX_MAGIC:
        raise FormatError(f"bad matrix magic {magic!r}")
    head = fh.read(20)
    if len(head) < 20:
        raise OSError("truncated matrix header")
    version, rows, cols = struct.unpack("<IQQ", head)
    if version != MATRIX_VERSION:
        raise VersionMismatchError(f"matrix version {version}")
    nbytes = rows * cols * 8
    payload = fh.read(nbytes)
    if len(payload) < nbytes:
        raise OSError("truncated matrix payload")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).copy()


def write_matrix(path, m) -> None:
    with open(path, "wb") as fh:
        write_matrix_to(fh, m)


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_matrix_from(fh)
