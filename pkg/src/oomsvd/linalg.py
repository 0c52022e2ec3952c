"""Dense and CSR kernels.

Dense operands are plain float64 numpy arrays (2-D for matrices, 1-D for
vectors).  Sparse operands use :class:`CsrMatrix`.  Every kernel is a pure
function of its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, ShapeError

__all__ = [
    "CsrMatrix",
    "SvdFactors",
    "as_dense",
    "as_vector",
    "frobenius_error",
    "matmul",
    "matvec",
    "matvec_transposed",
    "norm2",
    "normalize",
    "shape_of",
]


def as_dense(a) -> np.ndarray:
    """Validate and coerce a dense matrix to a row-major float64 array."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    return a


def as_vector(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"expected a 1-D vector, got shape {v.shape}")
    return v


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    """Compressed sparse row matrix with sorted, duplicate-free rows."""

    rows: int
    cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray
    _row_ids: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        row_ptr = np.ascontiguousarray(self.row_ptr, dtype=np.int64)
        col_idx = np.ascontiguousarray(self.col_idx, dtype=np.int64)
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        rows, cols = int(self.rows), int(self.cols)
        if rows < 1 or cols < 1:
            raise ShapeError(f"CSR shape must be positive, got ({rows}, {cols})")
        if row_ptr.shape != (rows + 1,):
            raise ShapeError("row_ptr must have length rows + 1")
        nnz = values.shape[0]
        if col_idx.shape != (nnz,) or values.ndim != 1:
            raise ShapeError("col_idx and values must be 1-D with equal length")
        if row_ptr[0] != 0 or row_ptr[-1] != nnz:
            raise ShapeError("row_ptr must start at 0 and end at nnz")
        if np.any(np.diff(row_ptr) < 0):
            raise ShapeError("row_ptr must be non-decreasing")
        if nnz:
            if col_idx.min() < 0 or col_idx.max() >= cols:
                raise ShapeError("column index out of range")
            row_ids = np.repeat(np.arange(rows, dtype=np.int64), np.diff(row_ptr))
            same_row = row_ids[1:] == row_ids[:-1]
            if np.any(col_idx[1:][same_row] <= col_idx[:-1][same_row]):
                raise ShapeError(
                    "column indices must be strictly increasing within a row "
                    "(duplicates are rejected)"
                )
        else:
            row_ids = np.zeros(0, dtype=np.int64)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "row_ptr", row_ptr)
        object.__setattr__(self, "col_idx", col_idx)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_row_ids", row_ids)

    @classmethod
    def from_coo(cls, rows, cols, row, col, values) -> "CsrMatrix":
        row = np.asarray(row, dtype=np.int64)
        col = np.asarray(col, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if not (row.shape == col.shape == values.shape):
            raise ShapeError("coordinate arrays must have equal length")
        if row.size and (row.min() < 0 or row.max() >= rows):
            raise ShapeError("row index out of range")
        order = np.lexsort((col, row))
        row, col, values = row[order], col[order], values[order]
        row_ptr = np.zeros(rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(row, minlength=rows), out=row_ptr[1:])
        return cls(rows, cols, row_ptr, col, values)

    @classmethod
    def from_dense(cls, a) -> "CsrMatrix":
        a = as_dense(a)
        row, col = np.nonzero(a)
        return cls.from_coo(a.shape[0], a.shape[1], row, col, a[row, col])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def nnz(self) -> int:
        return int(self.values.shape[0])

    @property
    def nbytes(self) -> int:
        return int(self.values.nbytes + self.col_idx.nbytes + self.row_ptr.nbytes)

    @property
    def row_ids(self) -> np.ndarray:
        """Row index of every stored entry."""
        return self._row_ids

    def copy(self) -> "CsrMatrix":
        return CsrMatrix(
            self.rows, self.cols, self.row_ptr.copy(), self.col_idx.copy(), self.values.copy()
        )

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols))
        out[self._row_ids, self.col_idx] = self.values
        return out

    def transpose(self) -> "CsrMatrix":
        return CsrMatrix.from_coo(self.cols, self.rows, self.col_idx, self._row_ids, self.values)

    @property
    def T(self) -> "CsrMatrix":
        return self.transpose()

    def row_block(self, start: int, stop: int) -> "CsrMatrix":
        lo, hi = self.row_ptr[start], self.row_ptr[stop]
        return CsrMatrix(
            stop - start,
            self.cols,
            self.row_ptr[start : stop + 1] - lo,
            self.col_idx[lo:hi],
            self.values[lo:hi],
        )

    def col_block(self, start: int, stop: int) -> "CsrMatrix":
        keep = (self.col_idx >= start) & (self.col_idx < stop)
        counts = np.bincount(self._row_ids[keep], minlength=self.rows)
        row_ptr = np.zeros(self.rows + 1, dtype=np.int64)
        np.cumsum(counts, out=row_ptr[1:])
        return CsrMatrix(
            self.rows, stop - start, row_ptr, self.col_idx[keep] - start, self.values[keep]
        )

    def frobenius_norm(self) -> float:
        return float(np.sqrt(np.dot(self.values, self.values)))


def shape_of(m) -> tuple[int, int]:
    if isinstance(m, CsrMatrix):
        return m.shape
    return tuple(np.shape(m))


def matvec(m, v) -> np.ndarray:
    """``m @ v`` for a dense or CSR matrix."""
    v = as_vector(v)
    rows, cols = shape_of(m)
    if v.shape[0] != cols:
        raise ShapeError(f"matvec: matrix has {cols} columns, vector has {v.shape[0]}")
    if isinstance(m, CsrMatrix):
        return np.bincount(m.row_ids, weights=m.values * v[m.col_idx], minlength=rows)
    return m @ v


def matvec_transposed(m, v) -> np.ndarray:
    """``m.T @ v`` without forming the transpose."""
    v = as_vector(v)
    rows, cols = shape_of(m)
    if v.shape[0] != rows:
        raise ShapeError(f"matvec_transposed: matrix has {rows} rows, vector has {v.shape[0]}")
    if isinstance(m, CsrMatrix):
        return np.bincount(m.col_idx, weights=m.values * v[m.row_ids], minlength=cols)
    return v @ m


def matmul(a, b) -> np.ndarray:
    a = as_dense(a)
    b = as_dense(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    return a @ b


def norm2(v) -> float:
    v = as_vector(v)
    sq = float(np.dot(v, v))
    if 1e-280 < sq < 1e280:
        return math.sqrt(sq)
    # rescale to dodge underflow and overflow of the squares
    scale = float(np.max(np.abs(v)))
    if scale == 0.0 or not math.isfinite(scale):
        return scale
    w = v / scale
    return scale * math.sqrt(float(np.dot(w, w)))


def normalize(v) -> np.ndarray:
    v = as_vector(v)
    nrm = norm2(v)
    if nrm == 0.0:
        raise DegenerateInputError("cannot normalize a zero vector")
    return v / nrm


@dataclass
class SvdFactors:
    """Truncated factors ``A ~ U diag(sigma) V^T`` of rank ``k``."""

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64).reshape(-1)
        self.V = np.asarray(self.V, dtype=np.float64)
        k = self.sigma.shape[0]
        if self.U.ndim != 2 or self.V.ndim != 2 or self.U.shape[1] != k or self.V.shape[1] != k:
            raise ShapeError(
                f"inconsistent factor shapes U{self.U.shape} sigma({k}) V{self.V.shape}"
            )
        if np.any(self.sigma < 0):
            raise ShapeError("singular values must be non-negative")

    @property
    def k(self) -> int:
        return int(self.sigma.shape[0])

    @classmethod
    def empty(cls, m: int, n: int) -> "SvdFactors":
        return cls(np.zeros((m, 0)), np.zeros(0), np.zeros((n, 0)))

    def truncate(self, k: int) -> "SvdFactors":
        return SvdFactors(self.U[:, :k], self.sigma[:k], self.V[:, :k])


def frobenius_error(a, factors: SvdFactors, block_rows: int | None = None) -> float:
    """``||A - U diag(sigma) V^T||_F`` evaluated one row block at a time."""
    m, n = shape_of(a)
    if factors.U.shape[0] != m or factors.V.shape[0] != n:
        raise ShapeError("factors do not match the matrix shape")
    if block_rows is None:
        block_rows = max(1, (1 << 20) // n)
    us = factors.U * factors.sigma
    total = 0.0
    for r0 in range(0, m, block_rows):
        r1 = min(m, r0 + block_rows)
        if isinstance(a, CsrMatrix):
            block = a.row_block(r0, r1).to_dense()
        else:
            block = np.array(a[r0:r1], dtype=np.float64)
        if factors.k:
            block -= us[r0:r1] @ factors.V.T
        total += float(np.sum(block * block))
    return float(np.sqrt(total))
