"""Matrix files and synthetic inputs.

Dense matrices use a small raw format: an 8-byte magic, rows and cols as
little-endian uint32, then row-major little-endian float64.  Sparse matrices
use Matrix Market coordinate files (real, general).
"""

from __future__ import annotations

import os
import struct

import numpy as np
import scipy.io
import scipy.sparse

from .errors import ConfigError, ShapeError
from .linalg import CsrMatrix, SvdFactors, as_dense

DENSE_MAGIC = b"OOMSVD\x00\x01"
_HEADER = struct.Struct("<8sII")
_MM_BANNER = b"%%MatrixMarket"
_INDEX_LIMIT = np.iinfo(np.int64).max


def write_dense(path, a) -> None:
    a = as_dense(a)
    rows, cols = a.shape
    if rows > 0xFFFFFFFF or cols > 0xFFFFFFFF:
        raise ConfigError("dense file dimensions must fit in uint32")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DENSE_MAGIC, rows, cols))
        fh.write(a.astype("<f8", copy=False).tobytes())


def read_dense(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ShapeError(f"{path}: truncated header")
        magic, rows, cols = _HEADER.unpack(head)
        if magic != DENSE_MAGIC:
            raise ConfigError(f"{path}: not a dense matrix file")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != rows * cols:
        raise ShapeError(f"{path}: expected {rows * cols} values, found {data.size}")
    return data.astype(np.float64).reshape(rows, cols)


def write_mm(path, a: CsrMatrix) -> None:
    sp = scipy.sparse.csr_matrix((a.values, a.col_idx, a.row_ptr), shape=a.shape)
    scipy.io.mmwrite(path, sp.tocoo(), field="real", symmetry="general")


def read_mm(path) -> CsrMatrix:
    m = scipy.io.mmread(path)
    if not scipy.sparse.issparse(m):
        m = scipy.sparse.coo_matrix(np.asarray(m, dtype=np.float64))
    csr = scipy.sparse.csr_matrix(m, dtype=np.float64)
    csr.sum_duplicates()
    csr.sort_indices()
    rows, cols = csr.shape
    return CsrMatrix(
        rows,
        cols,
        csr.indptr.astype(np.int64),
        csr.indices.astype(np.int64),
        csr.data.astype(np.float64),
    )


def read_matrix(path):
    """Dense array or :class:`CsrMatrix`, depending on the file's leading bytes."""
    with open(path, "rb") as fh:
        head = fh.read(len(_MM_BANNER))
    if head == _MM_BANNER:
        return read_mm(path)
    return read_dense(path)


def write_matrix(path, a) -> None:
    if isinstance(a, CsrMatrix):
        write_mm(path, a)
    else:
        write_dense(path, a)


def generate(rows: int, cols: int, kind: str = "dense", density: float = 1.0, seed: int = 0):
    """Seeded random matrix.

    Dense entries are standard normal.  Sparse inputs get exactly
    ``round(density * rows * cols)`` positions drawn without replacement,
    with values uniform on [-1, 1).
    """
    if rows < 1 or cols < 1:
        raise ConfigError("rows and cols must be positive")
    rng = np.random.default_rng(seed)
    if kind == "dense":
        return rng.standard_normal((rows, cols))
    if kind != "sparse":
        raise ConfigError(f"unknown matrix kind {kind!r}")
    if not 0 < density <= 1:
        raise ConfigError(f"density must lie in (0, 1], got {density}")
    total = rows * cols
    if total > _INDEX_LIMIT:
        raise ConfigError("matrix too large for 64-bit indices")
    nnz = round(density * total)
    flat = np.sort(rng.choice(total, size=nnz, replace=False))
    values = rng.uniform(-1.0, 1.0, size=nnz)
    return CsrMatrix.from_coo(rows, cols, flat // cols, flat % cols, values)


def write_factors(out_dir, factors: SvdFactors) -> dict:
    """Write ``U.bin``, ``V.bin`` and ``sigma.txt``; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "U": os.path.join(out_dir, "U.bin"),
        "V": os.path.join(out_dir, "V.bin"),
        "sigma": os.path.join(out_dir, "sigma.txt"),
    }
    _write_factor(paths["U"], factors.U)
    _write_factor(paths["V"], factors.V)
    with open(paths["sigma"], "w") as fh:
        fh.writelines(f"{s!r}\n" for s in factors.sigma.tolist())
    return paths


def _write_factor(path, a) -> None:
    # zero-rank factors still get a header so they round-trip
    a = np.asarray(a, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DENSE_MAGIC, a.shape[0], a.shape[1]))
        fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_sigma(path) -> np.ndarray:
    with open(path) as fh:
        return np.array([float(line) for line in fh if line.strip()])


def read_factors(out_dir) -> SvdFactors:
    return SvdFactors(
        _read_factor(os.path.join(out_dir, "U.bin")),
        read_sigma(os.path.join(out_dir, "sigma.txt")),
        _read_factor(os.path.join(out_dir, "V.bin")),
    )


def _read_factor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, rows, cols = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != DENSE_MAGIC:
            raise ConfigError(f"{path}: not a factor file")
        data = np.frombuffer(fh.read(), dtype="<f8")
    return data.astype(np.float64).reshape(rows, cols)
