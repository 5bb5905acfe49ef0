"""Dense/sparse linear-algebra primitives shared by every other module."""

from dataclasses import dataclass, field

import numpy as np

from . import backend

EPS = 1e-12


class ShapeError(ValueError):
    pass


@dataclass
class CSRMatrix:
    """Compressed sparse row matrix.

    Invariants: `indptr` is non-decreasing with `indptr[-1] == nnz`, column
    indices are strictly increasing within each row, and all values are finite.
    """

    rows: int
    cols: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        self.indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        else:
            self.data = np.ascontiguousarray(self.data)

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])

    @classmethod
    def from_dense(cls, dense, symmetric=False, tol=0.0):
        dense = np.asarray(dense)
        rows, cols = dense.shape
        indptr = np.zeros(rows + 1, dtype=np.int64)
        idx_chunks = []
        val_chunks = []
        for i in range(rows):
            (nz,) = np.nonzero(np.abs(dense[i]) > tol)
            indptr[i + 1] = indptr[i] + nz.shape[0]
            idx_chunks.append(nz.astype(np.int64))
            val_chunks.append(dense[i, nz])
        indices = np.concatenate(idx_chunks) if idx_chunks else np.zeros(0, np.int64)
        data = np.concatenate(val_chunks) if val_chunks else np.zeros(0, dense.dtype)
        return cls(rows, cols, indptr, indices, data, symmetric=symmetric)

    @classmethod
    def zeros(cls, rows, cols, dtype=np.float64):
        return cls(rows, cols, np.zeros(rows + 1, np.int64), np.zeros(0, np.int64), np.zeros(0, dtype))

    @classmethod
    def identity(cls, n, dtype=np.float64):
        return cls(
            n, n,
            np.arange(n + 1, dtype=np.int64),
            np.arange(n, dtype=np.int64),
            np.ones(n, dtype),
            symmetric=True,
        )

    def to_dense(self):
        out = np.zeros((self.rows, self.cols), dtype=self.data.dtype)
        for i in range(self.rows):
            sl = slice(self.indptr[i], self.indptr[i + 1])
            out[i, self.indices[sl]] = self.data[sl]
        return out

    def row(self, i):
        """(column indices, values) of row i."""
        sl = slice(self.indptr[i], self.indptr[i + 1])
        return self.indices[sl], self.data[sl]

    def get(self, i, j) -> float:
        idx, vals = self.row(i)
        p = np.searchsorted(idx, j)
        if p < idx.shape[0] and idx[p] == j:
            return float(vals[p])
        return 0.0

    def row_sums(self):
        out = np.zeros(self.rows, dtype=np.float64)
        backend.csr_matvec(self.indptr, self.indices, self.data.astype(np.float64),
                           np.ones(self.cols), out)
        return out

    def transpose(self):
        if self.symmetric and self.rows == self.cols:
            return self
        # counting sort by column; preserves in-row (here in-column) order
        counts = np.bincount(self.indices, minlength=self.cols)
        indptr = np.zeros(self.cols + 1, np.int64)
        np.cumsum(counts, out=indptr[1:])
        indices = np.empty(self.nnz, np.int64)
        data = np.empty(self.nnz, self.data.dtype)
        fill = indptr[:-1].copy()
        for i in range(self.rows):
            for p in range(self.indptr[i], self.indptr[i + 1]):
                j = self.indices[p]
                indices[fill[j]] = i
                data[fill[j]] = self.data[p]
                fill[j] += 1
        return CSRMatrix(self.cols, self.rows, indptr, indices, data)

    def submatrix(self, node_idx):
        """Symmetric restriction to the given (sorted unique) node indices."""
        node_idx = np.asarray(node_idx, dtype=np.int64)
        remap = -np.ones(max(self.rows, self.cols), dtype=np.int64)
        remap[node_idx] = np.arange(node_idx.shape[0])
        indptr = np.zeros(node_idx.shape[0] + 1, np.int64)
        idx_chunks, val_chunks = [], []
        for new_i, old_i in enumerate(node_idx):
            cols, vals = self.row(old_i)
            new_cols = remap[cols]
            keep = new_cols >= 0
            idx_chunks.append(new_cols[keep])
            val_chunks.append(vals[keep])
            indptr[new_i + 1] = indptr[new_i] + int(keep.sum())
        indices = np.concatenate(idx_chunks) if idx_chunks else np.zeros(0, np.int64)
        data = np.concatenate(val_chunks) if val_chunks else np.zeros(0, self.data.dtype)
        return CSRMatrix(node_idx.shape[0], node_idx.shape[0], indptr, indices, data,
                         symmetric=self.symmetric)


def spmm(S: CSRMatrix, H: np.ndarray) -> np.ndarray:
    """Sparse-dense product S @ H."""
    H = np.asarray(H)
    if S.cols != H.shape[0]:
        raise ShapeError(f"spmm: {S.rows}x{S.cols} @ {H.shape}")
    out = np.zeros((S.rows, H.shape[1]), dtype=np.float64)
    backend.csr_dense_matmul(S.indptr, S.indices, S.data.astype(np.float64),
                             np.ascontiguousarray(H, dtype=np.float64), out)
    return out.astype(H.dtype) if H.dtype == np.float32 else out


def spmm_t(S: CSRMatrix, H: np.ndarray) -> np.ndarray:
    """S.T @ H without materializing the transpose."""
    H = np.asarray(H)
    if S.rows != H.shape[0]:
        raise ShapeError(f"spmm_t: ({S.rows}x{S.cols}).T @ {H.shape}")
    out = np.zeros((S.cols, H.shape[1]), dtype=np.float64)
    backend.csr_transpose_dense_matmul(S.indptr, S.indices, S.data.astype(np.float64),
                                       np.ascontiguousarray(H, dtype=np.float64), out)
    return out.astype(H.dtype) if H.dtype == np.float32 else out


def hadamard(xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    xa, xb = np.asarray(xa), np.asarray(xb)
    if xa.shape != xb.shape:
        raise ShapeError(f"hadamard: {xa.shape} vs {xb.shape}")
    return xa * xb


def l2_normalize_rows(H: np.ndarray, eps: float = EPS) -> np.ndarray:
    H = np.asarray(H)
    norms = np.sqrt(np.einsum("ij,ij->i", H.astype(np.float64), H.astype(np.float64)))
    denom = np.maximum(norms, eps)
    return (H / denom[:, None]).astype(H.dtype)


def row_norms(H: np.ndarray) -> np.ndarray:
    H64 = np.asarray(H, dtype=np.float64)
    return np.sqrt(np.einsum("ij,ij->i", H64, H64))


def cosine_similarity(hi: np.ndarray, hj: np.ndarray, eps: float = EPS) -> float:
    hi, hj = np.asarray(hi, np.float64), np.asarray(hj, np.float64)
    if hi.shape != hj.shape:
        raise ShapeError(f"cosine_similarity: {hi.shape} vs {hj.shape}")
    ni, nj = np.linalg.norm(hi), np.linalg.norm(hj)
    if ni < eps or nj < eps:
        return 0.0
    return float(hi @ hj / (ni * nj))
