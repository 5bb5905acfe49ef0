"""Kernel backend selection.

Hot CSR kernels are compiled with numba when available. Setting
``GRADNET_BACKEND=numpy`` forces the pure-numpy fallback (useful for
debugging and for the backend benchmark); ``GRADNET_BACKEND=numba``
fails loudly if numba cannot be imported.
"""

import os

import numpy as np

_REQUESTED = os.environ.get("GRADNET_BACKEND", "").strip().lower()

if _REQUESTED not in ("", "numba", "numpy"):
    raise RuntimeError(f"GRADNET_BACKEND must be 'numba' or 'numpy', got {_REQUESTED!r}")

_USE_NUMBA = False
if _REQUESTED != "numpy":
    try:
        from numba import njit

        _USE_NUMBA = True
    except ImportError:
        if _REQUESTED == "numba":
            raise
        _USE_NUMBA = False


def backend_name() -> str:
    return "numba" if _USE_NUMBA else "numpy"


def _csr_dense_matmul_numpy(indptr, indices, data, dense, out):
    n_rows = indptr.shape[0] - 1
    if indices.shape[0] == 0:
        return out
    # one fused gather/scatter; np.add.at is sequential hence deterministic
    row_of_nnz = np.repeat(np.arange(n_rows), np.diff(indptr))
    contrib = data[:, None] * dense[indices]
    np.add.at(out, row_of_nnz, contrib)
    return out


def _csr_transpose_dense_matmul_numpy(indptr, indices, data, dense, out):
    n_rows = indptr.shape[0] - 1
    if indices.shape[0] == 0:
        return out
    row_of_nnz = np.repeat(np.arange(n_rows), np.diff(indptr))
    contrib = data[:, None] * dense[row_of_nnz]
    np.add.at(out, indices, contrib)
    return out


def _csr_matvec_numpy(indptr, indices, data, vec, out):
    n_rows = indptr.shape[0] - 1
    if indices.shape[0] == 0:
        return out
    row_of_nnz = np.repeat(np.arange(n_rows), np.diff(indptr))
    np.add.at(out, row_of_nnz, data * vec[indices])
    return out


if _USE_NUMBA:

    @njit(cache=True)
    def _csr_dense_matmul_numba(indptr, indices, data, dense, out):  # pragma: no cover
        n_rows = indptr.shape[0] - 1
        n_cols = dense.shape[1]
        for i in range(n_rows):
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                v = data[p]
                for c in range(n_cols):
                    out[i, c] += v * dense[j, c]
        return out

    @njit(cache=True)
    def _csr_transpose_dense_matmul_numba(indptr, indices, data, dense, out):  # pragma: no cover
        n_rows = indptr.shape[0] - 1
        n_cols = dense.shape[1]
        for i in range(n_rows):
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                v = data[p]
                for c in range(n_cols):
                    out[j, c] += v * dense[i, c]
        return out

    @njit(cache=True)
    def _csr_matvec_numba(indptr, indices, data, vec, out):  # pragma: no cover
        n_rows = indptr.shape[0] - 1
        for i in range(n_rows):
            acc = 0.0
            for p in range(indptr[i], indptr[i + 1]):
                acc += data[p] * vec[indices[p]]
            out[i] += acc
        return out


def csr_dense_matmul(indptr, indices, data, dense, out):
    """out += CSR(indptr, indices, data) @ dense, in place."""
    if _USE_NUMBA:
        return _csr_dense_matmul_numba(indptr, indices, data, dense, out)
    return _csr_dense_matmul_numpy(indptr, indices, data, dense, out)


def csr_transpose_dense_matmul(indptr, indices, data, dense, out):
    """out += CSR(...)^T @ dense, in place."""
    if _USE_NUMBA:
        return _csr_transpose_dense_matmul_numba(indptr, indices, data, dense, out)
    return _csr_transpose_dense_matmul_numpy(indptr, indices, data, dense, out)


def csr_matvec(indptr, indices, data, vec, out):
    """out += CSR(...) @ vec, in place."""
    if _USE_NUMBA:
        return _csr_matvec_numba(indptr, indices, data, vec, out)
    return _csr_matvec_numpy(indptr, indices, data, vec, out)
