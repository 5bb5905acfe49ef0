"""Mutual k-NN affinity construction, symmetric normalization, truncation."""

from dataclasses import dataclass

import numpy as np

from .dataio import FeatureMatrix, DataError
from .kernels import CSRMatrix


class ParameterError(ValueError):
    pass


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class SimilarityMetric:
    """tag: 'inv_euclidean' (1/(1+dist)), 'cosine', or 'gaussian_euclidean'."""

    tag: str = "inv_euclidean"
    sigma: float = 1.0

    def __post_init__(self):
        if self.tag not in ("inv_euclidean", "cosine", "gaussian_euclidean"):
            raise ParameterError(f"unknown similarity metric {self.tag!r}")
        if self.tag == "gaussian_euclidean" and self.sigma <= 0:
            raise ParameterError("gaussian sigma must be positive")


@dataclass
class AffinityGraph:
    A: CSRMatrix            # symmetric affinity, zero diagonal
    S: CSRMatrix            # D^{-1/2} A D^{-1/2}
    degree: np.ndarray
    k: int
    metric: SimilarityMetric
    node_ids: list[str]

    @property
    def n(self) -> int:
        return self.A.rows

    def neighbors(self, i) -> np.ndarray:
        cols, _ = self.A.row(i)
        return cols


def pairwise_squared_distances(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    X64 = np.asarray(X, np.float64)
    Y64 = np.asarray(Y, np.float64)
    sq = (X64 * X64).sum(1)[:, None] + (Y64 * Y64).sum(1)[None, :] - 2.0 * (X64 @ Y64.T)
    np.maximum(sq, 0.0, out=sq)
    return sq


def similarity_matrix(X: np.ndarray, Y: np.ndarray, metric: SimilarityMetric) -> np.ndarray:
    """Dense pairwise similarities between rows of X and rows of Y."""
    if metric.tag == "cosine":
        X64, Y64 = np.asarray(X, np.float64), np.asarray(Y, np.float64)
        nx = np.maximum(np.linalg.norm(X64, axis=1), 1e-12)
        ny = np.maximum(np.linalg.norm(Y64, axis=1), 1e-12)
        return (X64 @ Y64.T) / nx[:, None] / ny[None, :]
    dist = np.sqrt(pairwise_squared_distances(X, Y))
    if metric.tag == "inv_euclidean":
        return 1.0 / (1.0 + dist)
    return np.exp(-(dist * dist) / (2.0 * metric.sigma**2))


def _knn_indices(X: np.ndarray, k: int, metric: SimilarityMetric,
                 chunk: int = 2048) -> np.ndarray:
    """Per row: indices of the k most similar other rows (self excluded),
    ties on the k-th value broken by lower index."""
    n = X.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        sim = similarity_matrix(X[start:stop], X, metric)
        sim[np.arange(stop - start), np.arange(start, stop)] = -np.inf
        # sort by (-similarity, index): stable argsort on negated sims
        order = np.argsort(-sim, axis=1, kind="stable")
        out[start:stop] = order[:, :k]
    return out


def build_mutual_knn(X: FeatureMatrix, k: int, metric: SimilarityMetric | None = None,
                     ) -> AffinityGraph:
    """Edge (i,j) is kept iff i is in j's k-NN set and j is in i's."""
    metric = metric or SimilarityMetric()
    n = X.n
    if k < 1 or k >= n:
        raise ParameterError(f"k must satisfy 1 <= k < n (k={k}, n={n})")
    if not np.all(np.isfinite(X.data)):
        raise DataError("non-finite features")
    nn = _knn_indices(X.data, k, metric)
    # membership[i, j] = True iff j in NN_k(i)
    in_knn = [set(map(int, nn[i])) for i in range(n)]
    indptr = np.zeros(n + 1, np.int64)
    idx_chunks, val_chunks = [], []
    for i in range(n):
        mutual = sorted(int(j) for j in nn[i] if i in in_knn[int(j)])
        cols = np.asarray(mutual, dtype=np.int64)
        if cols.shape[0]:
            sims = similarity_matrix(X.data[i : i + 1], X.data[cols], metric)[0]
        else:
            sims = np.zeros(0)
        indptr[i + 1] = indptr[i] + cols.shape[0]
        idx_chunks.append(cols)
        val_chunks.append(sims)
    indices = np.concatenate(idx_chunks) if idx_chunks else np.zeros(0, np.int64)
    values = np.concatenate(val_chunks) if val_chunks else np.zeros(0)
    A = CSRMatrix(n, n, indptr, indices, values, symmetric=True)
    S = transition_matrix(A)
    return AffinityGraph(A, S, A.row_sums(), k, metric, list(X.ids))


def transition_matrix(A: CSRMatrix) -> CSRMatrix:
    """S = D^{-1/2} A D^{-1/2}; zero-degree rows stay all zero."""
    if A.rows != A.cols:
        raise ValidationError("affinity matrix must be square")
    if A.nnz and A.data.min() < 0:
        raise ValidationError("affinity matrix must be nonnegative")
    _check_symmetric(A)
    deg = A.row_sums()
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    row_of_nnz = np.repeat(np.arange(A.rows), np.diff(A.indptr))
    values = A.data * inv_sqrt[row_of_nnz] * inv_sqrt[A.indices]
    return CSRMatrix(A.rows, A.cols, A.indptr.copy(), A.indices.copy(), values,
                     symmetric=True)


def _check_symmetric(A: CSRMatrix, tol: float = 1e-8):
    At = CSRMatrix(A.rows, A.cols, A.indptr, A.indices, A.data, symmetric=False).transpose()
    if not (np.array_equal(A.indptr, At.indptr) and np.array_equal(A.indices, At.indices)
            and np.allclose(A.data, At.data, atol=tol)):
        raise ValidationError("affinity matrix is not symmetric")


def truncate_union(X: FeatureMatrix, query_indices, t: int, k: int,
                   metric: SimilarityMetric | None = None):
    """Restrict to queries plus the union of each query's top-t neighbors,
    then rebuild the mutual k-NN graph inside that subset.

    Returns (AffinityGraph, index_map) where index_map[r] is the original
    row index of subgraph row r.
    """
    metric = metric or SimilarityMetric()
    query_indices = np.asarray(query_indices, dtype=np.int64)
    if query_indices.shape[0] == 0:
        raise ParameterError("query set must not be empty")
    if t > X.n:
        raise ParameterError(f"t={t} exceeds n={X.n}")
    sim = similarity_matrix(X.data[query_indices], X.data, metric)
    sim[np.arange(query_indices.shape[0]), query_indices] = -np.inf
    keep = set(map(int, query_indices))
    for r in range(query_indices.shape[0]):
        order = np.argsort(-sim[r], kind="stable")
        keep.update(map(int, order[:t]))
    index_map = np.asarray(sorted(keep), dtype=np.int64)
    sub = FeatureMatrix(X.data[index_map], [X.ids[i] for i in index_map],
                        None if X.labels is None else X.labels[index_map])
    return build_mutual_knn(sub, k, metric), index_map
