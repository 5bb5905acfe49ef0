"""K-means anchor selection and simplex-constrained sparse coding."""

from dataclasses import dataclass

import numpy as np

from .dataio import FeatureMatrix, make_rng
from .graph import ParameterError, pairwise_squared_distances
from .kernels import CSRMatrix, ShapeError

PGD_ITERS = 200


@dataclass
class AnchorModel:
    U: np.ndarray           # B x d anchor features
    Z: CSRMatrix            # N x B simplex codes, <= c nonzeros per row
    c: int

    @property
    def B(self) -> int:
        return self.U.shape[0]


def kmeans(X: FeatureMatrix, B: int, seed: int = 0, max_iters: int = 100) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding; empty clusters are re-seeded
    to the point farthest from its assigned center."""
    n = X.n
    if B < 1 or B > n:
        raise ParameterError(f"B must satisfy 1 <= B <= n (B={B}, n={n})")
    data = X.data.astype(np.float64)
    rng = make_rng(seed)

    centers = np.empty((B, data.shape[1]))
    first = int(rng.integers(n))
    centers[0] = data[first]
    closest = pairwise_squared_distances(data, centers[:1])[:, 0]
    for b in range(1, B):
        total = closest.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centers[b] = data[idx]
        closest = np.minimum(closest, pairwise_squared_distances(data, centers[b : b + 1])[:, 0])

    assign = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iters):
        d2 = pairwise_squared_distances(data, centers)
        new_assign = d2.argmin(axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for b in range(B):
            members = data[assign == b]
            if members.shape[0] == 0:
                worst = int(d2[np.arange(n), assign].argmax())
                centers[b] = data[worst]
                assign[worst] = b
            else:
                centers[b] = members.mean(axis=0)
    return centers.astype(np.float32)


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of v onto {z : z >= 0, sum z = 1}."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    ks = np.arange(1, v.shape[0] + 1)
    cond = u - (css - 1.0) / ks > 0
    rho = np.nonzero(cond)[0][-1]
    theta = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def sparse_code(x: np.ndarray, U: np.ndarray, c: int) -> np.ndarray:
    """Nonnegative sum-to-one code over the c nearest anchors.

    Minimizes ||x - U_s z||^2 on the simplex via projected gradient with a
    fixed step 1/L, L the largest eigenvalue of the support Gram matrix.
    Returns a dense length-B vector with support of size <= c.
    """
    B = U.shape[0]
    if c < 1 or c > B:
        raise ParameterError(f"c must satisfy 1 <= c <= B (c={c}, B={B})")
    x64 = np.asarray(x, np.float64)
    U64 = np.asarray(U, np.float64)
    d2 = pairwise_squared_distances(x64[None, :], U64)[0]
    support = np.sort(np.argsort(d2, kind="stable")[:c])
    Us = U64[support]
    gram = Us @ Us.T
    lip = max(float(np.linalg.eigvalsh(gram)[-1]), 1e-12)
    step = 1.0 / lip
    utx = Us @ x64
    z = np.full(c, 1.0 / c)
    for _ in range(PGD_ITERS):
        grad = gram @ z - utx
        z = project_simplex(z - step * grad)
    out = np.zeros(B)
    out[support] = z
    return out


def code_matrix(X: FeatureMatrix, U: np.ndarray, c: int) -> CSRMatrix:
    """Sparse-code every row of X; rows of the result live on the simplex."""
    n, B = X.n, U.shape[0]
    indptr = np.zeros(n + 1, np.int64)
    idx_chunks, val_chunks = [], []
    for i in range(n):
        z = sparse_code(X.data[i], U, c)
        (nz,) = np.nonzero(z)
        indptr[i + 1] = indptr[i] + nz.shape[0]
        idx_chunks.append(nz.astype(np.int64))
        val_chunks.append(z[nz])
    indices = np.concatenate(idx_chunks) if idx_chunks else np.zeros(0, np.int64)
    values = np.concatenate(val_chunks) if val_chunks else np.zeros(0)
    return CSRMatrix(n, B, indptr, indices, values)


def build_anchor_model(X: FeatureMatrix, B: int = 100, c: int = 5, seed: int = 0,
                       max_iters: int = 100) -> AnchorModel:
    U = kmeans(X, B, seed=seed, max_iters=max_iters)
    Z = code_matrix(X, U, c)
    return AnchorModel(U, Z, c)


def augment_features(X: FeatureMatrix, Z: CSRMatrix) -> FeatureMatrix:
    """Concatenate the densified codes onto the descriptors: output is n x (d+B)."""
    if Z.rows != X.n:
        raise ShapeError(f"code rows {Z.rows} != feature rows {X.n}")
    out = np.zeros((X.n, X.d + Z.cols), dtype=np.float32)
    out[:, : X.d] = X.data
    out[:, X.d :] = Z.to_dense().astype(np.float32)
    return FeatureMatrix(out, list(X.ids), X.labels)
