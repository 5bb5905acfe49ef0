"""Classical diffusion baselines: random walk with restart (iterative and
closed form) and tensor-product-graph diffusion."""

import numpy as np

from .graph import ParameterError
from .kernels import CSRMatrix, ShapeError, spmm


class NumericalError(RuntimeError):
    pass


def _check_alpha(alpha):
    if not (0.0 < alpha < 1.0):
        raise ParameterError(f"alpha must lie in (0,1), got {alpha}")


def random_walk_iterate(S: CSRMatrix, f0: np.ndarray, alpha: float,
                        max_iters: int = 10000, tol: float = 1e-10):
    """Iterate f <- alpha*S f + (1-alpha)*f0 until the sup-norm step < tol.

    Returns (f, iterations_used).
    """
    _check_alpha(alpha)
    f0 = np.asarray(f0, np.float64)
    if f0.shape[0] != S.rows:
        raise ShapeError("state length must equal node count")
    f = f0.copy()
    for it in range(1, max_iters + 1):
        f_next = alpha * spmm(S, f[:, None])[:, 0] + (1.0 - alpha) * f0
        delta = np.max(np.abs(f_next - f))
        f = f_next
        if delta < tol:
            return f, it
    return f, max_iters


def random_walk_closed(S: CSRMatrix, f0: np.ndarray, alpha: float,
                       residual_tol: float = 1e-10) -> np.ndarray:
    """Solve (I - alpha*S) f = (1-alpha) f0 by conjugate gradient.

    The system is SPD for symmetric S with spectral radius <= 1 and alpha < 1.
    """
    _check_alpha(alpha)
    f0 = np.asarray(f0, np.float64)
    if f0.shape[0] != S.rows:
        raise ShapeError("state length must equal node count")
    b = (1.0 - alpha) * f0
    n = S.rows

    def matvec(v):
        return v - alpha * spmm(S, v[:, None])[:, 0]

    x = np.zeros(n)
    r = b - matvec(x)
    p = r.copy()
    rs = r @ r
    b_norm = max(np.linalg.norm(b), 1e-300)
    for _ in range(10 * n):
        if np.sqrt(rs) / b_norm < residual_tol:
            return x
        Ap = matvec(p)
        pAp = p @ Ap
        if pAp <= 0:
            raise NumericalError("CG breakdown: system not positive definite")
        a = rs / pAp
        x = x + a * p
        r = r - a * Ap
        rs_new = r @ r
        p = r + (rs_new / rs) * p
        rs = rs_new
    if np.sqrt(rs) / b_norm < residual_tol:
        return x
    raise NumericalError(f"CG did not converge within {10 * n} iterations")


def tpg_iterate(S, A0, T: int) -> np.ndarray:
    """Apply the second-order update A <- S A S^T + I exactly T times."""
    S = S.to_dense() if isinstance(S, CSRMatrix) else np.asarray(S, np.float64)
    A = A0.to_dense() if isinstance(A0, CSRMatrix) else np.asarray(A0, np.float64)
    if S.shape[0] != S.shape[1] or S.shape != A.shape:
        raise ShapeError(f"tpg_iterate: S {S.shape} vs A {A.shape}")
    if T < 0:
        raise ParameterError("T must be >= 0")
    A = A.astype(np.float64).copy()
    eye = np.eye(S.shape[0])
    for _ in range(T):
        A = S @ A @ S.T + eye
    return A


def rank_from_state(f: np.ndarray, query_positions) -> np.ndarray:
    """Database positions sorted by descending score, ties by ascending
    index; query positions are excluded."""
    f = np.asarray(f, np.float64)
    mask = np.ones(f.shape[0], dtype=bool)
    mask[np.asarray(query_positions, dtype=np.int64)] = False
    candidates = np.nonzero(mask)[0]
    order = np.argsort(-f[candidates], kind="stable")
    return candidates[order]
