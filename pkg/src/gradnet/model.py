"""Stacked graph diffusion layers with manual reverse-mode gradients.

Each layer computes

    P = (I + S) H W1 + S((S H) .* H) W2
    H_next = dropout(l2norm_rows(leaky_relu(P)))

and the network output is the feature-wise concatenation of the input with
every layer output. All math runs in float64; checkpoints store float32.
"""

from dataclasses import dataclass, field

import numpy as np

from .dataio import make_rng
from .kernels import CSRMatrix, ShapeError, cosine_similarity, spmm, spmm_t

LEAKY_SLOPE = 0.2
NORM_EPS = 1e-12


class StateError(RuntimeError):
    pass


@dataclass
class ModelParams:
    layers: list            # [(W1, W2), ...] each d_l x d_{l+1}, float64
    dims: list
    leaky_slope: float = LEAKY_SLOPE
    dropout_p: float = 0.3

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def total_width(self) -> int:
        return int(sum(self.dims))

    def copy(self):
        return ModelParams([(w1.copy(), w2.copy()) for w1, w2 in self.layers],
                           list(self.dims), self.leaky_slope, self.dropout_p)

    def squared_norm(self) -> float:
        return float(sum((w1 * w1).sum() + (w2 * w2).sum() for w1, w2 in self.layers))


def init_params(dims, seed: int = 0, leaky_slope: float = LEAKY_SLOPE,
                dropout_p: float = 0.3) -> ModelParams:
    """Glorot-uniform init: W ~ U(-a, a), a = sqrt(6/(fan_in+fan_out))."""
    if len(dims) < 2:
        raise ValueError("need at least one layer (two dims)")
    rng = make_rng(seed)
    layers = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        a = np.sqrt(6.0 / (d_in + d_out))
        w1 = rng.uniform(-a, a, size=(d_in, d_out))
        w2 = rng.uniform(-a, a, size=(d_in, d_out))
        layers.append((w1, w2))
    return ModelParams(layers, list(dims), leaky_slope, dropout_p)


@dataclass
class LayerCache:
    H_in: np.ndarray
    T: np.ndarray           # S @ H_in
    G: np.ndarray           # T .* H_in
    M1: np.ndarray          # (I+S) H_in
    M2: np.ndarray          # S @ G
    P: np.ndarray
    act: np.ndarray
    norms: np.ndarray
    normed: np.ndarray
    mask: np.ndarray | None


def layer_forward(H, S: CSRMatrix, w1, w2, leaky_slope=LEAKY_SLOPE,
                  dropout_p=0.0, training=False, rng=None):
    """One graph diffusion layer. Returns (H_next, LayerCache)."""
    H = np.asarray(H, np.float64)
    if H.shape[0] != S.rows:
        raise ShapeError(f"layer_forward: H has {H.shape[0]} rows, S {S.rows}")
    if H.shape[1] != w1.shape[0]:
        raise ShapeError(f"layer_forward: H width {H.shape[1]} vs W1 {w1.shape}")
    T = spmm(S, H)
    G = T * H
    M1 = H + T
    M2 = spmm(S, G)
    P = M1 @ w1 + M2 @ w2
    act = np.where(P >= 0, P, leaky_slope * P)
    norms = np.sqrt(np.einsum("ij,ij->i", act, act))
    normed = act / np.maximum(norms, NORM_EPS)[:, None]
    mask = None
    out = normed
    if training and dropout_p > 0.0:
        if rng is None:
            raise StateError("training-mode dropout needs an rng")
        mask = (rng.random(normed.shape) >= dropout_p).astype(np.float64)
        out = normed * mask / (1.0 - dropout_p)
    cache = LayerCache(H, T, G, M1, M2, P, act, norms, normed, mask)
    return out, cache


def forward(X_aug, S: CSRMatrix, params: ModelParams, training=False, rng=None):
    """Full forward pass. Returns (H_concat, caches).

    H_concat = [H0 | H1 | ... | HL], width sum(params.dims).
    """
    H = np.asarray(X_aug, np.float64)
    if H.shape[1] != params.dims[0]:
        raise ShapeError(f"input width {H.shape[1]} != d0 {params.dims[0]}")
    pieces = [H]
    caches = []
    for w1, w2 in params.layers:
        H, cache = layer_forward(H, S, w1, w2, params.leaky_slope,
                                 params.dropout_p, training, rng)
        caches.append(cache)
        pieces.append(H)
    return np.concatenate(pieces, axis=1), caches


def pairwise_similarity(H, i, j) -> float:
    n = H.shape[0]
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"row index out of range: {i}, {j} for {n} rows")
    return cosine_similarity(H[i], H[j])


def _layer_backward(d_out, cache: LayerCache, S: CSRMatrix, w1, w2,
                    leaky_slope, dropout_p):
    """Reverse one layer. Returns (dW1, dW2, dH_in)."""
    if cache.mask is not None:
        d_normed = d_out * cache.mask / (1.0 - dropout_p)
    else:
        d_normed = d_out
    # l2 row normalization: y = a/m, m = max(||a||, eps)
    m = np.maximum(cache.norms, NORM_EPS)[:, None]
    live = (cache.norms > NORM_EPS)[:, None]
    y = cache.normed
    dot = np.einsum("ij,ij->i", y, d_normed)[:, None]
    d_act = np.where(live, (d_normed - y * dot) / m, d_normed / m)
    d_P = d_act * np.where(cache.P >= 0, 1.0, leaky_slope)
    dW1 = cache.M1.T @ d_P
    dW2 = cache.M2.T @ d_P
    dM1 = d_P @ w1.T
    dM2 = d_P @ w2.T
    dH = dM1 + spmm_t(S, dM1)
    dG = spmm_t(S, dM2)
    dH += dG * cache.T                 # G = T .* H_in, H_in branch
    dT = dG * cache.H_in
    dH += spmm_t(S, dT)                # T = S H_in
    return dW1, dW2, dH


def backward(d_H_concat, caches, S: CSRMatrix, params: ModelParams):
    """Gradients of a scalar loss wrt every (W1, W2) given the gradient on
    the concatenated output. Returns a list of (dW1, dW2)."""
    if len(caches) != params.n_layers:
        raise StateError("cache count does not match layer count")
    splits = np.cumsum(params.dims)[:-1]
    slices = np.split(np.asarray(d_H_concat, np.float64), splits, axis=1)
    grads = [None] * params.n_layers
    d_next = slices[-1]
    for l in range(params.n_layers - 1, -1, -1):
        w1, w2 = params.layers[l]
        dW1, dW2, dH = _layer_backward(d_next, caches[l], S, w1, w2,
                                       params.leaky_slope, params.dropout_p)
        grads[l] = (dW1, dW2)
        d_next = dH + slices[l]
    return grads
