"""Sextet sampling, unsupervised losses, BFS mini-batches, Adam, epoch loop."""

import math
import sys
from dataclasses import dataclass, field, asdict

import numpy as np

from .anchors import augment_features, build_anchor_model
from .dataio import FeatureMatrix, make_rng
from .graph import AffinityGraph
from .kernels import CSRMatrix
from .model import ModelParams, backward, forward, init_params

LOCAL_EPS = 1e-8
GLOBAL_EPS = 1e-8


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Sextet:
    i: int
    j: int
    k: int
    l: int
    u: int
    v: int

    def nodes(self):
        return (self.i, self.j, self.k, self.l, self.u, self.v)


@dataclass
class LossWeights:
    alpha_loss: float = 1.0
    beta: float = 1e5
    lam: float = 1e-5


def sample_sextet(graph: AffinityGraph, rng: np.random.Generator,
                  max_tries: int = 100) -> Sextet:
    """(i,j,k,l,u,v): j a neighbor of i, l of k, u/v non-neighbors of all
    four; all six distinct. Rejection-samples up to max_tries."""
    n = graph.n
    if n < 6:
        raise SamplingError("graph has fewer than 6 nodes")
    degrees = np.diff(graph.A.indptr)
    eligible = np.nonzero(degrees > 0)[0]
    if eligible.shape[0] < 2:
        raise SamplingError("not enough nodes with neighbors")
    for _ in range(max_tries):
        i, k = (int(x) for x in rng.choice(eligible, size=2))
        ni = graph.neighbors(i)
        nk = graph.neighbors(k)
        j = int(ni[rng.integers(ni.shape[0])])
        l = int(nk[rng.integers(nk.shape[0])])
        closure = set((i, j, k, l))
        for node in (i, j, k, l):
            closure.update(map(int, graph.neighbors(node)))
        candidates = np.setdiff1d(np.arange(n), np.fromiter(closure, dtype=np.int64))
        if candidates.shape[0] < 2:
            continue
        u, v = (int(x) for x in rng.choice(candidates, size=2, replace=False))
        if len({i, j, k, l, u, v}) == 6:
            return Sextet(i, j, k, l, u, v)
    raise SamplingError(f"no valid sextet after {max_tries} tries")


def local_loss(s_ij: float, s_iu: float) -> float:
    """-ln of the similarity gap between a neighbor and a non-neighbor."""
    return -math.log(max(s_ij - s_iu, LOCAL_EPS))


def global_loss(a_ij, a_kl, s_ki, s_li, s_lj, beta) -> float:
    """ln(1 + beta * a_ij a_kl s_ki s_li (s_ki - s_lj)^2), clamped >= eps."""
    inner = 1.0 + beta * a_ij * a_kl * s_ki * s_li * (s_ki - s_lj) ** 2
    return math.log(max(inner, GLOBAL_EPS))


def _cos_pair(a, b, eps=1e-12):
    """cosine and its gradients wrt both vectors."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < eps or nb < eps:
        return 0.0, np.zeros_like(a), np.zeros_like(b)
    s = float(a @ b / (na * nb))
    da = b / (na * nb) - s * a / (na * na)
    db = a / (na * nb) - s * b / (nb * nb)
    return s, da, db


@dataclass
class BatchLossResult:
    loss: float
    local_term: float
    global_term: float
    penalty: float
    d_H: np.ndarray
    n_local_clamped: int = 0
    n_global_clamped: int = 0


def batch_loss_and_grad(sextets, H, A: CSRMatrix, weights: LossWeights,
                        params: ModelParams | None = None,
                        index_of=None) -> BatchLossResult:
    """Mean sextet loss plus (optionally) the l2 parameter penalty, with the
    gradient wrt the rows of H.

    A is indexed by original node ids; `index_of` maps original node id to a
    row of H (identity when H covers the full graph).
    """
    H = np.asarray(H, np.float64)
    d_H = np.zeros_like(H)
    if index_of is None:
        index_of = {}
    row = lambda node: index_of.get(node, node)
    n_batch = len(sextets)
    total_local = 0.0
    total_global = 0.0
    n_local_clamped = 0
    n_global_clamped = 0
    for sx in sextets:
        ri, rj, rk, rl, ru, rv = (row(x) for x in sx.nodes())

        for (a_r, b_r, c_r) in ((ri, rj, ru), (rk, rl, rv)):
            s_ab, dab_a, dab_b = _cos_pair(H[a_r], H[b_r])
            s_ac, dac_a, dac_c = _cos_pair(H[a_r], H[c_r])
            gap = s_ab - s_ac
            total_local += -math.log(max(gap, LOCAL_EPS))
            if gap > LOCAL_EPS:
                coef = -1.0 / gap
                d_H[a_r] += coef * (dab_a - dac_a)
                d_H[b_r] += coef * dab_b
                d_H[c_r] += -coef * dac_c
            else:
                n_local_clamped += 1

        a_ij = A.get(sx.i, sx.j)
        a_kl = A.get(sx.k, sx.l)
        s_ki, dki_k, dki_i = _cos_pair(H[rk], H[ri])
        s_li, dli_l, dli_i = _cos_pair(H[rl], H[ri])
        s_lj, dlj_l, dlj_j = _cos_pair(H[rl], H[rj])
        diff = s_ki - s_lj
        inner = 1.0 + weights.beta * a_ij * a_kl * s_ki * s_li * diff * diff
        total_global += math.log(max(inner, GLOBAL_EPS))
        if inner > GLOBAL_EPS:
            dv = weights.alpha_loss * weights.beta / inner * a_ij * a_kl
            g_ki = dv * (s_li * diff * diff + s_ki * s_li * 2.0 * diff)
            g_li = dv * (s_ki * diff * diff)
            g_lj = dv * (s_ki * s_li * 2.0 * diff * (-1.0))
            d_H[rk] += g_ki * dki_k
            d_H[ri] += g_ki * dki_i + g_li * dli_i
            d_H[rl] += g_li * dli_l + g_lj * dlj_l
            d_H[rj] += g_lj * dlj_j
        else:
            n_global_clamped += 1

    d_H /= n_batch
    penalty = weights.lam * params.squared_norm() if params is not None else 0.0
    loss = (total_local + weights.alpha_loss * total_global) / n_batch + penalty
    return BatchLossResult(loss, total_local / n_batch,
                           total_global / n_batch, penalty, d_H,
                           n_local_clamped, n_global_clamped)


def batch_loss(sextets, H, graph: AffinityGraph, weights: LossWeights,
               params: ModelParams | None = None) -> float:
    return batch_loss_and_grad(sextets, H, graph.A, weights, params).loss


def bfs_subgraph(graph: AffinityGraph, seeds, hops: int,
                 node_budget: int | None = None, rng=None):
    """Hop-by-hop frontier expansion from the seed nodes.

    When a frontier would push the node count past node_budget, that
    frontier is uniformly subsampled. Returns (node_set ascending,
    restricted S keeping global values on retained edges).
    """
    if hops < 0:
        raise ValueError("hops must be >= 0")
    seeds = np.unique(np.asarray(seeds, dtype=np.int64))
    visited = set(map(int, seeds))
    frontier = seeds
    for _ in range(hops):
        nxt = set()
        for node in frontier:
            for nb in graph.neighbors(int(node)):
                if int(nb) not in visited:
                    nxt.add(int(nb))
        if not nxt:
            break
        nxt = np.fromiter(sorted(nxt), dtype=np.int64)
        if node_budget is not None and len(visited) + nxt.shape[0] > node_budget:
            room = node_budget - len(visited)
            if room <= 0:
                break
            if rng is None:
                raise ValueError("node_budget subsampling needs an rng")
            nxt = np.sort(rng.choice(nxt, size=room, replace=False))
        visited.update(map(int, nxt))
        frontier = nxt
    nodes = np.fromiter(sorted(visited), dtype=np.int64)
    return nodes, graph.S.submatrix(nodes)


def adam_step(params: ModelParams, grads, state: "TrainState", lr: float,
              beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place Adam update with bias correction."""
    state.timestep += 1
    t = state.timestep
    for l, (w_pair, g_pair) in enumerate(zip(params.layers, grads)):
        for s, (w, g) in enumerate(zip(w_pair, g_pair)):
            m = state.m[l][s]
            v = state.v[l][s]
            m *= beta1
            m += (1 - beta1) * g
            v *= beta2
            v += (1 - beta2) * (g * g)
            m_hat = m / (1 - beta1**t)
            v_hat = v / (1 - beta2**t)
            w -= lr * m_hat / (np.sqrt(v_hat) + eps)


def lr_schedule(epoch: int, base_lr: float = 3e-4) -> float:
    """Halved at epoch 30 and again at epoch 100."""
    if epoch < 30:
        return base_lr
    if epoch < 100:
        return base_lr / 2.0
    return base_lr / 4.0


@dataclass
class TrainState:
    m: list
    v: list
    timestep: int = 0
    epoch: int = 0

    @classmethod
    def for_params(cls, params: ModelParams):
        m = [[np.zeros_like(w1), np.zeros_like(w2)] for w1, w2 in params.layers]
        v = [[np.zeros_like(w1), np.zeros_like(w2)] for w1, w2 in params.layers]
        return cls(m, v)


@dataclass
class TrainConfig:
    dims: tuple = (1024, 256, 128)      # hidden widths; d0 comes from the data
    k: int = 15
    anchors: int = 100
    code_support: int = 5
    dropout: float = 0.3
    batch_size: int = 64
    epochs: int = 300
    base_lr: float = 3e-4
    alpha_loss: float = 1.0
    beta: float = 1e5
    lam: float = 1e-5
    seed: int = 0
    node_budget: int = 4096
    hops: int | None = None             # default 2 * n_layers
    checkpoint_every: int = 0           # 0: only at the end
    log_stream: object = None

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.alpha_loss, self.beta, self.lam)


def steps_per_epoch(n_nodes: int, batch_size: int) -> int:
    """Each epoch touches roughly every node: ceil(N / (6 * batch))."""
    return max(1, math.ceil(n_nodes / (6 * batch_size)))


def compute_step(params, X_aug_data, graph, sextets, weights, cfg_dropout,
                 node_budget=None, hops=None, rng=None):
    """One forward/loss/backward pass on the BFS-restricted subgraph.

    Returns (BatchLossResult, grads list, subgraph size).
    """
    if hops is None:
        hops = 2 * params.n_layers
    seeds = np.unique(np.concatenate([np.asarray(sx.nodes()) for sx in sextets]))
    nodes, S_sub = bfs_subgraph(graph, seeds, hops, node_budget, rng)
    index_of = {int(node): r for r, node in enumerate(nodes)}
    training = cfg_dropout > 0.0
    H, caches = forward(X_aug_data[nodes], S_sub, params, training=training, rng=rng)
    result = batch_loss_and_grad(sextets, H, graph.A, weights, params, index_of)
    grads = backward(result.d_H, caches, S_sub, params)
    grads = [(g1 + 2.0 * weights.lam * w1, g2 + 2.0 * weights.lam * w2)
             for (g1, g2), (w1, w2) in zip(grads, params.layers)]
    return result, grads, nodes.shape[0]


def train(features: FeatureMatrix, graph: AffinityGraph, anchor_model,
          config: TrainConfig):
    """Full training loop. Returns (params, train log rows).

    anchor_model may be None, in which case it is built from the config.
    """
    if anchor_model is None:
        anchor_model = build_anchor_model(features, config.anchors,
                                          config.code_support, config.seed)
    X_aug = augment_features(features, anchor_model.Z)
    dims = [X_aug.d] + list(config.dims)
    params = init_params(dims, seed=config.seed, dropout_p=config.dropout)
    state = TrainState.for_params(params)
    rng = make_rng(config.seed + 1)
    weights = config.loss_weights()
    X_data = X_aug.data.astype(np.float64)
    n_steps = steps_per_epoch(features.n, config.batch_size)
    log_rows = []
    stream = config.log_stream if config.log_stream is not None else sys.stderr
    for epoch in range(config.epochs):
        state.epoch = epoch
        lr = lr_schedule(epoch, config.base_lr)
        for step in range(n_steps):
            sextets = [sample_sextet(graph, rng) for _ in range(config.batch_size)]
            result, grads, n_sub = compute_step(
                params, X_data, graph, sextets, weights, config.dropout,
                config.node_budget, config.hops, rng)
            if not math.isfinite(result.loss):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch} step {step}: "
                    f"local={result.local_term} global={result.global_term}")
            adam_step(params, grads, state, lr)
            row = {"epoch": epoch, "step": step, "loss": result.loss,
                   "lr": lr, "nodes": n_sub}
            log_rows.append(row)
            print(f"epoch={epoch} step={step} loss={result.loss:.6f} "
                  f"lr={lr:.2e} nodes={n_sub}", file=stream)
    return params, log_rows


def embed(features: FeatureMatrix, graph: AffinityGraph, anchor_model,
          params: ModelParams) -> np.ndarray:
    """Eval-mode forward over the full graph; rows are the learned features."""
    X_aug = augment_features(features, anchor_model.Z)
    H, _ = forward(X_aug.data.astype(np.float64), graph.S, params, training=False)
    return H
