"""Ranking from learned features and inductive query feature expansion."""

from dataclasses import dataclass

import numpy as np

from .dataio import FeatureMatrix
from .graph import ParameterError, SimilarityMetric, similarity_matrix
from .kernels import row_norms


@dataclass
class Ranking:
    query_id: str
    instance_ids: list[str]
    scores: np.ndarray
    indices: np.ndarray | None = None   # row indices into the searched matrix

    def __post_init__(self):
        self.scores = np.asarray(self.scores, np.float64)
        if self.indices is not None:
            self.indices = np.asarray(self.indices, np.int64)

    def top(self, k):
        return list(zip(self.instance_ids[:k], self.scores[:k]))


def retrieve(h_q: np.ndarray, H: np.ndarray, topk: int | None = None,
             ids=None, query_id: str = "q", exclude: int | None = None) -> Ranking:
    """Top-k rows of H by cosine similarity to h_q; ties by ascending index."""
    H = np.asarray(H, np.float64)
    h_q = np.asarray(h_q, np.float64)
    if h_q.shape[0] != H.shape[1]:
        raise ParameterError(f"query width {h_q.shape[0]} != H width {H.shape[1]}")
    nq = np.linalg.norm(h_q)
    norms = np.maximum(row_norms(H), 1e-12)
    if nq < 1e-12:
        sims = np.zeros(H.shape[0])
    else:
        sims = (H @ h_q) / (norms * nq)
    if exclude is not None:
        sims = sims.copy()
        sims[exclude] = -np.inf
    order = np.argsort(-sims, kind="stable")
    if exclude is not None:
        order = order[:-1]
    if topk is not None:
        order = order[: min(topk, order.shape[0])]
    if ids is None:
        ids = [str(i) for i in range(H.shape[0])]
    return Ranking(query_id, [ids[i] for i in order], sims[order], order)


def qfe(q: np.ndarray, X_orig: FeatureMatrix, H_learned: np.ndarray, k: int,
        metric: SimilarityMetric | None = None) -> np.ndarray:
    """Inductive embedding of an unseen query: the similarity-weighted sum of
    the learned features of its k nearest database rows (similarities taken
    on the original descriptors)."""
    metric = metric or SimilarityMetric()
    if X_orig.n == 0:
        raise ParameterError("empty database")
    if k < 1:
        raise ParameterError("k must be >= 1")
    k = min(k, X_orig.n)
    sims = similarity_matrix(np.asarray(q, np.float64)[None, :], X_orig.data, metric)[0]
    nn = np.argsort(-sims, kind="stable")[:k]
    H = np.asarray(H_learned, np.float64)
    return sims[nn] @ H[nn]


def qfe_iterate(q: np.ndarray, X_orig: FeatureMatrix, H_learned: np.ndarray,
                k: int, rounds: int = 1,
                metric: SimilarityMetric | None = None) -> np.ndarray:
    """QFE, then re-expansion in learned space with cosine weights for each
    additional round."""
    if rounds < 1:
        raise ParameterError("rounds must be >= 1")
    h_q = qfe(q, X_orig, H_learned, k, metric)
    H = np.asarray(H_learned, np.float64)
    norms = np.maximum(row_norms(H), 1e-12)
    for _ in range(rounds - 1):
        nq = np.linalg.norm(h_q)
        if nq < 1e-12:
            break
        sims = (H @ h_q) / (norms * nq)
        nn = np.argsort(-sims, kind="stable")[:k]
        h_q = sims[nn] @ H[nn]
    return h_q


def export_rankings_csv(rankings, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write("query_id,rank,instance_id,score\n")
        for r in rankings:
            for pos, (inst, score) in enumerate(zip(r.instance_ids, r.scores), start=1):
                f.write(f"{r.query_id},{pos},{inst},{score:.8f}\n")


def export_rankings_jsonl(rankings, path):
    import json

    with open(path, "w", encoding="utf-8") as f:
        for r in rankings:
            f.write(json.dumps({
                "query_id": r.query_id,
                "results": [{"instance_id": inst, "score": float(score)}
                            for inst, score in zip(r.instance_ids, r.scores)],
            }) + "\n")
