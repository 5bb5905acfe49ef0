"""Manifold-aware unsupervised retrieval: mutual k-NN graphs, classical
diffusion re-ranking, anchor-based sparse coding, and a trainable graph
diffusion network with inductive query expansion."""

from .backend import backend_name
from .kernels import CSRMatrix, cosine_similarity, hadamard, l2_normalize_rows, spmm
from .dataio import FeatureMatrix, generate_toy, load_orl, read_fmat, write_fmat
from .graph import AffinityGraph, SimilarityMetric, build_mutual_knn, transition_matrix
from .anchors import AnchorModel, augment_features, build_anchor_model, kmeans, sparse_code
from .diffusion import random_walk_closed, random_walk_iterate, rank_from_state, tpg_iterate
from .model import ModelParams, backward, forward, init_params, layer_forward
from .training import TrainConfig, LossWeights, Sextet, bfs_subgraph, train
from .retrieval import Ranking, qfe, qfe_iterate, retrieve
from .evalmetrics import average_precision, bullseye, mean_average_precision

__version__ = "0.1.0"
