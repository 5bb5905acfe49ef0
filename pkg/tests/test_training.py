import math

import numpy as np
import pytest

from gradnet.dataio import FeatureMatrix, generate_toy, make_rng
from gradnet.graph import AffinityGraph, SimilarityMetric, build_mutual_knn, transition_matrix
from gradnet.kernels import CSRMatrix, cosine_similarity
from gradnet.model import forward, init_params
from gradnet.training import (LossWeights, SamplingError, Sextet, TrainConfig,
                              TrainState, adam_step, batch_loss,
                              batch_loss_and_grad, bfs_subgraph, global_loss,
                              local_loss, lr_schedule, sample_sextet,
                              steps_per_epoch, train)


def graph_from_dense(A_dense):
    A = CSRMatrix.from_dense(np.asarray(A_dense, float), symmetric=True)
    S = transition_matrix(A)
    return AffinityGraph(A, S, A.row_sums(), 0, SimilarityMetric(),
                         [str(i) for i in range(A.rows)])


@pytest.fixture(scope="module")
def toy_graph():
    return build_mutual_knn(generate_toy(40, 0.05, 0), k=5)


class TestSampleSextet:
    def test_invariants(self, toy_graph):
        rng = make_rng(0)
        for _ in range(200):
            sx = sample_sextet(toy_graph, rng)
            assert len(set(sx.nodes())) == 6
            assert sx.j in set(toy_graph.neighbors(sx.i).tolist())
            assert sx.l in set(toy_graph.neighbors(sx.k).tolist())
            for neg in (sx.u, sx.v):
                for anchor in (sx.i, sx.j, sx.k, sx.l):
                    assert neg not in set(toy_graph.neighbors(anchor).tolist())

    def test_forced_neighbor(self):
        # node 0 has exactly one neighbor (node 1) in a star-free layout
        A = np.zeros((8, 8))
        A[0, 1] = A[1, 0] = 1.0
        A[2, 3] = A[3, 2] = 1.0
        A[4, 5] = A[5, 4] = 1.0
        A[6, 7] = A[7, 6] = 1.0
        g = graph_from_dense(A)
        rng = make_rng(1)
        for _ in range(50):
            sx = sample_sextet(g, rng)
            if sx.i == 0:
                assert sx.j == 1

    def test_complete_graph_infeasible(self):
        A = 1.0 - np.eye(6)
        g = graph_from_dense(A)
        with pytest.raises(SamplingError):
            sample_sextet(g, make_rng(2))

    def test_uniform_marginal_of_i(self, toy_graph):
        rng = make_rng(3)
        counts = np.zeros(toy_graph.n)
        trials = 10000
        for _ in range(trials):
            sx = sample_sextet(toy_graph, rng)
            counts[sx.i] += 1
        # i is uniform over nodes that have at least one neighbor;
        # isolated nodes are never eligible as anchors
        eligible = toy_graph.degree > 0
        assert np.all(counts[~eligible] == 0)
        n_el = int(eligible.sum())
        mean = trials / n_el
        # ~3-sigma bound per cell with a little slack
        assert np.all(np.abs(counts[eligible] - mean) <= 3 * math.sqrt(mean) + 10)


class TestLosses:
    def test_local_gap_one(self):
        assert local_loss(1.0, 0.0) == pytest.approx(0.0)

    def test_local_gap_half(self):
        assert local_loss(0.9, 0.4) == pytest.approx(0.69314718, abs=1e-8)

    def test_local_clamp(self):
        assert local_loss(0.2, 0.5) == pytest.approx(-math.log(1e-8), abs=1e-6)

    def test_global_zero_difference(self):
        assert global_loss(1.0, 1.0, 0.7, 0.4, 0.7, beta=5.0) == pytest.approx(0.0)

    def test_global_zero_affinity(self):
        assert global_loss(0.0, 1.0, 0.8, 0.5, 0.2, beta=5.0) == pytest.approx(0.0)

    def test_global_direct_arithmetic(self):
        val = global_loss(1.0, 1.0, 0.8, 0.5, 0.2, beta=10.0)
        assert val == pytest.approx(math.log(1 + 10 * 0.8 * 0.5 * 0.36), abs=1e-9)
        assert val == pytest.approx(0.8920, abs=1e-3)


class TestBatchLoss:
    @pytest.fixture(scope="class")
    @staticmethod
    def setting():
        g = build_mutual_knn(generate_toy(40, 0.05, 0), k=5)
        rng = make_rng(4)
        params = init_params([2, 4], seed=0, dropout_p=0.0)
        fm = generate_toy(40, 0.05, 0)
        H, _ = forward(fm.data, g.S, params)
        sextets = [sample_sextet(g, rng) for _ in range(4)]
        return g, H, sextets, params

    def test_alpha_zero_gives_local_sum(self, setting):
        g, H, sextets, _ = setting
        w = LossWeights(alpha_loss=0.0, beta=1e5, lam=0.0)
        got = batch_loss(sextets[:1], H, g, w)
        sx = sextets[0]
        s = lambda a, b: cosine_similarity(H[a], H[b])
        expected = (local_loss(s(sx.i, sx.j), s(sx.i, sx.u))
                    + local_loss(s(sx.k, sx.l), s(sx.k, sx.v)))
        assert got == pytest.approx(expected, abs=1e-9)

    def test_penalty_isolation(self, setting):
        g, H, sextets, params = setting
        w_with = LossWeights(1.0, 1e5, 1e-3)
        w_without = LossWeights(1.0, 1e5, 0.0)
        diff = (batch_loss(sextets, H, g, w_with, params)
                - batch_loss(sextets, H, g, w_without, params))
        assert diff == pytest.approx(1e-3 * params.squared_norm(), abs=1e-9)

    def test_mean_invariance(self, setting):
        g, H, sextets, _ = setting
        w = LossWeights(1.0, 1e5, 0.0)
        one = batch_loss(sextets[:1], H, g, w)
        two = batch_loss(sextets[:1] * 2, H, g, w)
        assert one == pytest.approx(two, abs=1e-12)

    def test_nonnegative(self, setting):
        g, H, sextets, params = setting
        assert batch_loss(sextets, H, g, LossWeights(), params) >= 0.0


class TestBfsSubgraph:
    def test_hops_zero(self, toy_graph):
        nodes, _ = bfs_subgraph(toy_graph, [3, 9], hops=0)
        np.testing.assert_array_equal(nodes, [3, 9])

    def test_path_graph_two_hops(self):
        A = np.zeros((5, 5))
        for i in range(4):
            A[i, i + 1] = A[i + 1, i] = 1.0
        g = graph_from_dense(A)
        nodes, _ = bfs_subgraph(g, [0], hops=2)
        np.testing.assert_array_equal(nodes, [0, 1, 2])

    def test_budget_subsampling(self, toy_graph):
        rng = make_rng(5)
        nodes, _ = bfs_subgraph(toy_graph, [0], hops=6, node_budget=10, rng=rng)
        assert nodes.shape[0] <= 10

    def test_restricted_s_keeps_global_values(self, toy_graph):
        nodes, S_sub = bfs_subgraph(toy_graph, [0, 1], hops=2)
        dense = toy_graph.S.to_dense()
        np.testing.assert_allclose(S_sub.to_dense(),
                                   dense[np.ix_(nodes, nodes)], atol=1e-12)

    def test_subgraph_exactness(self):
        # unlimited budget, hops = 2L: sextet-node layer outputs on the
        # subgraph equal the full-graph outputs
        fm = generate_toy(60, 0.05, 1)
        g = build_mutual_knn(fm, k=5)
        params = init_params([2, 6, 4], seed=1, dropout_p=0.0)
        rng = make_rng(6)
        sx = sample_sextet(g, rng)
        H_full, _ = forward(fm.data, g.S, params)
        nodes, S_sub = bfs_subgraph(g, list(sx.nodes()), hops=2 * params.n_layers)
        H_sub, _ = forward(fm.data[nodes], S_sub, params)
        index_of = {int(v): r for r, v in enumerate(nodes)}
        for a in sx.nodes():
            for b in sx.nodes():
                s_full = cosine_similarity(H_full[a], H_full[b])
                s_sub = cosine_similarity(H_sub[index_of[a]], H_sub[index_of[b]])
                assert s_full == pytest.approx(s_sub, abs=1e-6)


class TestAdam:
    def _single(self):
        params = init_params([1, 1], seed=0, dropout_p=0.0)
        params.layers[0] = (np.array([[0.5]]), np.array([[0.25]]))
        return params, TrainState.for_params(params)

    def test_zero_gradient_fixed_point(self):
        params, state = self._single()
        before = [(w1.copy(), w2.copy()) for w1, w2 in params.layers]
        adam_step(params, [(np.zeros((1, 1)), np.zeros((1, 1)))], state, lr=0.1)
        for (w1, w2), (b1, b2) in zip(params.layers, before):
            np.testing.assert_array_equal(w1, b1)
            np.testing.assert_array_equal(w2, b2)

    def test_first_step_is_signed_lr(self):
        params, state = self._single()
        w_before = params.layers[0][0].copy()
        adam_step(params, [(np.array([[3.7]]), np.array([[-0.2]]))], state, lr=0.01)
        assert params.layers[0][0][0, 0] == pytest.approx(w_before[0, 0] - 0.01,
                                                          abs=1e-6)
        assert params.layers[0][1][0, 0] == pytest.approx(0.25 + 0.01, abs=1e-6)

    def test_two_steps_match_reference(self):
        params, state = self._single()
        g1 = (np.array([[1.0]]), np.array([[2.0]]))
        g2 = (np.array([[-0.5]]), np.array([[1.0]]))
        lr = 0.05
        adam_step(params, [g1], state, lr)
        adam_step(params, [g2], state, lr)
        # hand-rolled sequential Adam
        for slot, w0 in ((0, 0.5), (1, 0.25)):
            m = v = 0.0
            w = w0
            for t, g in enumerate((g1[slot][0, 0], g2[slot][0, 0]), start=1):
                m = 0.9 * m + 0.1 * g
                v = 0.999 * v + 0.001 * g * g
                m_hat = m / (1 - 0.9**t)
                v_hat = v / (1 - 0.999**t)
                w -= lr * m_hat / (math.sqrt(v_hat) + 1e-8)
            assert params.layers[0][slot][0, 0] == pytest.approx(w, abs=1e-12)


class TestLrSchedule:
    def test_values(self):
        assert lr_schedule(0) == pytest.approx(3e-4)
        assert lr_schedule(29) == pytest.approx(3e-4)
        assert lr_schedule(30) == pytest.approx(1.5e-4)
        assert lr_schedule(99) == pytest.approx(1.5e-4)
        assert lr_schedule(100) == pytest.approx(7.5e-5)

    def test_non_increasing(self):
        values = [lr_schedule(e) for e in range(200)]
        assert all(a >= b for a, b in zip(values, values[1:]))


class TestTrain:
    def _small_setup(self):
        fm = generate_toy(30, 0.05, 2)  # 120 nodes
        g = build_mutual_knn(fm, k=5)
        cfg = TrainConfig(dims=(8, 4), anchors=10, code_support=3, dropout=0.0,
                          batch_size=8, epochs=2, seed=3, node_budget=None,
                          log_stream=open("/dev/null", "w"))
        return fm, g, cfg

    def test_zero_epochs_equals_init(self):
        fm, g, cfg = self._small_setup()
        cfg.epochs = 0
        params, log = train(fm, g, None, cfg)
        reference = init_params([fm.d + cfg.anchors] + list(cfg.dims),
                                seed=cfg.seed, dropout_p=cfg.dropout)
        for (w1, w2), (r1, r2) in zip(params.layers, reference.layers):
            assert np.array_equal(w1, r1)
            assert np.array_equal(w2, r2)
        assert log == []

    def test_deterministic(self):
        fm, g, cfg = self._small_setup()
        a, _ = train(fm, g, None, cfg)
        b, _ = train(fm, g, None, cfg)
        for (w1, w2), (x1, x2) in zip(a.layers, b.layers):
            assert np.array_equal(w1, x1)
            assert np.array_equal(w2, x2)

    def test_loss_decreases_on_toy(self):
        raw = generate_toy(160, 0.1, 5)
        # standardize so the cosine affinities inside the model are not
        # dominated by the raw coordinate scale
        x = raw.data.astype(np.float64)
        x = (x - x.mean(axis=0)) / x.std()
        fm = FeatureMatrix(x.astype(np.float32), list(raw.ids), raw.labels)
        g = build_mutual_knn(fm, k=12)
        cfg = TrainConfig(dims=(16, 8), anchors=16, code_support=3, dropout=0.0,
                          batch_size=16, epochs=30, seed=0, node_budget=None,
                          base_lr=1e-3, log_stream=open("/dev/null", "w"))
        _, log = train(fm, g, None, cfg)
        first = np.mean([r["loss"] for r in log[:5]])
        last = np.mean([r["loss"] for r in log[-5:]])
        assert last < first

    def test_steps_per_epoch(self):
        assert steps_per_epoch(1500, 64) == math.ceil(1500 / 384)
        assert steps_per_epoch(5, 64) == 1
