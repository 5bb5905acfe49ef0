import numpy as np
import pytest

from gradnet.evalmetrics import (MetricError, average_precision, bullseye,
                                 mean_average_precision)
from gradnet.retrieval import Ranking


def ranking(qid, ids):
    return Ranking(qid, list(ids), np.linspace(1.0, 0.0, len(ids)))


def ap_oracle(ranked, positives):
    """Direct transcription of the AP definition."""
    hits, total = 0, 0.0
    for pos, inst in enumerate(ranked, start=1):
        if inst in positives:
            hits += 1
            total += hits / pos
    return total / len(positives)


class TestAveragePrecision:
    def test_perfect_ranking(self):
        assert average_precision(["a", "b", "c"], {"a", "b"}) == pytest.approx(1.0)

    def test_interleaved(self):
        got = average_precision(["a", "x", "b"], {"a", "b"})
        assert got == pytest.approx((1.0 + 2.0 / 3.0) / 2.0, abs=1e-9)

    def test_random_vs_oracle(self):
        rng = np.random.default_rng(0)
        ids = [f"i{j}" for j in range(50)]
        for _ in range(20):
            perm = list(rng.permutation(ids))
            positives = set(rng.choice(ids, size=8, replace=False).tolist())
            assert average_precision(perm, positives) == pytest.approx(
                ap_oracle(perm, positives), abs=1e-9)

    def test_junk_removed(self):
        got = average_precision(["j", "a", "b"], {"a", "b"}, junk={"j"})
        assert got == pytest.approx(1.0)

    def test_empty_positives(self):
        with pytest.raises(MetricError):
            average_precision(["a"], set())

    def test_monotone_promotion(self):
        base = ["x", "a", "y", "b"]
        promoted = ["a", "x", "y", "b"]
        positives = {"a", "b"}
        assert (average_precision(promoted, positives)
                >= average_precision(base, positives))


class TestMeanAveragePrecision:
    def test_single_query(self):
        r = ranking("q", ["a", "x", "b"])
        gt = {"q": {"a", "b"}}
        assert mean_average_precision([r], gt) == pytest.approx(
            100.0 * ap_oracle(r.instance_ids, gt["q"]), abs=1e-9)

    def test_two_query_mean(self):
        r1 = ranking("q1", ["a", "b"])       # AP 1.0
        r2 = ranking("q2", ["x", "a"])       # AP 0.5
        gt = {"q1": {"a"}, "q2": {"a"}}
        assert mean_average_precision([r1, r2], gt) == pytest.approx(75.0)

    def test_many_queries_vs_oracle(self):
        rng = np.random.default_rng(1)
        ids = [f"i{j}" for j in range(30)]
        rankings, gt = [], {}
        for q in range(55):
            perm = list(rng.permutation(ids))
            positives = set(rng.choice(ids, size=5, replace=False).tolist())
            rankings.append(ranking(f"q{q}", perm))
            gt[f"q{q}"] = positives
        expected = 100.0 * np.mean([ap_oracle(r.instance_ids, gt[r.query_id])
                                    for r in rankings])
        assert mean_average_precision(rankings, gt) == pytest.approx(expected)

    def test_missing_ground_truth(self):
        with pytest.raises(MetricError):
            mean_average_precision([ranking("q", ["a"])], {})


class TestBullseye:
    def _labels(self):
        # 3 classes of 4 instances each
        return {f"c{c}_{i}": c for c in range(3) for i in range(4)}

    def test_saturated_window(self):
        labels = self._labels()
        # query c0_0; all other class members in the top of the window
        r = ranking("c0_0", ["c0_1", "c0_2", "c0_3", "c1_0", "c2_0"])
        assert bullseye([r], labels, K=6) == pytest.approx(100.0)

    def test_full_window_is_100(self):
        labels = self._labels()
        others = [k for k in labels if k != "c1_0"]
        r = ranking("c1_0", others)
        assert bullseye([r], labels, K=len(labels)) == pytest.approx(100.0)

    def test_counts_query_as_hit(self):
        labels = self._labels()
        # window K=2: query itself + rank-1 instance
        r = ranking("c0_0", ["c0_1", "c1_0", "c2_0"])
        assert bullseye([r], labels, K=2) == pytest.approx(100.0 * 2 / 4)

    def test_non_decreasing_in_k(self):
        rng = np.random.default_rng(2)
        labels = self._labels()
        others = [k for k in labels if k != "c2_1"]
        r = ranking("c2_1", list(rng.permutation(others)))
        values = [bullseye([r], labels, K) for K in range(1, len(labels) + 1)]
        assert all(a <= b + 1e-12 for a, b in zip(values, values[1:]))

    def test_bounds(self):
        rng = np.random.default_rng(3)
        labels = self._labels()
        others = [k for k in labels if k != "c0_2"]
        r = ranking("c0_2", list(rng.permutation(others)))
        for K in (1, 3, 7):
            v = bullseye([r], labels, K)
            assert 0.0 <= v <= 100.0
