import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from farelens import ensemble
from farelens.detectors import METHODS, DetectorScores
from farelens.ensemble import (CorrelationMatrix, RankVector, adaptive_weights,
                               combine, correlation_matrix, fuse, spearman,
                               to_ranks)


def ds(scores, method="iforest"):
    return DetectorScores(method=method, scores=np.asarray(scores, dtype=float),
                          diagnostics={})


def rv(ranks, method="m"):
    return RankVector(method=method, ranks=np.asarray(ranks, dtype=float))


def four_scores(rows):
    return [ds(row, method) for method, row in zip(METHODS, rows)]


class TestToRanks:
    def test_direct_ordering(self):
        assert to_ranks(ds([9, 5, 7])).ranks.tolist() == [1, 3, 2]

    def test_average_rank_ties(self):
        assert to_ranks(ds([4, 4, 1])).ranks.tolist() == [1.5, 1.5, 3]

    def test_all_equal(self):
        assert to_ranks(ds([2, 2, 2, 2])).ranks.tolist() == [2.5] * 4

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            to_ranks(ds([1.0, np.nan, 2.0]))


class TestSpearman:
    def test_identical_is_one(self):
        r = rv([3, 1, 4, 2, 5])
        assert spearman(r, r) == pytest.approx(1.0)

    def test_reversed_is_minus_one(self):
        assert spearman(rv([1, 2, 3, 4]), rv([4, 3, 2, 1])) == pytest.approx(-1.0)

    def test_worked_example(self):
        # d² sum = 2, ρ = 1 − 12/60 = 0.8
        assert spearman(rv([1, 2, 3, 4]), rv([1, 3, 2, 4])) == pytest.approx(0.8)

    def test_all_tied_vector_gives_zero(self):
        assert spearman(rv([2.5] * 4), rv([1, 2, 3, 4])) == 0.0

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_closed_form_on_tie_free_permutations(self, seed):
        rng = np.random.default_rng(seed)
        # 100 pairs per seed -> 1000 trials total
        for _ in range(100):
            n = int(rng.integers(2, 40))
            a = rng.permutation(n) + 1.0
            b = rng.permutation(n) + 1.0
            ours = spearman(rv(a), rv(b))
            assert ours == pytest.approx(oracles.spearman_closed_form(a, b),
                                         abs=1e-12)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            spearman(rv([1, 2]), rv([1, 2, 3]))


class TestAdaptiveWeights:
    def corr(self, rho):
        return CorrelationMatrix(methods=METHODS, rho=np.asarray(rho, dtype=float))

    def rho_from_ac(self, ac):
        """Any symmetric unit-diagonal matrix whose off-diag row means are ac."""
        m = len(ac)
        rho = np.eye(m)
        a = np.asarray(ac, dtype=float)
        idx = [(i, j) for i in range(m) for j in range(i + 1, m)]
        A = np.zeros((m, len(idx)))
        for k, (i, j) in enumerate(idx):
            A[i, k] = A[j, k] = 1.0 / (m - 1)
        vals, *_ = np.linalg.lstsq(A, a, rcond=None)
        for k, (i, j) in enumerate(idx):
            rho[i, j] = rho[j, i] = vals[k]
        return rho

    def test_worked_example(self):
        rho = self.rho_from_ac([0.9, 0.5, 0.5, 0.5])
        weights, fallback = adaptive_weights(self.corr(rho))
        assert not fallback
        assert weights == pytest.approx([0.0625, 0.3125, 0.3125, 0.3125])

    @pytest.mark.parametrize("c", [0.0, 0.3, 0.69, 0.99])
    def test_equal_pairwise_correlation_gives_quarter_weights(self, c):
        rho = np.full((4, 4), c)
        np.fill_diagonal(rho, 1.0)
        weights, fallback = adaptive_weights(self.corr(rho))
        assert not fallback
        assert weights == pytest.approx([0.25] * 4)

    def test_perfect_correlation_falls_back_equal(self):
        weights, fallback = adaptive_weights(self.corr(np.ones((4, 4))))
        assert fallback
        assert weights == pytest.approx([0.25] * 4)

    def test_negative_average_clamped_to_zero(self):
        rho = np.full((4, 4), -0.5)
        np.fill_diagonal(rho, 1.0)
        weights, _ = adaptive_weights(self.corr(rho))
        assert weights == pytest.approx([0.25] * 4)

    @given(st.lists(st.floats(-1, 1), min_size=6, max_size=6))
    @settings(max_examples=200, deadline=None)
    def test_weight_simplex(self, offdiag):
        rho = np.eye(4)
        idx = [(i, j) for i in range(4) for j in range(i + 1, 4)]
        for (i, j), v in zip(idx, offdiag):
            rho[i, j] = rho[j, i] = v
        weights, _ = adaptive_weights(self.corr(rho))
        assert np.all(weights >= 0.0)
        assert weights.sum() == pytest.approx(1.0, abs=1e-9)


class TestFuse:
    def test_weighted_average_arithmetic(self):
        # one station, ranks (2,1,3,4) with weights (0.4,0.3,0.2,0.1) -> 2.1
        vectors = [rv([2, 1], "a"), rv([1, 2], "b"), rv([3, 1], "c"), rv([4, 1], "d")]
        corr = correlation_matrix(vectors)
        result = fuse(vectors, np.array([0.4, 0.3, 0.2, 0.1]), corr)
        assert result.final_rank[0] == pytest.approx(0.8 + 0.3 + 0.6 + 0.4)

    def test_unanimous_top_scores_one(self):
        vectors = [rv([1, 2, 3], m) for m in METHODS]
        result = fuse(vectors, np.full(4, 0.25), correlation_matrix(vectors))
        assert result.anomaly_score[0] == pytest.approx(1.0)
        assert result.anomaly_score[2] == pytest.approx(0.0)

    def test_all_final_ranks_tied_gives_half(self):
        vectors = [rv([1, 2], "a"), rv([2, 1], "b")]
        result = fuse(vectors, np.array([0.5, 0.5]), correlation_matrix(vectors))
        assert result.anomaly_score.tolist() == [0.5, 0.5]
        assert result.flags["all_final_ranks_tied"]

    def test_linear_normalization(self):
        vectors = [rv([1, 2, 3], m) for m in METHODS]
        result = fuse(vectors, np.full(4, 0.25), correlation_matrix(vectors),
                      normalization="linear")
        assert result.anomaly_score.tolist() == [1.0, 0.5, 0.0]

    def test_redundancy_pairs_threshold(self):
        vectors = [rv([1, 2, 3, 4], "a"), rv([1, 2, 3, 4], "b"),
                   rv([1, 3, 2, 4], "c"), rv([4, 3, 2, 1], "d")]
        corr = correlation_matrix(vectors)
        result = fuse(vectors, np.full(4, 0.25), corr, redundancy_threshold=0.7)
        pairs = {(p[0], p[1]) for p in result.redundancy_pairs}
        assert ("a", "b") in pairs  # rho = 1.0
        assert ("a", "c") in pairs  # rho = 0.8
        assert ("a", "d") not in pairs  # rho = -1

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            fuse([rv([1, 2], "a"), rv([1, 2, 3], "b")], np.array([0.5, 0.5]),
                 CorrelationMatrix(("a", "b"), np.eye(2)))

    @pytest.mark.parametrize("seed", range(10))
    def test_monotonicity(self, seed):
        # improving one station's rank in one method never lowers its score
        rng = np.random.default_rng(seed)
        for _ in range(100):
            n = int(rng.integers(3, 20))
            base = [rv(rng.permutation(n) + 1.0, m) for m in METHODS]
            weights = rng.dirichlet(np.ones(4))
            corr = correlation_matrix(base)
            before = fuse(base, weights, corr)
            which = int(rng.integers(4))
            station = int(rng.integers(n))
            improved = [RankVector(v.method, v.ranks.copy()) for v in base]
            improved[which].ranks[station] = max(
                1.0, improved[which].ranks[station] - rng.uniform(0.0, n))
            after = fuse(improved, weights, corr)
            if weights[which] > 0:
                assert (after.anomaly_score[station]
                        >= before.anomaly_score[station] - 1e-12)


class TestCombine:
    def test_requires_all_four_methods(self):
        with pytest.raises(ValueError):
            combine([ds([1, 2, 3], "iforest")])

    def test_argmax_stable_under_monotone_transform(self, rng):
        rows = [rng.random(30) for _ in METHODS]
        base = combine(four_scores(rows))
        transformed = [np.exp(3 * rows[0]), rows[1], rows[2], rows[3]]
        after = combine(four_scores(transformed))
        assert np.array_equal(base.final_rank, after.final_rank)
        assert np.array_equal(base.anomaly_score, after.anomaly_score)
        assert np.array_equal(base.weights, after.weights)

    def test_method_order_canonical(self, rng):
        rows = [rng.random(10) for _ in METHODS]
        scores = four_scores(rows)
        shuffled = [scores[2], scores[0], scores[3], scores[1]]
        assert np.array_equal(combine(scores).anomaly_score,
                              combine(shuffled).anomaly_score)
        assert combine(shuffled).methods == METHODS

    def test_degenerate_method_flagged_not_fatal(self, rng):
        rows = [rng.random(10) for _ in METHODS[:3]] + [np.zeros(10)]
        result = combine(four_scores(rows))
        assert "mahalanobis" in result.correlation.degenerate_methods
        assert np.all(np.isfinite(result.anomaly_score))
