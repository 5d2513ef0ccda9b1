import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from influcast.baselines import uniform_estimator
from influcast.evaluation import (GroundTruth, bernoulli_kl, compositive,
                                  estimate_ground_truth,
                                  influence_susceptibility_histogram,
                                  matrix_difference, mkl, model_rank_cases, mrr,
                                  observed_rank_cases, random_guess_r_mrr,
                                  rank_of_truth, split_observed_hidden,
                                  synthetic_ground_truth)
from influcast.im import IMModel

from conftest import make_exposures, make_model, make_net


class TestGroundTruth:
    def test_ratio(self):
        expo = make_exposures([("v", ["u"], 3, {"u": 1})])
        truth = estimate_ground_truth(expo)
        assert truth.entries[("v", ("u",))] == (pytest.approx(0.25), 4)

    def test_zero_successes(self):
        expo = make_exposures([("v", ["u"], 5, {})])
        assert estimate_ground_truth(expo).entries[("v", ("u",))][0] == 0.0

    def test_min_support_filters(self):
        expo = make_exposures([("v", ["u"], 3, {"u": 1}), ("w", ["u"], 2, {"u": 1})])
        truth = estimate_ground_truth(expo, min_support=4)
        assert ("v", ("u",)) in truth.entries and ("w", ("u",)) not in truth.entries

    def test_synthetic_exact(self):
        model = IMModel(node_index={"u": 0, "v": 1}, I=np.array([[100.0], [0.0]]),
                        S=np.array([[0.0], [1.0]]), lam=0.01, k=1)
        truth = synthetic_ground_truth(model, [("v", ("u",))])
        assert truth.entries[("v", ("u",))][0] == pytest.approx(1 - math.exp(-1))
        again = synthetic_ground_truth(model, [("v", ("u",))])
        assert again.entries == truth.entries


class TestBernoulliKL:
    def test_identity_is_zero(self):
        assert bernoulli_kl(0.3, 0.3) == pytest.approx(0.0, abs=1e-12)

    def test_hand_value(self):
        assert bernoulli_kl(0.5, 0.25) == pytest.approx(0.14384, abs=1e-5)

    def test_zero_p_boundary(self):
        eps = 1e-9
        assert bernoulli_kl(0.0, 0.0) == pytest.approx(-math.log1p(-eps), rel=1e-6)
        assert bernoulli_kl(0.0, eps) == pytest.approx(eps, rel=1e-3)

    def test_one_p_boundary(self):
        assert bernoulli_kl(1.0, 1.0) == pytest.approx(-math.log1p(-1e-9), rel=1e-6)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    def test_nonnegative(self, p, q):
        assert bernoulli_kl(p, q) >= -1e-12

    def test_zero_iff_equal_on_grid(self):
        grid = np.linspace(0.01, 0.99, 25)
        for p in grid:
            for q in grid:
                kl = bernoulli_kl(float(p), float(q))
                if abs(p - q) < 1e-12:
                    assert kl == pytest.approx(0.0, abs=1e-12)
                else:
                    assert kl > 0.0


class TestMKL:
    def truth_one_pair(self):
        return GroundTruth(entries={("v", ("u",)): (0.5, 4)})

    def test_perfect_predictor(self):
        assert mkl(self.truth_one_pair(), uniform_estimator(0.5)) == pytest.approx(0.0, abs=1e-9)

    def test_single_pair_hand_value(self):
        assert mkl(self.truth_one_pair(), uniform_estimator(0.25)) == pytest.approx(0.14384, abs=1e-5)

    def test_empty_truth_rejected(self):
        with pytest.raises(ValueError):
            mkl(GroundTruth(), uniform_estimator(0.5))

    def test_order_invariant_mean(self):
        entries = {("v", ("a",)): (0.2, 1), ("w", ("b",)): (0.6, 1), ("x", ("c",)): (0.9, 1)}
        a = mkl(GroundTruth(entries=entries), uniform_estimator(0.4))
        b = mkl(GroundTruth(entries=dict(reversed(list(entries.items())))), uniform_estimator(0.4))
        assert a == pytest.approx(b, rel=1e-12)


class TestSplitObservedHidden:
    def test_rules(self):
        train_net = make_net([("a", "v"), ("b", "v")])
        pairs = [("v", ("a",)), ("v", ("c",)), ("v", ("a", "b")), ("v", ("a", "c"))]
        observed, hidden = split_observed_hidden(train_net, pairs)
        assert observed == [("v", ("a",)), ("v", ("a", "b"))]
        assert hidden == [("v", ("c",)), ("v", ("a", "c"))]


class TestCompositiveAndMRR:
    def test_compositive_values(self):
        assert compositive(0.0, 0.0) == 0.0
        assert compositive(3.0, 4.0) == pytest.approx(5.0)
        assert compositive(7.5, 0.0) == pytest.approx(7.5)

    def test_mrr_values(self):
        assert mrr([1, 1, 1]) == (pytest.approx(1.0), pytest.approx(0.0))
        value, reverse = mrr([1, 2])
        assert value == pytest.approx(0.75) and reverse == pytest.approx(0.25)

    def test_mrr_empty_rejected(self):
        with pytest.raises(ValueError):
            mrr([])
        with pytest.raises(ValueError):
            mrr([0, 1])

    def test_random_guess_expectation(self):
        from influcast.evaluation import RankCase
        cases = [RankCase("v", ("a", "b"), "a", 1), RankCase("w", ("a", "b", "c"), "b", 2)]
        expected = 1.0 - ((0.75 + 2 * ((1 + 0.5 + 1 / 3) / 3)) / 3)
        assert random_guess_r_mrr(cases) == pytest.approx(expected)


class TestRankCases:
    def expo(self):
        return make_exposures([
            ("v", ["a", "b"], 2, {"a": 2, "b": 1}),
            ("w", ["a"], 1, {"a": 1}),          # singleton: excluded
            ("x", ["a", "b", "c"], 4, {}),       # failures only
        ])

    def test_observed_cases_use_parents(self):
        cases = observed_rank_cases(self.expo())
        assert {(c.v, c.u_star, c.weight) for c in cases} == {("v", "a", 2), ("v", "b", 1)}

    def test_model_cases_cover_failures(self):
        model = make_model(["a", "b", "c", "v", "w", "x"], k=2, seed=3)
        cases = model_rank_cases(self.expo(), model)
        by_v = {c.v: c for c in cases}
        assert by_v["v"].weight == 5 and by_v["x"].weight == 4
        assert "w" not in by_v

    def test_rank_of_truth_expands_weights(self):
        model = make_model(["a", "b", "v"], k=2, seed=1)
        cases = observed_rank_cases(make_exposures([("v", ["a", "b"], 0, {"a": 3})]))
        ranks = rank_of_truth(cases, uniform_estimator(0.5))
        assert len(ranks) == 3 and set(ranks) == {1}  # tie broken toward 'a'


class TestMatrixDifference:
    def test_column_permutation_is_zero(self, rng):
        A = rng.uniform(size=(7, 4))
        B = A[:, [2, 0, 3, 1]]
        assert matrix_difference(A, B) == pytest.approx(0.0, abs=1e-12)

    def test_k1_plain_l1(self, rng):
        A = rng.uniform(size=(9, 1))
        B = rng.uniform(size=(9, 1))
        assert matrix_difference(A, B) == pytest.approx(np.abs(A - B).sum())

    def test_matches_factorial_enumeration(self, rng):
        for _ in range(50):
            k = int(rng.integers(2, 7))
            A = rng.uniform(size=(5, k))
            B = rng.uniform(size=(5, k))
            brute = min(
                sum(np.abs(A[:, j] - B[:, perm[j]]).sum() for j in range(k))
                for perm in itertools.permutations(range(k)))
            assert matrix_difference(A, B) == pytest.approx(brute, rel=1e-10)

    def test_metric_properties(self, rng):
        A, B, C = (rng.uniform(size=(6, 3)) for _ in range(3))
        dab = matrix_difference(A, B)
        assert dab == pytest.approx(matrix_difference(B, A), rel=1e-12)
        assert dab >= 0.0
        assert dab <= matrix_difference(A, C) + matrix_difference(C, B) + 1e-9

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            matrix_difference(np.zeros((2, 2)), np.zeros((2, 3)))


class TestHistogram:
    def test_zero_model_mass_at_origin(self):
        model = IMModel(node_index={"a": 0, "b": 1}, I=np.zeros((2, 3)),
                        S=np.zeros((2, 3)), lam=0.01, k=3)
        counts, _, _ = influence_susceptibility_histogram(model, bins=5)
        assert counts[0, 0] == 2 and counts.sum() == 2

    def test_conserves_node_count(self):
        model = make_model([f"n{i}" for i in range(40)], k=4, seed=8)
        counts, x_edges, y_edges = influence_susceptibility_histogram(model, bins=7)
        assert counts.sum() == 40
        assert len(x_edges) == 8 and x_edges[0] == 0.0

    def test_l2_flag(self):
        model = make_model(["a", "b", "c"], k=2, seed=2)
        counts, _, _ = influence_susceptibility_histogram(model, bins=3, norm="l2")
        assert counts.sum() == 3
        with pytest.raises(ValueError):
            influence_susceptibility_histogram(model, bins=3, norm="l7")
