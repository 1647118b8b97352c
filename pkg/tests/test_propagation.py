import numpy as np
import pytest

from blockwalk.anchor_tree import build_cluster_tree
from blockwalk.dataset import LabelSet, smooth
from blockwalk.divergence import DivergenceSpec
from blockwalk.partition import auto_refine, coarsest_partition, finest_partition
from blockwalk.propagation import (
    PropagationConfig,
    TransitionModel,
    blocked_matvec,
    classify_one_vs_all,
    dense_q_matrix,
    dense_transition_matrix,
    evaluate_accuracy,
    propagate_labels,
)
from blockwalk.variational import optimize_q

from conftest import smoothed_counts
from oracles import closed_form_propagation
from test_anchor_tree import dense_to_data


def build_model(rng, n=24, d=5, kind="gid", partition="coarsest"):
    data = smoothed_counts(rng, n, d, epsilon=0.5)
    spec = DivergenceSpec(kind, d, epsilon=0.5)
    tree = build_cluster_tree(data, spec)
    if partition == "coarsest":
        part = coarsest_partition(tree)
    elif partition == "finest":
        part = finest_partition(tree)
    else:
        part = auto_refine(coarsest_partition(tree), tree, 5)
    params = optimize_q(tree, part, spec, data)
    return TransitionModel(tree, part, params, spec), data, spec


class TestBlockedMatvec:
    def test_ones_maps_to_ones(self, rng):
        model, _, _ = build_model(rng)
        out = blocked_matvec(model, np.ones(model.n_points))
        np.testing.assert_allclose(out, 1.0, atol=1e-9)

    def test_matches_dense_expansion(self, rng):
        for partition in ("coarsest", "refined", "finest"):
            model, _, _ = build_model(rng, n=20, partition=partition)
            q = dense_q_matrix(model)
            for _ in range(5):
                v = rng.normal(size=model.n_points)
                np.testing.assert_allclose(
                    blocked_matvec(model, v), q @ v, atol=1e-10
                )

    def test_linearity(self, rng):
        model, _, _ = build_model(rng)
        u = rng.normal(size=model.n_points)
        w = rng.normal(size=model.n_points)
        lhs = blocked_matvec(model, 2 * u + 3 * w)
        rhs = 2 * blocked_matvec(model, u) + 3 * blocked_matvec(model, w)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_length_mismatch(self, rng):
        model, _, _ = build_model(rng)
        with pytest.raises(ValueError, match="length"):
            blocked_matvec(model, np.ones(model.n_points + 1))

    def test_implied_q_row_stochastic_zero_diagonal(self, rng):
        for partition in ("coarsest", "refined"):
            model, _, _ = build_model(rng, n=18, partition=partition)
            q = dense_q_matrix(model)
            np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-9)
            np.testing.assert_array_equal(np.diag(q), 0.0)


class TestDenseTransitionMatrix:
    def test_two_points(self):
        data = smooth(dense_to_data(np.array([[0.0, 1.0], [1.0, 0.0]])), 0.5)
        spec = DivergenceSpec("gid", 2, epsilon=0.5)
        base = dense_transition_matrix(data, spec)
        np.testing.assert_allclose(base.p, [[0.0, 1.0], [1.0, 0.0]], atol=1e-15)

    def test_equilateral_triangle(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]])
        data = smooth(dense_to_data(pts + 1.0), 0.0)  # shift off zero, same geometry
        spec = DivergenceSpec("sq-euclidean", 2, sigma=1.0)
        base = dense_transition_matrix(data, spec)
        off = base.p[~np.eye(3, dtype=bool)]
        np.testing.assert_allclose(off, 0.5, atol=1e-12)

    def test_rows_sum_to_one(self, rng):
        data = smoothed_counts(rng, 30, 6)
        spec = DivergenceSpec("gid", 6, epsilon=0.5)
        base = dense_transition_matrix(data, spec)
        np.testing.assert_allclose(base.p.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_array_equal(np.diag(base.p), 0.0)

    def test_huge_separation_no_overflow(self):
        data = smooth(dense_to_data(np.array([[0.0], [150.0], [300.0]])), 0.0)
        spec = DivergenceSpec("sq-euclidean", 1, sigma=1.0)
        base = dense_transition_matrix(data, spec)
        assert np.all(np.isfinite(base.p))
        np.testing.assert_allclose(base.p.sum(axis=1), 1.0, atol=1e-12)

    def test_cap_guard(self, rng):
        data = smoothed_counts(rng, 10, 3)
        with pytest.raises(ValueError, match="cap"):
            dense_transition_matrix(data, DivergenceSpec("gid", 3, epsilon=0.5), cap=5)

    def test_blockwise_equals_whole(self, rng):
        data = smoothed_counts(rng, 25, 5)
        spec = DivergenceSpec("gid", 5, epsilon=0.5)
        a = dense_transition_matrix(data, spec, block_rows=7)
        b = dense_transition_matrix(data, spec, block_rows=512)
        np.testing.assert_allclose(a.p, b.p, atol=1e-15)


class TestPropagation:
    def test_alpha_zero_returns_y0(self, rng):
        model, _, _ = build_model(rng)
        y0 = rng.random((model.n_points, 3))
        out = propagate_labels(model, y0, PropagationConfig(alpha=0.0, iterations=17))
        np.testing.assert_array_equal(out, y0)

    def test_identity_operator_fixed_point(self, rng):
        n = 10
        y0 = rng.random((n, 2))
        out = propagate_labels(
            np.eye(n), y0, PropagationConfig(alpha=0.01, iterations=300)
        )
        np.testing.assert_allclose(out, y0, atol=1e-12)

    def test_defaults(self):
        cfg = PropagationConfig()
        assert cfg.alpha == 0.01 and cfg.iterations == 300

    def test_matches_closed_form_dense(self, rng):
        data = smoothed_counts(rng, 20, 5)
        spec = DivergenceSpec("gid", 5, epsilon=0.5)
        base = dense_transition_matrix(data, spec)
        y0 = np.zeros((20, 3))
        for i in range(6):
            y0[i, i % 3] = 1.0
        got = propagate_labels(base, y0, PropagationConfig())
        want = closed_form_propagation(base.p, y0, 0.01)
        np.testing.assert_allclose(got, want, atol=1e-10)

    def test_matches_closed_form_blocked(self, rng):
        model, _, _ = build_model(rng, n=20)
        q = dense_q_matrix(model)
        y0 = np.zeros((20, 2))
        y0[0, 0] = 1.0
        y0[5, 1] = 1.0
        got = propagate_labels(model, y0, PropagationConfig())
        want = closed_form_propagation(q, y0, 0.01)
        np.testing.assert_allclose(got, want, atol=1e-10)

    def test_blocked_finest_equals_dense(self, rng):
        model, data, spec = build_model(rng, n=24, partition="finest")
        base = dense_transition_matrix(data, spec)
        y0 = np.zeros((24, 2))
        y0[0, 0] = 1.0
        y0[3, 1] = 1.0
        cfg = PropagationConfig()
        a = propagate_labels(model, y0, cfg)
        b = propagate_labels(base, y0, cfg)
        np.testing.assert_allclose(a, b, atol=1e-8)

    def test_entries_stay_in_unit_interval(self, rng):
        model, _, _ = build_model(rng, n=30)
        y0 = np.zeros((30, 3))
        for i in range(9):
            y0[i, i % 3] = 1.0
        y = propagate_labels(model, y0, PropagationConfig(alpha=0.2, iterations=50))
        assert y.min() >= -1e-15 and y.max() <= 1.0 + 1e-12

    def test_shape_errors(self, rng):
        model, _, _ = build_model(rng)
        with pytest.raises(ValueError):
            propagate_labels(model, np.ones((model.n_points, 0)))
        with pytest.raises(ValueError):
            propagate_labels(model, np.ones((model.n_points + 2, 2)))

    def test_determinism(self, rng):
        model, _, _ = build_model(rng)
        y0 = np.zeros((model.n_points, 2))
        y0[1, 0] = 1.0
        y0[2, 1] = 1.0
        a = propagate_labels(model, y0, PropagationConfig())
        b = propagate_labels(model, y0, PropagationConfig())
        assert np.array_equal(a, b)


class TestClassify:
    def test_argmax(self):
        classes, unreached = classify_one_vs_all(np.array([[0.1, 0.9], [0.8, 0.1]]))
        assert classes.tolist() == [1, 0]
        assert not unreached.any()

    def test_tie_lowest_class(self):
        classes, _ = classify_one_vs_all(np.array([[0.5, 0.5]]))
        assert classes.tolist() == [0]

    def test_all_zero_flagged_unreached(self):
        classes, unreached = classify_one_vs_all(np.array([[0.0, 0.0], [0.0, 0.1]]))
        assert classes.tolist() == [0, 1]
        assert unreached.tolist() == [True, False]


class TestAccuracy:
    def setup_method(self):
        self.ids = ["a", "b", "c", "d"]
        self.truth = LabelSet({"a": 0, "b": 1, "c": 0, "d": 1}, ["x", "y"])

    def test_perfect(self):
        assert evaluate_accuracy([0, 1, 0, 1], self.truth, self.ids, {"a"}) == 1.0

    def test_all_wrong(self):
        assert evaluate_accuracy([1, 0, 1, 0], self.truth, self.ids, {"a"}) == 0.0

    def test_correct_only_on_labeled_rows(self):
        # right on the labeled row, wrong elsewhere: labeled rows are excluded
        assert evaluate_accuracy([0, 0, 1, 0], self.truth, self.ids, {"a"}) == 0.0

    def test_all_labeled_rejected(self):
        with pytest.raises(ValueError, match="labeled"):
            evaluate_accuracy([0, 1, 0, 1], self.truth, self.ids, set(self.ids))

    def test_missing_truth_rejected(self):
        truth = LabelSet({"a": 0}, ["x"])
        with pytest.raises(ValueError, match="missing"):
            evaluate_accuracy([0, 0, 0, 0], truth, self.ids, {"a"})
