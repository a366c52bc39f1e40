import numpy as np
import pytest

from jlct.data import VariableRoles
from jlct.errors import JlctError
from jlct.splitting import (
    SplitControls,
    best_split,
    enumerate_thresholds,
    node_test,
)

from conftest import grid_search_coefficient, make_ltrc, oracle_partial_loglik


def roles_for(split_vars, survival_vars=()):
    return VariableRoles(
        subject_col="ID", time_col="t", outcome_col="y",
        event_time_col="T", status_col="delta",
        split_vars=split_vars, survival_vars=survival_vars,
    )


def outcome_driven_node(rng, n=50, effect=2.0):
    """Hazard proportional to exp(effect * y): strong y-survival link."""
    y = rng.normal(0, 1, n)
    T = rng.exponential(1.0 / np.exp(effect * y))
    x1 = rng.uniform(0, 1, n)
    return make_ltrc(
        np.zeros(n), T, np.ones(n, dtype=int),
        np.column_stack([x1]), names=("x1",), outcome=y,
    )


def independent_node(rng, n=200):
    y = rng.normal(0, 1, n)
    T = rng.exponential(1.0, n)
    x1 = rng.uniform(0, 1, n)
    return make_ltrc(
        np.zeros(n), T, np.ones(n, dtype=int),
        np.column_stack([x1]), names=("x1",), outcome=y,
    )


class TestNodeTest:
    def test_strong_association_gives_large_ts(self, rng):
        data = outcome_driven_node(rng)
        controls = SplitControls()
        result = node_test(data, (), controls)
        assert result.valid
        assert result.ts > 3.84
        # grid-search oracle: TS = 2 * (max_b loglik(b) - loglik at null)
        _, ll_max = grid_search_coefficient(
            data.L, data.R, data.status, data.outcome
        )
        ll_null = oracle_partial_loglik(data.L, data.R, data.status, data.outcome, 0.0)
        assert result.ts == pytest.approx(2 * (ll_max - ll_null), abs=1e-3)

    def test_too_few_events(self):
        data = make_ltrc([0, 0, 0], [1, 2, 3], [1, 1, 0], [[0.1], [0.2], [0.3]],
                         names=("x1",), outcome=[0.5, 1.0, 0.2])
        controls = SplitControls(min_events=3)
        result = node_test(data, (), controls)
        assert not result.valid
        assert result.reason == "too-few-events"
        assert result.ts == 0.0

    def test_degenerate_outcome(self, rng):
        data = independent_node(rng, n=20)
        import dataclasses

        flat = dataclasses.replace(data, outcome=np.ones(20))
        result = node_test(flat, (), SplitControls(min_events=1))
        assert not result.valid
        assert result.reason == "degenerate-design"

    def test_variance_bound_violation(self, rng):
        data = independent_node(rng, n=30)
        result = node_test(data, (), SplitControls(min_events=1, variance_bound=1e-9))
        assert not result.valid
        assert result.reason == "variance-bound"

    def test_null_scenario_calibration_smoke(self, rng):
        rejections = 0
        runs = 60
        for _ in range(runs):
            data = independent_node(rng, n=150)
            result = node_test(data, (), SplitControls(min_events=1))
            if result.valid and result.ts >= 3.84:
                rejections += 1
        assert rejections / runs < 0.18

    def test_ts_nonnegative_and_clamped(self, rng):
        for _ in range(10):
            data = independent_node(rng, n=40)
            result = node_test(data, (), SplitControls(min_events=1))
            assert result.ts >= 0.0


class TestEnumerateThresholds:
    def test_binary(self):
        data = make_ltrc([0, 0], [1, 2], [1, 1], [[0.0], [1.0]], names=("x1",))
        assert np.allclose(enumerate_thresholds(data, "x1"), [0.5])

    def test_ordinal(self):
        data = make_ltrc([0] * 5, [1, 2, 3, 4, 5], [1] * 5,
                         [[1.0], [2.0], [3.0], [4.0], [5.0]], names=("x1",))
        assert np.allclose(enumerate_thresholds(data, "x1"), [1.5, 2.5, 3.5, 4.5])

    def test_constant(self):
        data = make_ltrc([0, 0], [1, 2], [1, 1], [[7.0], [7.0]], names=("x1",))
        assert enumerate_thresholds(data, "x1").size == 0


def two_class_node(rng, n=300):
    """Latent split at x1 = 0.5: different outcome level and hazard."""
    x1 = rng.uniform(0, 1, n)
    cls = (x1 > 0.5).astype(int)
    y = 2.0 * cls + rng.normal(0, 0.2, n)
    rate = np.where(cls == 1, 3.0, 0.5)
    T = rng.exponential(1.0 / rate)
    x2 = rng.uniform(0, 1, n)
    return make_ltrc(
        np.zeros(n), T, np.ones(n, dtype=int),
        np.column_stack([x1, x2]), names=("x1", "x2"), outcome=y,
    )


class TestBestSplit:
    def test_recovers_generating_threshold(self, rng):
        data = two_class_node(rng)
        controls = SplitControls(min_events=2)
        parent = node_test(data, (), controls)
        assert parent.valid and parent.ts >= controls.stop_threshold
        cand = best_split(data, roles_for(("x1", "x2")), controls, parent)
        assert cand is not None
        assert cand.variable == "x1"
        assert 0.4 <= cand.threshold <= 0.6
        assert cand.left_test.valid and cand.right_test.valid

    def test_children_partition_rows(self, rng):
        data = two_class_node(rng, n=120)
        controls = SplitControls(min_events=2)
        parent = node_test(data, (), controls)
        cand = best_split(data, roles_for(("x1", "x2")), controls, parent)
        assert cand.left_test.n_rows + cand.right_test.n_rows == data.n_rows

    def test_duplicate_column_tie_break(self, rng):
        data = two_class_node(rng, n=150)
        dup = make_ltrc(
            data.L, data.R, data.status,
            np.column_stack([data.column("x1"), data.column("x1")]),
            names=("a_first", "b_second"), outcome=data.outcome,
        )
        controls = SplitControls(min_events=2)
        parent = node_test(dup, (), controls)
        cand = best_split(dup, roles_for(("a_first", "b_second")), controls, parent)
        assert cand.variable == "a_first"

    def test_screens_can_exhaust_candidates(self, rng):
        data = two_class_node(rng, n=80)
        controls = SplitControls(min_events=50)  # impossible for any child
        parent = node_test(data, (), controls)
        assert parent.valid and parent.ts >= controls.stop_threshold
        cand = best_split(data, roles_for(("x1", "x2")), controls, parent)
        assert cand is None

    def test_invalid_parent_rejected(self, rng):
        data = independent_node(rng, n=50)
        controls = SplitControls(min_events=1)
        parent = node_test(data, (), controls)
        import dataclasses

        bad = dataclasses.replace(parent, valid=False)
        with pytest.raises(JlctError):
            best_split(data, roles_for(("x1",)), controls, bad)

    def test_monotone_transform_preserves_partition(self, rng):
        data = two_class_node(rng, n=200)
        controls = SplitControls(min_events=2)
        parent = node_test(data, (), controls)
        cand = best_split(data, roles_for(("x1", "x2")), controls, parent)

        warped = make_ltrc(
            data.L, data.R, data.status,
            np.column_stack([np.exp(data.column("x1")), data.column("x2")]),
            names=("x1", "x2"), outcome=data.outcome,
        )
        parent_w = node_test(warped, (), controls)
        assert parent_w.ts == pytest.approx(parent.ts, abs=1e-6)
        cand_w = best_split(warped, roles_for(("x1", "x2")), controls, parent_w)
        assert cand_w.variable == cand.variable
        left = data.column("x1") <= cand.threshold
        left_w = warped.column("x1") <= cand_w.threshold
        assert np.array_equal(left, left_w)
        assert cand_w.score == pytest.approx(cand.score, abs=1e-5)

    def test_deterministic(self, rng):
        data = two_class_node(rng, n=150)
        controls = SplitControls(min_events=2)
        parent = node_test(data, (), controls)
        c1 = best_split(data, roles_for(("x1", "x2")), controls, parent)
        c2 = best_split(data, roles_for(("x1", "x2")), controls, parent)
        assert (c1.variable, c1.threshold, c1.score) == (c2.variable, c2.threshold, c2.score)


class TestControls:
    def test_defaults_resolve_min_events(self):
        controls = SplitControls()
        assert controls.resolved_min_events(("a", "b", "c")) == 4
        assert controls.resolved_min_events(()) == 1
        assert SplitControls(min_events=7).resolved_min_events(("a",)) == 7

    def test_positivity_enforced(self):
        with pytest.raises(JlctError):
            SplitControls(min_node_rows=0)
        with pytest.raises(JlctError):
            SplitControls(variance_bound=0)
        with pytest.raises(JlctError):
            SplitControls(max_terminal_nodes=0)
