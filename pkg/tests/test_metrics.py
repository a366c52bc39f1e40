import numpy as np
import pytest
from scipy.integrate import quad

from jlct.curves import StepCurve
from jlct.errors import CoverageError, JlctError, ShapeError, UnknownClassError
from jlct.metrics import MetricReport, acc_g, brier, ibs, ise, kfold_cv, mse_b, mse_y

from conftest import make_long


class SmoothCurve:
    def __init__(self, fn):
        self.fn = fn

    def at(self, grid):
        return self.fn(np.asarray(grid, dtype=float))

    def breakpoints(self):
        return np.empty(0)


def flat(value, horizon=np.inf):
    return StepCurve(knots=[0.0], values=[value], horizon=horizon)


class TestIse:
    def test_perfect_prediction(self):
        curves = [flat(0.7)] * 3
        assert ise(curves, curves, horizon=5.0) == 0.0

    def test_maximal_divergence(self):
        pred = [flat(1.0)]
        true = [flat(0.0)]
        assert ise(pred, true, horizon=5.0) == pytest.approx(1.0, abs=1e-6)

    def test_exponential_gap_matches_quadrature(self):
        pred = [SmoothCurve(lambda t: np.exp(-t))]
        true = [SmoothCurve(lambda t: np.exp(-2 * t))]
        got = ise(pred, true, horizon=5.0)
        oracle, _ = quad(lambda t: (np.exp(-t) - np.exp(-2 * t)) ** 2, 0, 5)
        assert got == pytest.approx(oracle / 5.0, abs=1e-4)

    def test_misaligned_lists(self):
        with pytest.raises(ShapeError):
            ise([flat(1.0)], [flat(1.0)] * 2, horizon=1.0)

    def test_coverage_error(self):
        short = StepCurve(knots=[0.5], values=[0.9], horizon=1.0)
        with pytest.raises(CoverageError):
            ise([short], [flat(1.0)], horizon=2.0)


class TestMseY:
    def test_zero(self):
        y = np.arange(5.0)
        assert mse_y(y, y) == 0.0

    def test_constant_offset(self):
        y = np.arange(5.0)
        assert mse_y(y + 0.3, y) == pytest.approx(0.09)

    def test_hand_sum(self, rng):
        pred = rng.normal(0, 1, 10)
        actual = rng.normal(0, 1, 10)
        hand = sum((p - a) ** 2 for p, a in zip(pred, actual)) / 10
        assert mse_y(pred, actual) == pytest.approx(hand, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mse_y([1.0], [1.0, 2.0])


TABLE = np.array([[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]])


class TestMseB:
    def test_perfect(self):
        est = {10: TABLE[0], 20: TABLE[1]}
        assigned = [10, 20, 20]
        true = [1, 2, 2]
        assert mse_b(est, assigned, true, TABLE) == 0.0

    def test_single_component_offset(self):
        est = {10: TABLE[0] + np.array([0.1, 0.0, 0.0])}
        assert mse_b(est, [10, 10], [1, 1], TABLE) == pytest.approx(0.01)

    def test_three_row_hand_case(self):
        est = {1: np.array([0.5, 0.0, 0.0]), 2: np.array([1.0, 2.0, 2.0])}
        assigned = [1, 2, 1]
        true = [1, 2, 2]
        hand = (
            0.5**2
            + 1.0**2
            + ((0.5 - 1.0) ** 2 + 2.0**2 + 3.0**2)
        ) / 3
        assert mse_b(est, assigned, true, TABLE) == pytest.approx(hand)

    def test_unknown_class(self):
        with pytest.raises(UnknownClassError):
            mse_b({1: TABLE[0]}, [2], [1], TABLE)


class TestAccG:
    def test_pure_leaves(self):
        assert acc_g([1, 1, 2, 2], [3, 3, 4, 4]) == 1.0

    def test_single_leaf_majority(self):
        true = [1, 1, 2, 3, 4]
        assert acc_g([0] * 5, true) == pytest.approx(2 / 5)

    def test_two_leaf_hand_count(self):
        leaves = [1, 1, 1, 2, 2]
        true = [1, 1, 2, 2, 2]
        # leaf 1 labeled 1 (2 hits of 3); leaf 2 labeled 2 (2 of 2)
        assert acc_g(leaves, true) == pytest.approx(4 / 5)

    def test_tie_breaks_to_smaller_class(self):
        leaves = [0, 0]
        true = [2, 1]
        # tie between classes 1 and 2 labels the leaf as class 1
        assert acc_g(leaves, true) == pytest.approx(0.5)


class TestBrier:
    def test_constant_half(self):
        times = np.array([1.0, 2.0, 3.0])
        assert brier([0.5] * 3, times, 1.5) == pytest.approx(0.25)
        curves = [flat(0.5)] * 3
        assert ibs(curves, times) == pytest.approx(0.25, abs=1e-12)

    def test_perfect_oracle(self):
        times = np.array([1.0, 2.0, 3.0])
        curves = [StepCurve(knots=[t], values=[0.0]) for t in times]
        for t in (0.5, 1.0, 2.5):
            vals = [c.at([t])[0] for c in curves]
            assert brier(vals, times, t) == 0.0
        assert ibs(curves, times) == pytest.approx(0.0, abs=1e-12)

    def test_three_subject_hand_case(self):
        times = np.array([1.0, 2.0, 3.0])
        surv = np.array([0.8, 0.6, 0.1])
        t = 1.5
        hand = ((0 - 0.8) ** 2 + (1 - 0.6) ** 2 + (1 - 0.1) ** 2) / 3
        assert brier(surv, times, t) == pytest.approx(hand)

    def test_exclude_censored(self):
        times = np.array([1.0, 2.0])
        status = np.array([0, 1])
        surv = np.array([0.8, 0.6])
        # subject 1 censored before t=1.5: dropped from the average
        got = brier(surv, times, 1.5, status=status, exclude_censored=True)
        assert got == pytest.approx((1 - 0.6) ** 2)
        with pytest.raises(JlctError):
            brier(surv, times, 1.5, exclude_censored=True)


def five_subject_data():
    subjects = [
        ((0.0, 1.0), (1.0, 1.5), (0.2, 0.3), 2.0, 1),
        ((0.0,), (2.0,), (0.4,), 1.0, 0),
        ((0.5, 1.5), (0.2, 0.1), (0.6, 0.7), 3.0, 1),
        ((0.0, 2.0), (1.1, 0.9), (0.8, 0.9), 4.0, 1),
        ((0.2,), (0.7,), (0.1,), 1.5, 0),
    ]
    return make_long(subjects)


class TestKfoldCv:
    def test_leave_one_subject_out(self):
        data = five_subject_data()
        seen = []

        def fit(train):
            return train.n_subjects

        def evaluate(model, test):
            seen.append(test.subject_ids)
            return {"n_train": model, "n_test": test.n_subjects}

        per_fold, mean = kfold_cv(data, 5, fit, evaluate, seed=1)
        assert len(per_fold) == 5
        assert all(r["n_test"] == 1 for r in per_fold)
        assert all(r["n_train"] == 4 for r in per_fold)
        covered = sorted(s for ids in seen for s in ids)
        assert covered == sorted(data.subject_ids)
        assert mean["n_test"] == 1.0

    def test_same_seed_same_folds(self):
        data = five_subject_data()
        record = []

        def evaluate(model, test):
            record.append(tuple(test.subject_ids))
            return {"x": 0.0}

        kfold_cv(data, 2, lambda d: None, evaluate, seed=9)
        first = list(record)
        record.clear()
        kfold_cv(data, 2, lambda d: None, evaluate, seed=9)
        assert record == first

    def test_fold_sizes_near_equal(self):
        data = five_subject_data()
        sizes = []
        kfold_cv(data, 2, lambda d: None,
                 lambda m, t: sizes.append(t.n_subjects) or {"x": 0.0}, seed=3)
        assert sorted(sizes) == [2, 3]

    def test_too_few_subjects(self):
        data = five_subject_data()
        with pytest.raises(JlctError):
            kfold_cv(data, 6, lambda d: None, lambda m, t: {}, seed=0)
        with pytest.raises(JlctError):
            kfold_cv(data, 1, lambda d: None, lambda m, t: {}, seed=0)


class TestMetricReport:
    def test_round_trip_text(self):
        report = MetricReport(ise_out=0.125, acc_g=0.5, n_terminal=4)
        text = report.to_text()
        assert "ise_out 0.125" in text
        assert "acc_g 0.5" in text
        assert "mse_b" not in text

    def test_rejects_non_finite(self):
        with pytest.raises(JlctError):
            MetricReport(ise_in=np.nan)

    def test_csv_row_alignment(self):
        header = MetricReport.csv_header().split(",")
        row = MetricReport(ibs=0.25).to_csv_row().split(",")
        assert len(header) == len(row)
        assert row[header.index("ibs")] == "0.25"
