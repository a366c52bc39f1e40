import numpy as np
import pytest

from jlct.cox import fit_cox, loglik_at, predict_survival
from jlct.curves import CovariatePath
from jlct.errors import (
    DegenerateDesignError,
    InsufficientEventsError,
    NamedColumnError,
    ShapeError,
)

from conftest import (
    grid_search_coefficient,
    make_ltrc,
    oracle_partial_loglik,
    random_small_ltrc,
)


def three_subject_toy():
    # single-interval subjects; risk-set sizes at events are 3, 2, 1
    return make_ltrc([0, 0, 0], [1, 2, 3], [1, 1, 1], [0.5, -0.2, 1.0])


class TestLoglikAt:
    def test_null_value_counts_risk_sets(self):
        data = three_subject_toy()
        expected = -(np.log(3) + np.log(2) + np.log(1))
        assert loglik_at(data, ["x"], [0.0]) == pytest.approx(expected, abs=1e-12)

    def test_empty_covariate_list(self):
        data = three_subject_toy()
        expected = -(np.log(3) + np.log(2) + np.log(1))
        assert loglik_at(data, [], []) == pytest.approx(expected, abs=1e-12)

    def test_mle_dominates_zero(self):
        data = make_ltrc([0, 0, 0, 0], [1, 2, 3, 4], [1, 1, 1, 1], [1.0, 0.0, 1.0, 0.0])
        fit = fit_cox(data, ["x"])
        assert fit.log_partial_lik >= loglik_at(data, ["x"], [0.0])

    def test_shape_mismatch(self):
        data = three_subject_toy()
        with pytest.raises(ShapeError):
            loglik_at(data, ["x"], [0.0, 1.0])

    def test_matches_oracle_at_arbitrary_beta(self, rng):
        for _ in range(10):
            data = random_small_ltrc(rng)
            b = rng.normal(0, 1.5)
            got = loglik_at(data, ["x"], [b])
            want = oracle_partial_loglik(data.L, data.R, data.status, data.column("x"), b)
            assert got == pytest.approx(want, rel=1e-10, abs=1e-10)


class TestFitCox:
    def test_four_row_fit_matches_grid_search(self):
        data = make_ltrc([0, 0, 0, 0], [1, 2, 3, 4], [1, 1, 1, 1], [1.0, 0.0, 1.0, 0.0])
        fit = fit_cox(data, ["x"])
        assert fit.converged
        b_star, _ = grid_search_coefficient(data.L, data.R, data.status, data.column("x"))
        assert abs(fit.coefficients[0] - b_star) <= 1e-3
        assert fit.n_events == 4

    def test_monotone_likelihood_is_flagged(self):
        data = make_ltrc([0, 0], [1, 2], [1, 1], [1.0, 0.0])
        fit = fit_cox(data, ["x"])
        assert not fit.converged

    def test_constant_covariate(self):
        data = make_ltrc([0, 0, 0], [1, 2, 3], [1, 1, 1], [0.0, 0.0, 0.0])
        with pytest.raises(DegenerateDesignError):
            fit_cox(data, ["x"])

    def test_no_events(self):
        data = make_ltrc([0, 0], [1, 2], [0, 0], [1.0, 0.0])
        with pytest.raises(InsufficientEventsError):
            fit_cox(data, ["x"])

    def test_gradient_zero_at_solution(self, rng):
        for _ in range(10):
            data = random_small_ltrc(rng)
            fit = fit_cox(data, ["x"])
            if not fit.converged:
                continue
            h = 1e-5
            b = fit.coefficients[0]
            fd = (
                loglik_at(data, ["x"], [b + h]) - loglik_at(data, ["x"], [b - h])
            ) / (2 * h)
            assert abs(fd) < 1e-4

    def test_vcov_symmetric_psd(self, rng):
        data = make_ltrc(
            [0, 0, 0, 0, 0, 0],
            [1, 2, 3, 4, 5, 6],
            [1, 1, 1, 1, 1, 0],
            np.column_stack([[1, 0, 1, 0, 1, 0], [0.2, 0.4, 0.1, 0.9, 0.5, 0.3]]),
            names=("a", "b"),
        )
        fit = fit_cox(data, ["a", "b"])
        assert np.max(np.abs(fit.vcov - fit.vcov.T)) <= 1e-8
        assert np.min(np.linalg.eigvalsh(fit.vcov)) >= -1e-8

    def test_nesting_monotonicity(self, rng):
        for _ in range(5):
            data = random_small_ltrc(rng)
            extra = rng.normal(0, 1, data.n_rows)
            big = make_ltrc(
                data.L, data.R, data.status,
                np.column_stack([data.column("x"), extra]),
                names=("x", "z"),
            )
            fa = fit_cox(big, ["x"])
            fab = fit_cox(big, ["x", "z"])
            assert fab.log_partial_lik >= fa.log_partial_lik - 1e-8

    def test_row_permutation_invariance(self, rng):
        data = random_small_ltrc(rng)
        fit = fit_cox(data, ["x"])
        perm = rng.permutation(data.n_rows)
        shuffled = data.subset(perm)
        fit2 = fit_cox(shuffled, ["x"])
        assert fit2.log_partial_lik == pytest.approx(fit.log_partial_lik, abs=1e-10)
        assert np.allclose(fit.coefficients, fit2.coefficients, atol=1e-8)

    def test_rescaling_equivariance(self, rng):
        for _ in range(20):
            data = random_small_ltrc(rng)
            fit = fit_cox(data, ["x"])
            if fit.converged:
                break
        assert fit.converged
        c = 2.5
        scaled = make_ltrc(data.L, data.R, data.status, c * data.column("x"))
        fit_c = fit_cox(scaled, ["x"])
        assert fit_c.coefficients[0] == pytest.approx(fit.coefficients[0] / c, rel=1e-6)
        assert fit_c.log_partial_lik == pytest.approx(fit.log_partial_lik, rel=1e-6)

    def test_offsets_shift_linear_predictor(self):
        # offset equal to x*b0 must give the same fit as folding b0 into x
        data = make_ltrc([0, 0, 0, 0], [1, 2, 3, 4], [1, 1, 1, 1], [1.0, 0.0, 1.0, 0.0])
        x = data.column("x")
        ll_with_offset = loglik_at(data, ["x"], [0.3], offsets=0.2 * x)
        ll_direct = loglik_at(data, ["x"], [0.5])
        assert ll_with_offset == pytest.approx(ll_direct, abs=1e-10)

    def test_empty_covariates_fit(self):
        data = three_subject_toy()
        fit = fit_cox(data, [])
        assert fit.converged
        assert fit.coefficients.size == 0
        expected = -(np.log(3) + np.log(2) + np.log(1))
        assert fit.log_partial_lik == pytest.approx(expected, abs=1e-12)
        # Breslow increments at b=0 are d_k / |risk set|
        assert np.allclose(fit.baseline.cumulative_hazard, [1 / 3, 1 / 3 + 1 / 2, 1 / 3 + 1 / 2 + 1])


class TestBaselineAndPrediction:
    def test_baseline_nondecreasing(self, rng):
        for _ in range(5):
            data = random_small_ltrc(rng)
            fit = fit_cox(data, ["x"])
            assert np.all(np.diff(fit.baseline.cumulative_hazard) >= 0)
            assert np.array_equal(
                fit.baseline.event_times, np.unique(data.R[data.status.astype(bool)])
            )

    def test_zero_coefficients_give_baseline_survival(self):
        data = three_subject_toy()
        fit = fit_cox(data, [])
        path = CovariatePath([0.0], np.zeros((1, 0)), ())
        curve = predict_survival(fit, path, horizon=3.0)
        assert np.allclose(curve.values, np.exp(-fit.baseline.cumulative_hazard))
        assert curve.at([0.0])[0] == 1.0
        assert np.all(np.diff(curve.at(np.linspace(0, 3, 50))) <= 0)

    def test_horizon_before_first_event(self):
        data = three_subject_toy()
        fit = fit_cox(data, [])
        path = CovariatePath([0.0], np.zeros((1, 0)), ())
        curve = predict_survival(fit, path, horizon=0.5)
        assert np.all(curve.at(np.linspace(0, 0.5, 10)) == 1.0)

    def test_piecewise_multiplier_hand_sum(self):
        # three-event baseline; doubling the covariate from t=1.5 onward
        # scales later hazard increments by exp(b * dx)
        data = three_subject_toy()
        fit0 = fit_cox(data, [])
        b = 0.7
        fit = fit0.__class__(
            names=("x",),
            coefficients=np.array([b]),
            vcov=np.eye(1),
            log_partial_lik=0.0,
            n_events=3,
            baseline=fit0.baseline,
            converged=True,
        )
        path = CovariatePath([0.0, 1.5], np.array([[1.0], [2.0]]), ("x",))
        curve = predict_survival(fit, path, horizon=3.0)
        inc = fit0.baseline.increments()
        # events at 1, 2, 3; x = 1 at t=1, x = 2 at t=2 and 3
        cum = np.cumsum([np.exp(b) * inc[0], np.exp(2 * b) * inc[1], np.exp(2 * b) * inc[2]])
        assert np.allclose(curve.values, np.exp(-cum))

    def test_unknown_covariate_in_path(self):
        data = make_ltrc([0, 0, 0, 0], [1, 2, 3, 4], [1, 1, 1, 1], [1.0, 0.0, 1.0, 0.0])
        fit = fit_cox(data, ["x"])
        path = CovariatePath([0.0], np.array([[1.0]]), ("other",))
        with pytest.raises(NamedColumnError):
            predict_survival(fit, path, horizon=2.0)
