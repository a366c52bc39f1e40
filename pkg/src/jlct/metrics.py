"""Evaluation metrics and the subject-level cross-validation harness.

Curve arguments are duck-typed: anything with ``at(grid)`` and
``breakpoints()`` works (step curves from fitted models, closed-form
true curves from the generator).  Integrals use the trapezoid rule on
the merged breakpoints of the integrand plus at least 512 uniform
auxiliary points, which keeps results deterministic and within 1e-4 of
adaptive quadrature on smooth integrands.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .data import LongDataset
from .errors import CoverageError, JlctError, ShapeError, UnknownClassError

AUX_POINTS = 512


@dataclass
class MetricReport:
    """Flat bundle of evaluation results; unset metrics stay None."""

    ise_in: float | None = None
    ise_out: float | None = None
    mse_y_in: float | None = None
    mse_y_out: float | None = None
    mse_b: float | None = None
    acc_g: float | None = None
    ibs: float | None = None
    n_terminal: int | None = None
    runtime_seconds: float | None = None

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if value is not None and not np.isfinite(value):
                raise JlctError(f"metric {f.name} must be finite")

    def to_dict(self) -> dict:
        return {
            f.name: getattr(self, f.name)
            for f in fields(self)
            if getattr(self, f.name) is not None
        }

    def to_text(self) -> str:
        lines = [f"{key} {value:.10g}" for key, value in self.to_dict().items()]
        return "\n".join(lines) + "\n"

    @staticmethod
    def csv_header() -> str:
        return ",".join(f.name for f in fields(MetricReport))

    def to_csv_row(self) -> str:
        out = []
        for f in fields(self):
            value = getattr(self, f.name)
            out.append("" if value is None else f"{value:.10g}")
        return ",".join(out)


def _integration_grid(horizon: float, *curves) -> np.ndarray:
    pieces = [np.linspace(0.0, horizon, AUX_POINTS + 1)]
    for curve in curves:
        bp = np.asarray(curve.breakpoints(), dtype=float)
        pieces.append(bp[(bp >= 0) & (bp <= horizon)])
    return np.unique(np.concatenate(pieces))


def _check_coverage(curve, horizon: float) -> None:
    curve_horizon = getattr(curve, "horizon", np.inf)
    if curve_horizon < horizon:
        raise CoverageError(
            f"curve covers only [0, {curve_horizon}] but horizon is {horizon}"
        )


def ise(predicted, truth, horizon: float) -> float:
    """Time-averaged integrated squared error between survival curves.

    mean over subjects of (1/horizon) * integral of (She - S)^2 on
    [0, horizon].
    """
    if len(predicted) != len(truth):
        raise ShapeError("predicted and true curve lists must align")
    if horizon <= 0:
        raise JlctError("horizon must be positive")
    total = 0.0
    for pred, true in zip(predicted, truth):
        _check_coverage(pred, horizon)
        _check_coverage(true, horizon)
        grid = _integration_grid(horizon, pred, true)
        gap = pred.at(grid) - true.at(grid)
        total += float(np.trapezoid(gap**2, grid)) / horizon
    return total / len(predicted)


def mse_y(predicted, actual) -> float:
    """Mean squared error over aligned outcome rows."""
    predicted = np.asarray(predicted, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if predicted.shape != actual.shape:
        raise ShapeError("prediction and outcome lengths differ")
    return float(np.mean((predicted - actual) ** 2))


def mse_b(estimated_slopes: dict, assigned, true_classes, slope_table) -> float:
    """Row-averaged squared distance between fitted and true slope vectors.

    ``estimated_slopes`` maps a predicted class id to its slope vector;
    ``slope_table`` holds the true vectors indexed by class - 1.
    """
    assigned = np.asarray(assigned)
    true_classes = np.asarray(true_classes)
    slope_table = np.asarray(slope_table, dtype=float)
    if assigned.shape != true_classes.shape:
        raise ShapeError("assigned and true class vectors must align")
    lookup = {}
    for key, vec in estimated_slopes.items():
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (slope_table.shape[1],):
            raise ShapeError("slope vectors must share the table's dimension")
        lookup[key] = vec
    total = 0.0
    for cls_hat, cls_true in zip(assigned, true_classes):
        if cls_hat not in lookup:
            raise UnknownClassError(f"no estimated slopes for class {cls_hat!r}")
        gap = lookup[cls_hat] - slope_table[int(cls_true) - 1]
        total += float(gap @ gap)
    return total / assigned.size


def acc_g(assigned_leaves, true_classes) -> float:
    """Majority-label accuracy of the leaf partition on these rows.

    Each leaf is labeled by the majority true class of its own rows
    (ties to the smaller class id), so the score is a property of the
    evaluated partition.
    """
    assigned_leaves = np.asarray(assigned_leaves)
    true_classes = np.asarray(true_classes)
    if assigned_leaves.shape != true_classes.shape:
        raise ShapeError("assigned and true class vectors must align")
    hits = 0
    for leaf in np.unique(assigned_leaves):
        mask = assigned_leaves == leaf
        classes, counts = np.unique(true_classes[mask], return_counts=True)
        label = classes[np.argmax(counts)]  # first max: smallest class id
        hits += int(np.sum(true_classes[mask] == label))
    return hits / assigned_leaves.size


def brier(surv_at_t, times, t: float, status=None, exclude_censored: bool = False) -> float:
    """Brier score at time t: mean of (I(Y > t) - S(t))^2.

    With ``exclude_censored``, subjects censored at or before t drop out
    of the average (their status at t is unknown); the default keeps
    the printed formula.
    """
    surv_at_t = np.asarray(surv_at_t, dtype=float)
    times = np.asarray(times, dtype=float)
    if surv_at_t.shape != times.shape:
        raise ShapeError("survival values and event times must align")
    keep = np.ones(times.size, dtype=bool)
    if exclude_censored:
        if status is None:
            raise JlctError("exclude_censored requires status")
        status = np.asarray(status)
        keep = ~((status == 0) & (times <= t))
        if not keep.any():
            return 0.0
    indicator = (times > t).astype(float)
    return float(np.mean((indicator[keep] - surv_at_t[keep]) ** 2))


def ibs(curves, times, status=None, exclude_censored: bool = False) -> float:
    """Integrated Brier score over [0, max Y], trapezoid on the merged grid."""
    times = np.asarray(times, dtype=float)
    if len(curves) != times.size:
        raise ShapeError("one curve per subject is required")
    horizon = float(times.max())
    for curve in curves:
        _check_coverage(curve, horizon)
    grid = np.unique(
        np.concatenate([np.linspace(0.0, horizon, AUX_POINTS + 1), times])
    )
    surv = np.vstack([curve.at(grid) for curve in curves])
    bs = np.empty(grid.size)
    for j, t in enumerate(grid):
        bs[j] = brier(surv[:, j], times, t, status=status,
                      exclude_censored=exclude_censored)
    return float(np.trapezoid(bs, grid)) / horizon


def kfold_cv(data: LongDataset, k: int, fit, evaluate, seed: int):
    """Subject-level k-fold cross-validation.

    ``fit(train) -> model`` and ``evaluate(model, test) -> dict`` are
    supplied by the caller; subjects stay whole within a fold.  Returns
    (per_fold_results, mean_result).
    """
    if k < 2:
        raise JlctError("k must be at least 2")
    if data.n_subjects < k:
        raise JlctError("need at least one subject per fold")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, 77))))
    perm = rng.permutation(data.n_subjects)
    folds = np.array_split(perm, k)
    per_fold = []
    for fold in folds:
        mask_test = np.zeros(data.n_subjects, dtype=bool)
        mask_test[fold] = True
        train = data.select_subjects(~mask_test)
        test = data.select_subjects(mask_test)
        model = fit(train)
        per_fold.append(dict(evaluate(model, test)))
    keys = sorted({key for result in per_fold for key in result})
    mean = {
        key: float(np.mean([result[key] for result in per_fold if key in result]))
        for key in keys
    }
    return per_fold, mean
