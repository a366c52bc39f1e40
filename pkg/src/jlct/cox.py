"""Extended Cox model on LTRC counting-process rows.

Coefficients maximize the Breslow-tie log partial likelihood; a row is
at risk for an event at time t exactly when L < t <= R.  Newton
iteration with step halving (max 25 iterations, up to 10 halvings,
convergence at relative log-likelihood change < 1e-9 and score max-norm
< 1e-8).  Divergent coefficients (monotone likelihood) are reported via
``converged=False``; callers treat such fits as invalid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _coxcore
from .curves import CovariatePath, StepCurve
from .data import LtrcDataset
from .errors import (
    DegenerateDesignError,
    InsufficientEventsError,
    NamedColumnError,
    ShapeError,
)

MAX_ITER = 25
MAX_HALVINGS = 10
TOL_LOGLIK = 1e-9
TOL_GRAD = 1e-8


@dataclass(frozen=True)
class BaselineHazard:
    """Breslow cumulative baseline hazard evaluated at the event times."""

    event_times: np.ndarray
    cumulative_hazard: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "event_times", np.asarray(self.event_times, dtype=float))
        object.__setattr__(
            self, "cumulative_hazard", np.asarray(self.cumulative_hazard, dtype=float)
        )
        if self.event_times.shape != self.cumulative_hazard.shape:
            raise ShapeError("event_times and cumulative_hazard must align")

    def increments(self) -> np.ndarray:
        return np.diff(self.cumulative_hazard, prepend=0.0)


@dataclass(frozen=True)
class CoxFit:
    """Fitted extended Cox model."""

    names: tuple[str, ...]
    coefficients: np.ndarray
    vcov: np.ndarray
    log_partial_lik: float
    n_events: int
    baseline: BaselineHazard
    converged: bool

    def coefficient(self, name: str) -> float:
        try:
            return float(self.coefficients[self.names.index(name)])
        except ValueError:
            raise NamedColumnError(f"no coefficient named {name!r}") from None

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "coefficients": self.coefficients.tolist(),
            "vcov": self.vcov.tolist(),
            "log_partial_lik": self.log_partial_lik,
            "n_events": self.n_events,
            "baseline": {
                "event_times": self.baseline.event_times.tolist(),
                "cumulative_hazard": self.baseline.cumulative_hazard.tolist(),
            },
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CoxFit":
        return cls(
            names=tuple(d["names"]),
            coefficients=np.asarray(d["coefficients"], dtype=float),
            vcov=np.asarray(d["vcov"], dtype=float).reshape(len(d["names"]), len(d["names"])),
            log_partial_lik=float(d["log_partial_lik"]),
            n_events=int(d["n_events"]),
            baseline=BaselineHazard(
                d["baseline"]["event_times"], d["baseline"]["cumulative_hazard"]
            ),
            converged=bool(d["converged"]),
        )


class RiskIndex:
    """Risk-set indexing for a fixed row set, shared by several fits."""

    __slots__ = ("event_times", "m", "d", "lo", "hi", "ev_mask", "n_events")

    def __init__(self, L, R, status):
        ev_mask = np.asarray(status, dtype=bool)
        event_times = np.unique(R[ev_mask])
        self.event_times = event_times
        self.m = event_times.size
        ev_idx = np.searchsorted(event_times, R[ev_mask])
        self.d = np.bincount(ev_idx, minlength=self.m).astype(float)
        self.lo = np.searchsorted(event_times, L, side="right")
        self.hi = np.searchsorted(event_times, R, side="right")
        self.ev_mask = ev_mask
        self.n_events = int(ev_mask.sum())

    def at_risk_rows(self) -> np.ndarray:
        return self.lo < self.hi

    def risk_denominators(self, eta: np.ndarray) -> np.ndarray:
        """Sum of exp(eta) over the risk set of each event time."""
        w = np.exp(eta)
        D = np.bincount(self.lo, weights=w, minlength=self.m + 1) - np.bincount(
            self.hi, weights=w, minlength=self.m + 1
        )
        return np.cumsum(D)[: self.m]

    def null_loglik(self) -> float:
        sizes = np.cumsum(
            np.bincount(self.lo, minlength=self.m + 1)
            - np.bincount(self.hi, minlength=self.m + 1)
        )[: self.m]
        return float(-(self.d * np.log(sizes)).sum())


def _event_sums(index: RiskIndex, X: np.ndarray, offsets: np.ndarray):
    sx_total = X[index.ev_mask].sum(axis=0)
    ev_off_sum = float(offsets[index.ev_mask].sum())
    return sx_total, ev_off_sum


def fit_cox_arrays(L, R, status, X, offsets=None, index: RiskIndex | None = None,
                   b0: np.ndarray | None = None):
    """Fit on raw arrays; returns (beta, loglik, grad, info, converged, index).

    The degenerate-design and event-count checks live in :func:`fit_cox`;
    this inner routine assumes a sane design.
    """
    X = np.ascontiguousarray(X, dtype=float)
    n, p = X.shape
    if index is None:
        index = RiskIndex(L, R, status)
    if offsets is None:
        offsets = np.zeros(n)
    else:
        offsets = np.asarray(offsets, dtype=float)
    if p == 0:
        eta = offsets
        ll = float(
            offsets[index.ev_mask].sum()
            - (index.d * np.log(index.risk_denominators(eta))).sum()
        )
        z = np.zeros(0)
        return z, ll, z, np.zeros((0, 0)), True, index
    sx_total, ev_off_sum = _event_sums(index, X, offsets)
    if b0 is None:
        b0 = np.zeros(p)
    beta, ll, grad, info, converged, _ = _coxcore.newton(
        index.lo, index.hi, index.d, sx_total, ev_off_sum, X, offsets,
        np.asarray(b0, dtype=float), index.m,
        MAX_ITER, MAX_HALVINGS, TOL_LOGLIK, TOL_GRAD,
    )
    return beta, float(ll), grad, info, bool(converged), index


def _invert_info(info: np.ndarray) -> np.ndarray:
    if info.size == 0:
        return info.reshape(0, 0)
    try:
        vcov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        vcov = np.linalg.pinv(info)
    return (vcov + vcov.T) / 2.0


def breslow_baseline(index: RiskIndex, eta: np.ndarray) -> BaselineHazard:
    denom = index.risk_denominators(eta)
    return BaselineHazard(index.event_times, np.cumsum(index.d / denom))


def fit_cox(data: LtrcDataset, covariate_names, offsets=None) -> CoxFit:
    """Fit the extended Cox model on all rows of ``data``.

    Raises on data that cannot identify the model (no events, or a
    covariate constant over the rows at risk).  A fit that fails to
    converge is returned with ``converged=False``.
    """
    names = tuple(covariate_names)
    X = data.columns(names) if names else np.empty((data.n_rows, 0))
    index = RiskIndex(data.L, data.R, data.status)
    if index.n_events == 0:
        raise InsufficientEventsError("no events in the data")
    if names:
        at_risk = index.at_risk_rows()
        spans = np.ptp(X[at_risk], axis=0) if at_risk.any() else np.zeros(len(names))
        flat = [names[j] for j in range(len(names)) if spans[j] == 0]
        if flat:
            raise DegenerateDesignError(
                f"covariates constant over the rows at risk: {flat}"
            )
    beta, ll, grad, info, converged, index = fit_cox_arrays(
        data.L, data.R, data.status, X, offsets=offsets, index=index
    )
    off = np.zeros(data.n_rows) if offsets is None else np.asarray(offsets, dtype=float)
    eta = (X @ beta if names else np.zeros(data.n_rows)) + off
    return CoxFit(
        names=names,
        coefficients=beta,
        vcov=_invert_info(info),
        log_partial_lik=ll,
        n_events=index.n_events,
        baseline=breslow_baseline(index, eta),
        converged=converged,
    )


def loglik_at(data: LtrcDataset, covariate_names, coefficients, offsets=None) -> float:
    """Breslow log partial likelihood at fixed coefficients."""
    names = tuple(covariate_names)
    beta = np.asarray(coefficients, dtype=float)
    if beta.shape != (len(names),):
        raise ShapeError(
            f"{len(names)} covariates but coefficient vector of shape {beta.shape}"
        )
    index = RiskIndex(data.L, data.R, data.status)
    off = np.zeros(data.n_rows) if offsets is None else np.asarray(offsets, dtype=float)
    if not names:
        return float(
            off[index.ev_mask].sum()
            - (index.d * np.log(index.risk_denominators(off))).sum()
        )
    X = np.ascontiguousarray(data.columns(names))
    sx_total, ev_off_sum = _event_sums(index, X, off)
    ll, _, _ = _coxcore.score(
        index.lo, index.hi, index.d, sx_total, ev_off_sum, X, off, beta, index.m
    )
    return float(ll)


def predict_survival(fit: CoxFit, path: CovariatePath, horizon: float) -> StepCurve:
    """Survival curve for a piecewise-constant covariate path.

    S(t) = exp(-sum over event times u <= t of exp(x(u) . b) dH0(u)),
    with x(u) read from the path segment covering u (first segment
    extended back to 0, last carried forward).
    """
    if horizon <= 0:
        raise ShapeError("horizon must be positive")
    aligned = path.reorder(fit.names) if fit.names else path
    times = fit.baseline.event_times
    inc = fit.baseline.increments()
    keep = times <= horizon
    times, inc = times[keep], inc[keep]
    if fit.names:
        seg = aligned.segment_at(times)
        mult = np.exp(aligned.values[seg] @ fit.coefficients)
    else:
        mult = np.ones(times.size)
    surv = np.exp(-np.cumsum(mult * inc))
    return StepCurve(knots=times, values=surv, start_value=1.0, horizon=horizon)
