"""Node test statistic and candidate-split scoring.

The node statistic TS is the likelihood-ratio statistic for dropping
the longitudinal outcome from an extended Cox model that regresses the
hazard on the outcome plus the survival covariates, fitted on the
node's LTRC rows.  A split is scored by how much it reduces the
children's statistics: S = TS_parent - TS_left - TS_right.

Candidates whose children fail the reliability screens (row or event
minimums, non-convergent fits, variance bound on coefficient variances,
degenerate design) are discarded.  Candidate evaluation order is fixed
(split variables in role order, thresholds ascending) and the argmax
uses strict improvement, so ties resolve to the earlier variable and
the smaller threshold regardless of any evaluation parallelism.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cox import CoxFit, RiskIndex, breslow_baseline, fit_cox_arrays, _invert_info
from .data import LtrcDataset, VariableRoles
from .errors import JlctError

OUTCOME_TERM = "(outcome)"

REASON_EVENTS = "too-few-events"
REASON_DEGENERATE = "degenerate-design"
REASON_CONVERGENCE = "non-convergence"
REASON_VARIANCE = "variance-bound"


@dataclass(frozen=True)
class SplitControls:
    """Reliability controls for node tests and splits.

    ``min_events`` defaults to the covariate count of the node-test Cox
    model (outcome plus survival covariates).  ``variance_bound`` caps
    every coefficient-variance diagonal in both node-test fits.
    """

    min_node_rows: int = 10
    min_events: int | None = None
    variance_bound: float = 1e5
    stop_threshold: float = 3.84
    max_terminal_nodes: int = 6

    def __post_init__(self):
        if self.min_node_rows < 1:
            raise JlctError("min_node_rows must be positive")
        if self.min_events is not None and self.min_events < 1:
            raise JlctError("min_events must be positive")
        if self.variance_bound <= 0 or self.stop_threshold <= 0:
            raise JlctError("variance_bound and stop_threshold must be positive")
        if self.max_terminal_nodes < 1:
            raise JlctError("max_terminal_nodes must be positive")

    def resolved_min_events(self, survival_vars) -> int:
        if self.min_events is not None:
            return self.min_events
        return len(tuple(survival_vars)) + 1

    def to_dict(self) -> dict:
        return {
            "min_node_rows": self.min_node_rows,
            "min_events": self.min_events,
            "variance_bound": self.variance_bound,
            "stop_threshold": self.stop_threshold,
            "max_terminal_nodes": self.max_terminal_nodes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitControls":
        return cls(**d)


@dataclass(frozen=True)
class NodeTest:
    """LRT of the outcome term at a node, with validity screens."""

    ts: float
    full_fit: CoxFit | None
    null_fit: CoxFit | None
    valid: bool
    reason: str | None
    n_rows: int
    n_events: int

    def to_dict(self) -> dict:
        return {
            "ts": self.ts,
            "valid": self.valid,
            "reason": self.reason,
            "n_rows": self.n_rows,
            "n_events": self.n_events,
        }


@dataclass(frozen=True)
class SplitCandidate:
    """A scored (variable, threshold) split with its child tests."""

    variable: str
    threshold: float
    score: float
    left_test: NodeTest
    right_test: NodeTest


class _NodeDesign:
    """Model matrices for one node: outcome column plus survival covariates."""

    def __init__(self, rows: LtrcDataset, survival_vars):
        self.rows = rows
        self.survival_vars = tuple(survival_vars)
        xs = rows.columns(self.survival_vars) if self.survival_vars else \
            np.empty((rows.n_rows, 0))
        self.full = np.ascontiguousarray(np.column_stack([rows.outcome, xs]))
        self.L = rows.L
        self.R = rows.R
        self.status = rows.status


def _eval_node(L, R, status, full_X, min_events, variance_bound,
               b_full0=None, b_null0=None):
    """Fit the full and null models on one row set.

    Returns a dict with ts, validity, reasons and the raw fit pieces so
    callers can reuse coefficient vectors as warm starts.
    """
    index = RiskIndex(L, R, status)
    out = {
        "index": index,
        "n_events": index.n_events,
        "valid": False,
        "reason": None,
        "ts": 0.0,
        "full": None,
        "null": None,
    }
    if index.n_events < min_events:
        out["reason"] = REASON_EVENTS
        return out
    at_risk = index.at_risk_rows()
    if not at_risk.any() or np.any(np.ptp(full_X[at_risk], axis=0) == 0):
        out["reason"] = REASON_DEGENERATE
        return out
    null_X = np.ascontiguousarray(full_X[:, 1:])
    full = fit_cox_arrays(L, R, status, full_X, index=index, b0=b_full0)
    null = fit_cox_arrays(L, R, status, null_X, index=index, b0=b_null0)
    out["full"] = full
    out["null"] = null
    if not (full[4] and null[4]):
        out["reason"] = REASON_CONVERGENCE
        return out
    vfull = _invert_info(full[3])
    vnull = _invert_info(null[3])
    if (vfull.size and np.max(np.diag(vfull)) > variance_bound) or (
        vnull.size and np.max(np.diag(vnull)) > variance_bound
    ):
        out["reason"] = REASON_VARIANCE
        return out
    out["valid"] = True
    out["ts"] = max(0.0, 2.0 * (full[1] - null[1]))
    return out


def _materialize(design: _NodeDesign, mask, survival_vars, controls) -> NodeTest:
    sub = design.rows.subset(mask) if mask is not None else design.rows
    return node_test(sub, survival_vars, controls)


def node_test(rows: LtrcDataset, survival_vars, controls: SplitControls) -> NodeTest:
    """Compute TS and the validity screens on a node's rows."""
    if rows.n_rows == 0:
        raise JlctError("node_test requires a nonempty node")
    survival_vars = tuple(survival_vars)
    design = _NodeDesign(rows, survival_vars)
    res = _eval_node(
        design.L, design.R, design.status, design.full,
        controls.resolved_min_events(survival_vars), controls.variance_bound,
    )
    names_full = (OUTCOME_TERM,) + survival_vars

    def as_fit(raw, names):
        if raw is None:
            return None
        beta, ll, _, info, converged, index = raw
        X = design.full if len(names) == len(names_full) else design.full[:, 1:]
        lin = X @ beta if beta.size else np.zeros(design.L.shape[0])
        return CoxFit(
            names=names,
            coefficients=beta,
            vcov=_invert_info(info),
            log_partial_lik=ll,
            n_events=index.n_events,
            baseline=breslow_baseline(index, lin),
            converged=converged,
        )

    return NodeTest(
        ts=res["ts"],
        full_fit=as_fit(res["full"], names_full),
        null_fit=as_fit(res["null"], survival_vars),
        valid=res["valid"],
        reason=res["reason"],
        n_rows=rows.n_rows,
        n_events=res["n_events"],
    )


def enumerate_thresholds(rows: LtrcDataset, variable: str) -> np.ndarray:
    """Midpoints between consecutive distinct values of ``variable``."""
    values = np.unique(rows.column(variable))
    if values.size < 2:
        return np.empty(0)
    return np.unique((values[1:] + values[:-1]) / 2.0)


def best_split(rows: LtrcDataset, roles: VariableRoles, controls: SplitControls,
               parent: NodeTest) -> SplitCandidate | None:
    """Scan every (split variable, threshold) pair for the best score.

    Returns None when no candidate survives the screens, which closes
    the node.  Requires a valid parent test at or above the stopping
    threshold.
    """
    if not parent.valid or parent.ts < controls.stop_threshold:
        raise JlctError("best_split requires a valid parent with TS above the threshold")
    survival_vars = tuple(roles.survival_vars)
    min_events = controls.resolved_min_events(survival_vars)
    design = _NodeDesign(rows, survival_vars)
    warm_full = parent.full_fit.coefficients if parent.full_fit is not None else None
    warm_null = parent.null_fit.coefficients if parent.null_fit is not None else None

    best = None  # (score, variable, threshold, mask)
    for variable in roles.split_vars:
        values = rows.column(variable)
        thresholds = enumerate_thresholds(rows, variable)
        b_fl, b_nl, b_fr, b_nr = warm_full, warm_null, warm_full, warm_null
        for threshold in thresholds:
            mask = values <= threshold
            n_left = int(mask.sum())
            n_right = mask.size - n_left
            if min(n_left, n_right) < controls.min_node_rows:
                continue
            left = _eval_node(
                design.L[mask], design.R[mask], design.status[mask],
                np.ascontiguousarray(design.full[mask]),
                min_events, controls.variance_bound, b_fl, b_nl,
            )
            if left["full"] is not None:
                b_fl, b_nl = left["full"][0], left["null"][0]
            if not left["valid"]:
                continue
            inv = ~mask
            right = _eval_node(
                design.L[inv], design.R[inv], design.status[inv],
                np.ascontiguousarray(design.full[inv]),
                min_events, controls.variance_bound, b_fr, b_nr,
            )
            if right["full"] is not None:
                b_fr, b_nr = right["full"][0], right["null"][0]
            if not right["valid"]:
                continue
            score = parent.ts - left["ts"] - right["ts"]
            if best is None or score > best[0]:
                best = (score, variable, float(threshold), mask.copy())
    if best is None:
        return None
    score, variable, threshold, mask = best
    left_test = _materialize(design, mask, survival_vars, controls)
    right_test = _materialize(design, ~mask, survival_vars, controls)
    return SplitCandidate(
        variable=variable,
        threshold=threshold,
        score=score,
        left_test=left_test,
        right_test=right_test,
    )
