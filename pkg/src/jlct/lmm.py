"""Linear mixed-effects model for longitudinal outcomes given class ids.

The working model is a subject random intercept plus residual noise,
with mean structure built from shared fixed-effect columns and
class-level effects (one intercept per class plus class-specific slopes
on the random-effect columns).  Class effects are estimated as
class-level contrasts; only the subject intercept is treated as random.

Estimation is maximum likelihood with the variance ratio
r = var_subject / var_resid profiled out: for fixed r the coefficients
and the residual variance are closed-form GLS quantities (Woodbury on
the per-subject compound-symmetric covariance), and r is found by a
grid scan plus Brent refinement on the log scale over [1e-8, 1e8].
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .data import LongDataset
from .errors import UnfittableError, UnknownClassError

RATIO_LO = 1e-8
RATIO_HI = 1e8
RESID_FLOOR = 1e-12


@dataclass(frozen=True)
class LmmFit:
    """Fitted mixed model: shared fixed effects plus per-class effects."""

    fixed_names: tuple[str, ...]
    fixed_effects: np.ndarray
    class_ids: tuple[int, ...]
    class_effect_names: tuple[str, ...]
    class_effects: np.ndarray
    var_subject: float
    var_resid: float
    var_class: float
    loglik: float
    dropped_columns: tuple[str, ...] = ()
    boundary: bool = False

    def class_row(self, class_id: int) -> np.ndarray:
        try:
            g = self.class_ids.index(class_id)
        except ValueError:
            raise UnknownClassError(f"class id {class_id!r} was not fitted") from None
        return self.class_effects[g]

    def to_dict(self) -> dict:
        return {
            "fixed_names": list(self.fixed_names),
            "fixed_effects": self.fixed_effects.tolist(),
            "class_ids": list(self.class_ids),
            "class_effect_names": list(self.class_effect_names),
            "class_effects": self.class_effects.tolist(),
            "var_subject": self.var_subject,
            "var_resid": self.var_resid,
            "var_class": self.var_class,
            "loglik": self.loglik,
            "dropped_columns": list(self.dropped_columns),
            "boundary": self.boundary,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LmmFit":
        n_class = len(d["class_ids"])
        width = len(d["class_effect_names"])
        return cls(
            fixed_names=tuple(d["fixed_names"]),
            fixed_effects=np.asarray(d["fixed_effects"], dtype=float),
            class_ids=tuple(int(g) for g in d["class_ids"]),
            class_effect_names=tuple(d["class_effect_names"]),
            class_effects=np.asarray(d["class_effects"], dtype=float).reshape(n_class, width),
            var_subject=float(d["var_subject"]),
            var_resid=float(d["var_resid"]),
            var_class=float(d["var_class"]),
            loglik=float(d["loglik"]),
            dropped_columns=tuple(d.get("dropped_columns", ())),
            boundary=bool(d.get("boundary", False)),
        )


def _class_design(data: LongDataset, classes: np.ndarray, random_vars):
    class_ids = tuple(int(g) for g in np.unique(classes))
    Xr = data.columns(random_vars) if random_vars else np.empty((data.n_rows, 0))
    width = 1 + Xr.shape[1]
    cols = np.zeros((data.n_rows, len(class_ids) * width))
    names = []
    for gi, g in enumerate(class_ids):
        mask = classes == g
        base = gi * width
        cols[mask, base] = 1.0
        names.append(f"class[{g}]")
        for j, rv in enumerate(random_vars):
            cols[mask, base + 1 + j] = Xr[mask, j]
            names.append(f"class[{g}]:{rv}")
    return class_ids, width, cols, names


def _independent_columns(Z: np.ndarray, names, tol=1e-10):
    """Greedy rank filter, earlier columns win; returns (kept idx, dropped names)."""
    n, p = Z.shape
    Q = np.zeros((n, 0))
    kept, dropped = [], []
    for j in range(p):
        c = Z[:, j]
        resid = c - Q @ (Q.T @ c) if Q.shape[1] else c.copy()
        norm_c = np.linalg.norm(c)
        if norm_c == 0 or np.linalg.norm(resid) <= tol * max(norm_c, 1.0):
            dropped.append(names[j])
            continue
        kept.append(j)
        Q = np.column_stack([Q, resid / np.linalg.norm(resid)])
    return kept, dropped


class _ProfiledLik:
    """Profile log-likelihood of the variance ratio, Woodbury form."""

    def __init__(self, Z, y, subject_index, n_subjects):
        self.N, self.p = Z.shape
        self.ZtZ = Z.T @ Z
        self.Zty = Z.T @ y
        self.yty = float(y @ y)
        counts = np.bincount(subject_index, minlength=n_subjects)
        self.n_i = counts[counts > 0].astype(float)
        zbar = np.zeros((n_subjects, self.p))
        np.add.at(zbar, subject_index, Z)
        ybar = np.bincount(subject_index, weights=y, minlength=n_subjects)
        keep = counts > 0
        self.zbar = zbar[keep]
        self.ybar = ybar[keep]

    def coefficients(self, ratio: float):
        c = ratio / (1.0 + ratio * self.n_i)
        A = self.ZtZ - (self.zbar.T * c) @ self.zbar
        b = self.Zty - self.zbar.T @ (c * self.ybar)
        yvy = self.yty - float(c @ self.ybar**2)
        theta = np.linalg.lstsq(A, b, rcond=None)[0]
        rss = max(yvy - float(theta @ b), 0.0)
        return theta, rss, A

    def loglik(self, ratio: float) -> float:
        _, rss, _ = self.coefficients(ratio)
        sigma2 = max(rss / self.N, RESID_FLOOR)
        logdet = float(np.log1p(ratio * self.n_i).sum())
        return -0.5 * (self.N * np.log(2 * np.pi * sigma2) + logdet + self.N)


def fit_lmm(long_data: LongDataset, memberships, fixed_vars, random_vars) -> LmmFit:
    """Fit the class-conditional mixed model by profiled ML.

    ``memberships`` gives one class id per measurement row.  Raises when
    a single subject makes the two variance components inseparable.
    Rank-deficient designs lose columns (earlier columns win; class
    intercepts come first) with a warning.
    """
    classes = np.asarray(memberships)
    if classes.shape != (long_data.n_rows,):
        raise UnfittableError("memberships must align with measurement rows")
    if long_data.n_subjects < 2:
        raise UnfittableError(
            "subject and residual variances are inseparable with a single subject"
        )
    fixed_vars = tuple(fixed_vars)
    random_vars = tuple(random_vars)

    class_ids, width, class_cols, class_names = _class_design(
        long_data, classes, random_vars
    )
    fixed_cols = (
        long_data.columns(fixed_vars) if fixed_vars else np.empty((long_data.n_rows, 0))
    )
    Z = np.column_stack([class_cols, fixed_cols])
    names = class_names + list(fixed_vars)

    kept, dropped = _independent_columns(Z, names)
    if dropped:
        warnings.warn(f"dropping rank-deficient design columns: {dropped}")
    Z = Z[:, kept]

    prof = _ProfiledLik(Z, long_data.outcome, long_data.subject_index, long_data.n_subjects)

    log_lo, log_hi = np.log(RATIO_LO), np.log(RATIO_HI)
    grid = np.concatenate([[-np.inf], np.linspace(log_lo, log_hi, 41)])
    vals = np.array([prof.loglik(0.0 if t == -np.inf else float(np.exp(t))) for t in grid])
    best = int(np.argmax(vals))
    if best == 0:
        ratio, boundary = 0.0, True
    else:
        lo = grid[max(best - 1, 1)]
        hi = grid[min(best + 1, grid.size - 1)]
        res = minimize_scalar(
            lambda t: -prof.loglik(float(np.exp(t))),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-8},
        )
        t_hat = float(res.x)
        if -res.fun < vals[best]:
            t_hat = float(grid[best])
        ratio = float(np.exp(t_hat))
        boundary = t_hat <= log_lo + 1e-6 or t_hat >= log_hi - 1e-6

    theta, rss, _ = prof.coefficients(ratio)
    sigma2 = rss / prof.N
    clamped = sigma2 < RESID_FLOOR
    sigma2 = max(sigma2, RESID_FLOOR)
    var_subject = 0.0 if ratio == 0.0 else ratio * sigma2
    loglik = prof.loglik(ratio)

    coef = np.zeros(len(names))
    coef[kept] = theta
    n_class = len(class_ids)
    class_effects = coef[: n_class * width].reshape(n_class, width)
    fixed_effects = coef[n_class * width:]
    var_class = (
        float(np.mean(np.sum((class_effects - class_effects.mean(axis=0)) ** 2, axis=1)))
        if n_class > 1
        else 0.0
    )
    return LmmFit(
        fixed_names=fixed_vars,
        fixed_effects=fixed_effects,
        class_ids=class_ids,
        class_effect_names=("(intercept)",) + tuple(f"{v}" for v in random_vars),
        class_effects=class_effects,
        var_subject=var_subject,
        var_resid=sigma2,
        var_class=var_class,
        loglik=loglik,
        dropped_columns=tuple(dropped),
        boundary=boundary or clamped,
    )


def predict_lmm(fit: LmmFit, data: LongDataset, memberships, subject_effects=None) -> np.ndarray:
    """Predicted outcomes: fixed part + class part (+ subject intercept).

    ``subject_effects``, when given, holds one intercept per row; out of
    sample the subject intercept is unknown and defaults to zero.
    """
    classes = np.asarray(memberships)
    if classes.shape != (data.n_rows,):
        raise UnfittableError("memberships must align with measurement rows")
    yhat = np.zeros(data.n_rows)
    if fit.fixed_names:
        yhat += data.columns(fit.fixed_names) @ fit.fixed_effects
    random_vars = fit.class_effect_names[1:]
    Xr = data.columns(random_vars) if random_vars else np.empty((data.n_rows, 0))
    for g in np.unique(classes):
        row = fit.class_row(int(g))
        mask = classes == g
        yhat[mask] += row[0]
        if random_vars:
            yhat[mask] += Xr[mask] @ row[1:]
    if subject_effects is not None:
        yhat += np.asarray(subject_effects, dtype=float)
    return yhat
