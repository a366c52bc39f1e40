"""Step functions for survival curves and piecewise-constant covariate paths."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import JlctError, NamedColumnError


@dataclass(frozen=True)
class StepCurve:
    """Right-continuous step function, ``start_value`` before the first knot.

    Survival curves are the main use: S(0) = 1 and S drops at event times.
    ``horizon`` records the largest time the curve was built to cover.
    """

    knots: np.ndarray
    values: np.ndarray
    start_value: float = 1.0
    horizon: float = np.inf

    def __post_init__(self):
        object.__setattr__(self, "knots", np.asarray(self.knots, dtype=float))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.knots.shape != self.values.shape:
            raise JlctError("knots and values must align")
        if self.knots.size and np.any(np.diff(self.knots) <= 0):
            raise JlctError("knots must be strictly increasing")

    def at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.knots.size == 0:
            return np.full(t.shape, self.start_value)
        idx = np.searchsorted(self.knots, t, side="right") - 1
        return np.where(idx < 0, self.start_value, self.values[np.clip(idx, 0, None)])

    def breakpoints(self) -> np.ndarray:
        return self.knots


@dataclass(frozen=True)
class CovariatePath:
    """Piecewise-constant covariates: segment k covers [times[k], times[k+1]).

    The first segment extends back to 0 and the last one carries forward
    indefinitely, so the path covers [0, inf) once it has one segment.
    """

    times: np.ndarray
    values: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", tuple(self.names))
        if self.times.size == 0:
            raise JlctError("covariate path needs at least one segment")
        if self.values.shape != (self.times.size, len(self.names)):
            raise JlctError("path values must be (n_segments, n_names)")
        if np.any(np.diff(self.times) <= 0):
            raise JlctError("path times must be strictly increasing")

    def segment_at(self, t) -> np.ndarray:
        """Index of the segment whose values apply at each time in ``t``."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right") - 1
        return np.clip(idx, 0, None)

    def reorder(self, names) -> "CovariatePath":
        """Project onto the given names, preserving segment times."""
        cols = []
        for name in names:
            try:
                cols.append(self.names.index(name))
            except ValueError:
                raise NamedColumnError(f"covariate {name!r} absent from path") from None
        return CovariatePath(self.times, self.values[:, cols], tuple(names))
