"""Long-format longitudinal/survival data and its counting-process form.

A long dataset holds one row per (subject, measurement time) plus one
event tuple per subject.  Survival fitting consumes the left-truncated
right-censored (LTRC) form, where each measurement opens a risk interval
(L, R] carrying the covariate values recorded at its start.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .errors import (
    EmptySubjectError,
    InconsistencyError,
    JlctError,
    NamedColumnError,
    OrderingError,
)


@dataclass(frozen=True)
class VariableRoles:
    """Column names and the four covariate role lists.

    The role lists may overlap or be disjoint; each names columns of the
    ingested table.  ``split_vars`` drive tree partitioning,
    ``survival_vars`` enter the hazard models, ``fixed_vars`` and
    ``random_vars`` enter the longitudinal model.
    """

    subject_col: str
    time_col: str
    outcome_col: str
    event_time_col: str
    status_col: str
    split_vars: tuple[str, ...] = ()
    survival_vars: tuple[str, ...] = ()
    fixed_vars: tuple[str, ...] = ()
    random_vars: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("split_vars", "survival_vars", "fixed_vars", "random_vars"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @property
    def covariate_names(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for group in (self.split_vars, self.survival_vars, self.fixed_vars, self.random_vars):
            for name in group:
                seen.setdefault(name)
        return tuple(seen)

    def validate_against(self, columns) -> None:
        missing = [c for c in self.required_columns() if c not in columns]
        if missing:
            raise NamedColumnError(f"columns named in roles are absent: {missing}")

    def required_columns(self) -> tuple[str, ...]:
        return (
            self.subject_col,
            self.time_col,
            self.outcome_col,
            self.event_time_col,
            self.status_col,
        ) + self.covariate_names

    def to_dict(self) -> dict:
        return {
            "subject_col": self.subject_col,
            "time_col": self.time_col,
            "outcome_col": self.outcome_col,
            "event_time_col": self.event_time_col,
            "status_col": self.status_col,
            "split_vars": list(self.split_vars),
            "survival_vars": list(self.survival_vars),
            "fixed_vars": list(self.fixed_vars),
            "random_vars": list(self.random_vars),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VariableRoles":
        return cls(**d)

    def replace(self, **kw) -> "VariableRoles":
        return replace(self, **kw)


@dataclass(frozen=True)
class LongDataset:
    """Measurement rows grouped contiguously by subject, plus events.

    ``starts`` has one offset per subject plus a terminal sentinel, so the
    rows of subject ``i`` live in ``slice(starts[i], starts[i + 1])``.
    Instances are immutable; transformations return new datasets.
    """

    subject_ids: tuple
    starts: np.ndarray
    times: np.ndarray
    outcome: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple[str, ...]
    event_time: np.ndarray
    status: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "subject_ids", tuple(self.subject_ids))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        self._validate()

    def _validate(self) -> None:
        n_subj = len(self.subject_ids)
        if self.starts.shape != (n_subj + 1,):
            raise JlctError("starts must have one offset per subject plus a sentinel")
        if self.covariates.shape != (self.n_rows, len(self.covariate_names)):
            raise JlctError("covariate matrix shape does not match names")
        for arr, what in ((self.times, "times"), (self.outcome, "outcome"),
                          (self.covariates, "covariates")):
            if not np.all(np.isfinite(arr)):
                raise JlctError(f"non-finite values in {what} (missing data is rejected)")
        for i, sid in enumerate(self.subject_ids):
            lo, hi = self.starts[i], self.starts[i + 1]
            if hi <= lo:
                raise EmptySubjectError(f"subject {sid!r} has no measurements")
            t = self.times[lo:hi]
            if np.any(np.diff(t) <= 0):
                raise OrderingError(
                    f"measurement times for subject {sid!r} are not strictly increasing"
                )
            if self.event_time[i] < t[-1]:
                raise InconsistencyError(
                    f"subject {sid!r}: event time {self.event_time[i]} precedes "
                    f"last measurement at {t[-1]}"
                )
        if not np.all(np.isin(self.status, (0, 1))):
            raise JlctError("status must be 0 or 1")

    @property
    def n_rows(self) -> int:
        return self.times.shape[0]

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    def subject_slice(self, i: int) -> slice:
        return slice(int(self.starts[i]), int(self.starts[i + 1]))

    @property
    def subject_index(self) -> np.ndarray:
        """Per-row index into ``subject_ids``."""
        return np.repeat(np.arange(self.n_subjects), np.diff(self.starts))

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.covariate_names.index(name)
        except ValueError:
            raise NamedColumnError(f"unknown covariate {name!r}") from None
        return self.covariates[:, j]

    def columns(self, names) -> np.ndarray:
        idx = []
        for name in names:
            try:
                idx.append(self.covariate_names.index(name))
            except ValueError:
                raise NamedColumnError(f"unknown covariate {name!r}") from None
        return self.covariates[:, idx]

    def with_columns(self, names, values: np.ndarray) -> "LongDataset":
        """Return a copy with extra covariate columns appended."""
        names = tuple(names)
        dup = set(names) & set(self.covariate_names)
        if dup:
            raise NamedColumnError(f"columns already present: {sorted(dup)}")
        return replace(
            self,
            covariates=np.column_stack([self.covariates, values]),
            covariate_names=self.covariate_names + names,
        )

    def select_subjects(self, keep: np.ndarray) -> "LongDataset":
        """Subset to the subjects flagged in the boolean mask ``keep``."""
        keep = np.asarray(keep, dtype=bool)
        row_mask = np.repeat(keep, np.diff(self.starts))
        counts = np.diff(self.starts)[keep]
        return replace(
            self,
            subject_ids=tuple(s for s, k in zip(self.subject_ids, keep) if k),
            starts=np.concatenate(([0], np.cumsum(counts))),
            times=self.times[row_mask],
            outcome=self.outcome[row_mask],
            covariates=self.covariates[row_mask],
            event_time=self.event_time[keep],
            status=self.status[keep],
        )


@dataclass(frozen=True)
class LtrcDataset:
    """Counting-process rows: risk intervals (L, R] with frozen covariates.

    Rows produced by :func:`to_ltrc` are contiguous per subject; subsets
    taken during tree construction keep per-row subject indices but no
    grouping guarantee.
    """

    subject_ids: tuple
    subject_index: np.ndarray
    L: np.ndarray
    R: np.ndarray
    status: np.ndarray
    outcome: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "subject_ids", tuple(self.subject_ids))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        if np.any(self.L >= self.R):
            raise JlctError("risk intervals must satisfy L < R")

    @property
    def n_rows(self) -> int:
        return self.L.shape[0]

    @property
    def n_events(self) -> int:
        return int(self.status.sum())

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.covariate_names.index(name)
        except ValueError:
            raise NamedColumnError(f"unknown covariate {name!r}") from None
        return self.covariates[:, j]

    def columns(self, names) -> np.ndarray:
        idx = []
        for name in names:
            try:
                idx.append(self.covariate_names.index(name))
            except ValueError:
                raise NamedColumnError(f"unknown covariate {name!r}") from None
        return self.covariates[:, idx]

    def subset(self, mask: np.ndarray) -> "LtrcDataset":
        mask = np.asarray(mask)
        return LtrcDataset(
            subject_ids=self.subject_ids,
            subject_index=self.subject_index[mask],
            L=self.L[mask],
            R=self.R[mask],
            status=self.status[mask],
            outcome=self.outcome[mask],
            covariates=self.covariates[mask],
            covariate_names=self.covariate_names,
        )


def ingest_csv(path, roles: VariableRoles) -> LongDataset:
    """Read a long-format CSV into a validated :class:`LongDataset`.

    One row per (subject, measurement time); event columns must repeat
    unchanged on every row of a subject.  Rows must appear in increasing
    time order within each subject.
    """
    frame = pd.read_csv(path)
    roles.validate_against(frame.columns)
    numeric_cols = [c for c in roles.required_columns() if c != roles.subject_col]
    for col in numeric_cols:
        values = pd.to_numeric(frame[col], errors="coerce")
        if values.isna().any():
            bad = int(values.isna().idxmax())
            raise JlctError(f"column {col!r} has a missing or non-numeric value (row {bad})")
        frame[col] = values.astype(float)
    subjects = frame[roles.subject_col].astype(str)
    return _from_frame(frame, subjects, roles)


def _from_frame(frame: pd.DataFrame, subjects: pd.Series, roles: VariableRoles) -> LongDataset:
    order = {}
    for sid in subjects:
        order.setdefault(sid, len(order))
    subject_ids = list(order)
    idx = subjects.map(order).to_numpy()
    n_subj = len(subject_ids)

    counts = np.bincount(idx, minlength=n_subj)
    starts = np.concatenate(([0], np.cumsum(counts)))
    pos = np.argsort(idx, kind="stable")

    times = frame[roles.time_col].to_numpy(float)[pos]
    outcome = frame[roles.outcome_col].to_numpy(float)[pos]
    cov_names = roles.covariate_names
    covariates = frame[list(cov_names)].to_numpy(float)[pos] if cov_names else \
        np.empty((len(frame), 0))
    ev_all = frame[roles.event_time_col].to_numpy(float)[pos]
    st_all = frame[roles.status_col].to_numpy(float)[pos]

    event_time = np.empty(n_subj)
    status = np.empty(n_subj, dtype=np.int8)
    for i, sid in enumerate(subject_ids):
        lo, hi = starts[i], starts[i + 1]
        t = times[lo:hi]
        if np.any(np.diff(t) < 0):
            raise OrderingError(
                f"measurement times for subject {sid!r} are out of order in the file"
            )
        if np.any(np.diff(t) == 0):
            raise OrderingError(f"duplicate (subject, time) pair for subject {sid!r}")
        if np.ptp(ev_all[lo:hi]) != 0 or np.ptp(st_all[lo:hi]) != 0:
            raise InconsistencyError(
                f"event columns vary within subject {sid!r}; they must be constant"
            )
        event_time[i] = ev_all[lo]
        status[i] = int(st_all[lo])

    return LongDataset(
        subject_ids=subject_ids,
        starts=starts,
        times=times,
        outcome=outcome,
        covariates=covariates,
        covariate_names=cov_names,
        event_time=event_time,
        status=status,
    )


def long_to_frame(data: LongDataset, roles: VariableRoles) -> pd.DataFrame:
    """Inverse of :func:`ingest_csv`: the CSV layout as a DataFrame."""
    idx = data.subject_index
    cols = {
        roles.subject_col: [data.subject_ids[i] for i in idx],
        roles.time_col: data.times,
        roles.outcome_col: data.outcome,
    }
    for j, name in enumerate(data.covariate_names):
        cols[name] = data.covariates[:, j]
    cols[roles.event_time_col] = data.event_time[idx]
    cols[roles.status_col] = data.status[idx].astype(int)
    return pd.DataFrame(cols)


def to_ltrc(data: LongDataset) -> LtrcDataset:
    """Convert measurement rows into LTRC risk intervals.

    Subject with times t_1 < ... < t_n and event tuple (T, d) yields rows
    (t_k, t_{k+1}, 0) for k < n and (t_n, T, d).  A zero-length final
    interval (t_n == T) is dropped after moving its status to the
    preceding row.
    """
    sub_idx, L, R, status, outcome, covs = [], [], [], [], [], []
    for i in range(data.n_subjects):
        sl = data.subject_slice(i)
        t = data.times[sl]
        n = t.shape[0]
        T = data.event_time[i]
        d = int(data.status[i])
        if T < t[-1]:
            raise InconsistencyError(
                f"subject {data.subject_ids[i]!r}: event before last measurement"
            )
        ends = np.concatenate([t[1:], [T]])
        keep = np.arange(n)
        row_status = np.zeros(n, dtype=np.int8)
        row_status[-1] = d
        if ends[-1] == t[-1]:
            # empty final interval: transfer status, drop the row
            keep = keep[:-1]
            if keep.size:
                row_status[-2] = d
        if keep.size == 0:
            continue
        sub_idx.append(np.full(keep.size, i))
        L.append(t[keep])
        R.append(ends[keep])
        status.append(row_status[keep])
        outcome.append(data.outcome[sl][keep])
        covs.append(data.covariates[sl][keep])
    if not L:
        raise EmptySubjectError("no risk intervals remain after conversion")
    return LtrcDataset(
        subject_ids=data.subject_ids,
        subject_index=np.concatenate(sub_idx),
        L=np.concatenate(L),
        R=np.concatenate(R),
        status=np.concatenate(status),
        outcome=np.concatenate(outcome),
        covariates=np.vstack(covs),
        covariate_names=data.covariate_names,
    )


def first_encountered(data: LongDataset, names) -> LongDataset:
    """Replace each named covariate by the subject's first recorded value.

    Mimics the baseline-value conversion applied to time-varying
    covariates by software that cannot use them; idempotent.
    """
    names = list(names)
    new_cov = data.covariates.copy()
    col_idx = []
    for name in names:
        try:
            col_idx.append(data.covariate_names.index(name))
        except ValueError:
            raise NamedColumnError(f"unknown covariate {name!r}") from None
    for i in range(data.n_subjects):
        sl = data.subject_slice(i)
        for j in col_idx:
            new_cov[sl, j] = new_cov[sl.start, j]
    return replace(data, covariates=new_cov)
