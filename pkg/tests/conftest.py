"""Shared fixtures and independent oracles.

The oracles here deliberately re-derive quantities from first
principles (explicit risk-set loops, grid searches, quadrature) so the
package code is checked against a second, dumber implementation.
"""

import numpy as np
import pytest

from jlct.data import LongDataset, LtrcDataset


def oracle_partial_loglik(L, R, delta, x, b):
    """Breslow log partial likelihood, one covariate, explicit risk sets.

    ``b`` may be a scalar or a grid; the risk sets are formed by brute
    force per event time, independent of the package implementation.
    """
    L = np.asarray(L, float)
    R = np.asarray(R, float)
    delta = np.asarray(delta, int)
    x = np.asarray(x, float)
    b = np.asarray(b, float)
    ll = np.zeros(b.shape)
    for t in np.unique(R[delta == 1]):
        at_risk = (L < t) & (t <= R)
        denom = np.exp(np.multiply.outer(x[at_risk], b)).sum(axis=0)
        for i in np.where((R == t) & (delta == 1))[0]:
            ll += x[i] * b - np.log(denom)
    return float(ll) if ll.ndim == 0 else ll


def grid_search_coefficient(L, R, delta, x, lo=-10.0, hi=10.0, step=1e-4):
    """Argmax of the oracle partial likelihood over a 1-D grid."""
    grid = np.arange(lo, hi + step / 2, step)
    vals = oracle_partial_loglik(L, R, delta, x, grid)
    return grid[int(np.argmax(vals))], float(vals.max())


def make_ltrc(L, R, status, covariates, names=("x",), outcome=None, subject_index=None):
    """Assemble an LtrcDataset from plain lists."""
    L = np.asarray(L, float)
    n = L.shape[0]
    cov = np.asarray(covariates, float)
    if cov.ndim == 1:
        cov = cov[:, None]
    return LtrcDataset(
        subject_ids=tuple(f"s{i}" for i in range(n)),
        subject_index=np.arange(n) if subject_index is None else np.asarray(subject_index),
        L=L,
        R=np.asarray(R, float),
        status=np.asarray(status, np.int8),
        outcome=np.zeros(n) if outcome is None else np.asarray(outcome, float),
        covariates=cov,
        covariate_names=tuple(names),
    )


def make_long(subjects, covariate_names=("x",)):
    """Assemble a LongDataset from [(times, outcomes, covs, event, status)]."""
    ids, times, outcome, covs, ev, st = [], [], [], [], [], []
    starts = [0]
    for k, (t, y, c, T, d) in enumerate(subjects):
        t = np.asarray(t, float)
        ids.append(f"s{k}")
        times.append(t)
        outcome.append(np.asarray(y, float))
        c = np.asarray(c, float)
        covs.append(c if c.ndim == 2 else c[:, None])
        ev.append(T)
        st.append(d)
        starts.append(starts[-1] + t.size)
    return LongDataset(
        subject_ids=ids,
        starts=np.asarray(starts),
        times=np.concatenate(times),
        outcome=np.concatenate(outcome),
        covariates=np.vstack(covs),
        covariate_names=tuple(covariate_names),
        event_time=np.asarray(ev, float),
        status=np.asarray(st, np.int8),
    )


def random_small_ltrc(rng, max_rows=8):
    """Random tiny one-covariate LTRC set with at least one event."""
    while True:
        n = rng.integers(2, max_rows + 1)
        L = np.round(rng.uniform(0, 2, n), 3)
        R = np.round(L + rng.uniform(0.1, 2, n), 3)
        delta = (rng.random(n) < 0.6).astype(np.int8)
        x = np.round(rng.normal(0, 1, n), 3)
        if delta.sum() >= 2 and np.ptp(x) > 0:
            return make_ltrc(L, R, delta, x)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
