"""Synthetic data generators for the simulation bench.

Five covariates drive everything: X1, X2 determine a four-class latent
structure, X3, X4, X5 enter the hazard with class-specific slopes, and
the longitudinal outcome is a class intercept plus subject and residual
noise.  Conditional on the latent class, outcome and event time are
independent by construction.

Covariates are either constant per subject or piecewise constant with
one change point drawn on [1, 3].  Event times come from exact
inversion of the piecewise cumulative hazard, conditioned on surviving
past the subject's entry (left-truncation) time; censoring times are
entry plus an exponential whose rate is calibrated by Monte Carlo to a
target censored fraction.  All randomness flows through named
substreams of a counter-based generator, so toggling censoring leaves
event times untouched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .data import LongDataset, VariableRoles
from .errors import CalibrationError, JlctError

STRUCTURES = ("tree", "linear", "nonlinear", "asymmetric", "null")
HAZARDS = ("exponential", "weibull-d", "weibull-i")
CENSORINGS = ("none", "light", "heavy")

TREE_WEIGHTS = np.array([[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]])
LINEAR_WEIGHTS = np.array([[0.8, -0.6], [0.9, 0.5], [-0.8, 0.6], [0.5, 0.9]])

# class-specific slopes on (X3, X4, X5), rows are classes 1..4
SLOPES = {
    "exponential": np.array(
        [[0.0, 0.0, 0.0], [0.56, 0.56, 0.09], [0.92, 0.92, 0.15], [1.46, 1.46, 0.24]]
    ),
    "weibull-d": np.array(
        [[-1.17, -1.17, -0.19], [-0.66, -0.66, -0.11], [-0.55, -0.55, -0.09],
         [0.0, 0.0, 0.0]]
    ),
    "weibull-i": np.array(
        [[-3.22, -3.22, -0.54], [-2.26, -2.26, -0.38], [-1.53, -1.53, -0.26],
         [0.0, 0.0, 0.0]]
    ),
}

HAZARD_PARAMS = {
    "exponential": {"rate": 0.1},
    "weibull-d": {"shape": 0.9, "scale": 1.0},
    "weibull-i": {"shape": 3.0, "scale": 2.0},
}

CLASS_INTERCEPTS = np.array([0.0, 1.0, 1.0, 2.0])
CENSOR_TARGETS = {"light": 0.2, "heavy": 0.5}

COVARIATE_NAMES = ("X1", "X2", "X3", "X4", "X5")

_STREAMS = ("covariates", "classes", "survival", "censoring", "longitudinal")

_CALIBRATION_SEED = 151_554_001  # internal; keeps cached constants reproducible
_CALIBRATION_DRAWS = 100_000
_CENSOR_DRAWS = 10_000


@dataclass(frozen=True)
class SimConfig:
    """One generating scenario."""

    n_subjects: int
    structure: str = "tree"
    p0: float = 1.0
    hazard: str = "weibull-i"
    censoring: str = "light"
    time_varying: bool = True
    seed: int = 0
    sigma_v: float = 0.2
    sigma_e: float = 0.1

    def __post_init__(self):
        if self.structure not in STRUCTURES:
            raise JlctError(f"unknown structure {self.structure!r}")
        if self.hazard not in HAZARDS:
            raise JlctError(f"unknown hazard {self.hazard!r}")
        if self.censoring not in CENSORINGS:
            raise JlctError(f"unknown censoring level {self.censoring!r}")
        if not 0.25 <= self.p0 <= 1.0:
            raise JlctError("p0 must lie in [0.25, 1]")
        if self.n_subjects < 1:
            raise JlctError("n_subjects must be positive")

    def to_dict(self) -> dict:
        return {
            "n_subjects": self.n_subjects,
            "structure": self.structure,
            "p0": self.p0,
            "hazard": self.hazard,
            "censoring": self.censoring,
            "time_varying": self.time_varying,
            "seed": self.seed,
            "sigma_v": self.sigma_v,
            "sigma_e": self.sigma_e,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        return cls(**d)


def streams(seed: int) -> dict[str, np.random.Generator]:
    """Named substreams of a counter-based generator."""
    return {
        name: np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, i))))
        for i, name in enumerate(_STREAMS)
    }


# ---------------------------------------------------------------------------
# baseline hazards
# ---------------------------------------------------------------------------


def cumulative_baseline(hazard: str, t):
    t = np.asarray(t, dtype=float)
    params = HAZARD_PARAMS[hazard]
    if hazard == "exponential":
        return params["rate"] * t
    return (t / params["scale"]) ** params["shape"]


def inverse_cumulative_baseline(hazard: str, h):
    h = np.asarray(h, dtype=float)
    params = HAZARD_PARAMS[hazard]
    if hazard == "exponential":
        return h / params["rate"]
    return params["scale"] * h ** (1.0 / params["shape"])


def sample_event_time(hazard: str, seg_ends, seg_mults, entry: float, e_std: float) -> float:
    """Invert the piecewise cumulative hazard at H(entry) + e_std.

    ``seg_ends`` are segment right endpoints (last one inf); the
    multiplier is constant within each segment.  Conditioning on
    survival past ``entry`` is exactly the H(entry) offset.
    """
    h_entry = 0.0
    start = 0.0
    for end, mult in zip(seg_ends, seg_mults):
        seg_hi = min(entry, end)
        if seg_hi > start:
            h_entry += mult * float(
                cumulative_baseline(hazard, seg_hi) - cumulative_baseline(hazard, start)
            )
        if end >= entry:
            break
        start = end
    target = h_entry + e_std
    acc = 0.0
    start = 0.0
    for end, mult in zip(seg_ends, seg_mults):
        h0_start = float(cumulative_baseline(hazard, start))
        if np.isfinite(end):
            h0_end = float(cumulative_baseline(hazard, end))
            seg_total = mult * (h0_end - h0_start)
            if acc + seg_total >= target:
                return float(
                    inverse_cumulative_baseline(hazard, h0_start + (target - acc) / mult)
                )
            acc += seg_total
            start = end
        else:
            return float(
                inverse_cumulative_baseline(hazard, h0_start + (target - acc) / mult)
            )
    raise JlctError("piecewise hazard did not cover the target mass")


# ---------------------------------------------------------------------------
# latent classes
# ---------------------------------------------------------------------------


def _scores(structure: str, x1, x2) -> np.ndarray:
    weights = TREE_WEIGHTS if structure == "tree" else LINEAR_WEIGHTS
    z1 = 2.0 * np.asarray(x1) - 1.0
    z2 = 2.0 * np.asarray(x2) - 1.0
    return np.outer(z1, weights[:, 0]) + np.outer(z2, weights[:, 1])


def majority_class(structure: str, x1, x2) -> np.ndarray:
    """Structure-determined class (1..4) for each (x1, x2) pair."""
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if structure in ("tree", "linear"):
        return np.argmax(_scores(structure, x1, x2), axis=1) + 1
    if structure == "nonlinear":
        in_lower = x1**2 + x2**2 <= 0.75**2
        in_upper = x1**2 + (1.0 - x2) ** 2 <= 0.75**2
        out = np.full(x1.shape, 3, dtype=np.int64)
        out[in_lower & ~in_upper] = 1
        out[in_upper & ~in_lower] = 2
        out[in_lower & in_upper] = 4
        return out
    if structure == "asymmetric":
        out = np.full(x1.shape, 1, dtype=np.int64)
        low = x1 <= 0.75
        out[low & (x2 <= 0.33)] = 2
        out[low & (x2 > 0.33) & (x2 <= 0.67)] = 3
        out[low & (x2 > 0.67)] = 4
        return out
    if structure == "null":
        return np.full(x1.shape, 4, dtype=np.int64)
    raise JlctError(f"unknown structure {structure!r}")


_calibration_cache: dict[tuple, float] = {}


def calibrate_concentration(structure: str, p0: float) -> float:
    """Concentration constant C with mean majority probability p0.

    Softmax structures only (tree, linear); the endpoints map to C = 0
    and C = inf exactly.  The Monte-Carlo average over fresh covariate
    draws matches p0 to within 0.005.
    """
    if structure not in ("tree", "linear"):
        raise JlctError("only the softmax structures use a concentration constant")
    if not 0.25 <= p0 <= 1.0:
        raise CalibrationError("p0 below the uniform floor of 0.25 cannot be reached")
    if p0 == 0.25:
        return 0.0
    if p0 == 1.0:
        return np.inf
    key = (structure, round(p0, 12))
    if key in _calibration_cache:
        return _calibration_cache[key]
    rng = np.random.Generator(np.random.Philox(_CALIBRATION_SEED))
    x1 = rng.uniform(0, 1, _CALIBRATION_DRAWS)
    x2 = rng.uniform(0, 1, _CALIBRATION_DRAWS)
    F = _scores(structure, x1, x2)
    top = F.max(axis=1)

    def mean_majority(c: float) -> float:
        w = np.exp(c * (F - top[:, None]))
        return float((w.max(axis=1) / w.sum(axis=1)).mean())

    lo, hi = 0.0, 8.0
    while mean_majority(hi) < p0:
        hi *= 2.0
        if hi > 1e6:
            raise CalibrationError(f"could not bracket C for p0={p0}")
    c_star = float(brentq(lambda c: mean_majority(c) - p0, lo, hi, xtol=1e-10))
    if abs(mean_majority(c_star) - p0) > 0.005:
        raise CalibrationError("calibrated constant misses the target probability")
    _calibration_cache[key] = c_star
    return c_star


def draw_classes(structure: str, p0: float, x1, x2, u: np.ndarray) -> np.ndarray:
    """Class draw (1..4) per row given uniforms ``u``.

    Softmax structures use the calibrated concentration constant; the
    region structures mix the majority class with weight p0 directly.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    g0 = majority_class(structure, x1, x2)
    if structure == "null" or p0 == 1.0:
        return g0
    if structure in ("tree", "linear"):
        c = calibrate_concentration(structure, p0)
        F = _scores(structure, x1, x2)
        w = np.exp(c * (F - F.max(axis=1, keepdims=True)))
        probs = w / w.sum(axis=1, keepdims=True)
    else:
        probs = np.full((x1.size, 4), (1.0 - p0) / 3.0)
        probs[np.arange(x1.size), g0 - 1] = p0
    cum = np.cumsum(probs, axis=1)
    idx = (u[:, None] > cum).sum(axis=1)
    return np.minimum(idx, 3) + 1


# ---------------------------------------------------------------------------
# covariates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CovariateDraws:
    """Per-subject covariate values, one or two segments."""

    pre: np.ndarray  # (N, 5)
    post: np.ndarray | None  # (N, 5) when time-varying
    change: np.ndarray | None  # (N,) change points

    def value_at(self, subject: int, t: float) -> np.ndarray:
        if self.post is None or t <= self.change[subject]:
            return self.pre[subject]
        return self.post[subject]


def gen_covariates(config: SimConfig, rng: np.random.Generator) -> CovariateDraws:
    """Draw the five covariates, piecewise constant when time-varying."""
    n = config.n_subjects
    pre = np.column_stack(
        [
            rng.uniform(0, 1, n),
            rng.uniform(0, 1, n),
            rng.integers(0, 2, n).astype(float),
            rng.uniform(0, 1, n),
            rng.integers(1, 6, n).astype(float),
        ]
    )
    if not config.time_varying:
        return CovariateDraws(pre=pre, post=None, change=None)
    change = rng.uniform(1, 3, n)
    post = np.column_stack(
        [
            np.clip(pre[:, 0] + rng.uniform(-0.3, 0.3, n), 0.0, 1.0),
            np.clip(pre[:, 1] + rng.uniform(-0.3, 0.3, n), 0.0, 1.0),
            rng.integers(0, 2, n).astype(float),
            np.clip(pre[:, 3] + rng.uniform(-0.3, 0.3, n), 0.0, 1.0),
            np.clip(pre[:, 4] + rng.integers(-1, 2, n), 1.0, 5.0),
        ]
    )
    return CovariateDraws(pre=pre, post=post, change=change)


# ---------------------------------------------------------------------------
# censoring calibration
# ---------------------------------------------------------------------------

_censor_cache: dict[tuple, float] = {}


def _subject_multipliers(config: SimConfig, cov: CovariateDraws,
                         pre_class: np.ndarray, post_class: np.ndarray | None):
    slopes = SLOPES[config.hazard]
    m_pre = np.exp(np.sum(slopes[pre_class - 1] * cov.pre[:, 2:5], axis=1))
    if cov.post is None:
        return m_pre, None
    m_post = np.exp(np.sum(slopes[post_class - 1] * cov.post[:, 2:5], axis=1))
    return m_pre, m_post


def _draw_survival_core(config: SimConfig, cov: CovariateDraws, pre_class, post_class,
                        rng: np.random.Generator):
    """Entry times and event times via conditional hazard inversion."""
    n = config.n_subjects
    entry = rng.uniform(0, 1, n)
    e_std = rng.exponential(1.0, n)
    m_pre, m_post = _subject_multipliers(config, cov, pre_class, post_class)
    T = np.empty(n)
    for i in range(n):
        if cov.post is None:
            ends, mults = (np.inf,), (m_pre[i],)
        else:
            ends = (float(cov.change[i]), np.inf)
            mults = (m_pre[i], m_post[i])
        T[i] = sample_event_time(config.hazard, ends, mults, float(entry[i]),
                                 float(e_std[i]))
    return entry, T


def censoring_rate(config: SimConfig) -> float:
    """Exponential censoring rate hitting the target censored fraction.

    Solved once per (structure, hazard, p0, time_varying, level) by
    bisection against a fixed-seed Monte-Carlo sample of the generator,
    with common random numbers across rate candidates.
    """
    if config.censoring == "none":
        return 0.0
    target = CENSOR_TARGETS[config.censoring]
    key = (config.structure, config.hazard, round(config.p0, 12),
           config.time_varying, config.censoring)
    if key in _censor_cache:
        return _censor_cache[key]

    mc = SimConfig(
        n_subjects=_CENSOR_DRAWS,
        structure=config.structure,
        p0=config.p0,
        hazard=config.hazard,
        censoring="none",
        time_varying=config.time_varying,
        seed=_CALIBRATION_SEED,
    )
    rngs = streams(mc.seed)
    cov = gen_covariates(mc, rngs["covariates"])
    pre_class, post_class = _draw_segment_classes(mc, cov, rngs["classes"])
    entry, T = _draw_survival_core(mc, cov, pre_class, post_class, rngs["survival"])
    e2 = rngs["censoring"].exponential(1.0, mc.n_subjects)

    def censored_fraction(rate: float) -> float:
        return float(np.mean(entry + e2 / rate < T))

    lo, hi = 1e-6, 1.0
    while censored_fraction(hi) < target:
        hi *= 4.0
        if hi > 1e9:
            raise CalibrationError("censoring rate bracket blew up")
    while censored_fraction(lo) > target:
        lo /= 4.0
        if lo < 1e-12:
            raise CalibrationError("censoring rate bracket collapsed")
    for _ in range(60):
        mid = np.sqrt(lo * hi)
        if censored_fraction(mid) < target:
            lo = mid
        else:
            hi = mid
    rate = float(np.sqrt(lo * hi))
    if abs(censored_fraction(rate) - target) > 0.03:
        raise CalibrationError("calibrated censoring rate misses its target")
    _censor_cache[key] = rate
    return rate


# ---------------------------------------------------------------------------
# full generator
# ---------------------------------------------------------------------------


def _draw_segment_classes(config: SimConfig, cov: CovariateDraws,
                          rng: np.random.Generator):
    n = config.n_subjects
    u_pre = rng.uniform(0, 1, n)
    pre = draw_classes(config.structure, config.p0, cov.pre[:, 0], cov.pre[:, 1], u_pre)
    if cov.post is None:
        return pre, None
    u_post = rng.uniform(0, 1, n)
    post = draw_classes(
        config.structure, config.p0, cov.post[:, 0], cov.post[:, 1], u_post
    )
    return pre, post


@dataclass(frozen=True)
class TrueSurvival:
    """Closed-form survival curve of one simulated subject."""

    hazard: str
    seg_ends: tuple[float, ...]
    seg_mults: tuple[float, ...]

    def at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        total = np.zeros(t.shape)
        start = 0.0
        for end, mult in zip(self.seg_ends, self.seg_mults):
            hi = np.minimum(t, end)
            seg = np.clip(
                cumulative_baseline(self.hazard, np.maximum(hi, start))
                - cumulative_baseline(self.hazard, start),
                0.0,
                None,
            )
            total += mult * seg
            start = end
            if not np.isfinite(end):
                break
        return np.exp(-total)

    def breakpoints(self) -> np.ndarray:
        finite = [e for e in self.seg_ends if np.isfinite(e)]
        return np.asarray(finite, dtype=float)


@dataclass(frozen=True)
class Truth:
    """Sidecar truth for metric computation."""

    config: SimConfig
    row_class: np.ndarray  # true class of each measurement row
    subject_segments: list  # per subject: [(end, class, multiplier), ...]
    subject_effects: np.ndarray  # v_i
    slope_table: np.ndarray
    concentration: float

    def true_curve(self, subject: int) -> TrueSurvival:
        segs = self.subject_segments[subject]
        return TrueSurvival(
            hazard=self.config.hazard,
            seg_ends=tuple(end for end, _, _ in segs),
            seg_mults=tuple(mult for _, _, mult in segs),
        )

    def true_slopes_for_rows(self) -> np.ndarray:
        return self.slope_table[self.row_class - 1]

    def to_json(self) -> str:
        return json.dumps(
            {
                "config": self.config.to_dict(),
                "row_class": self.row_class.tolist(),
                "subject_segments": [
                    [[end if np.isfinite(end) else None, int(g), float(m)]
                     for end, g, m in segs]
                    for segs in self.subject_segments
                ],
                "subject_effects": self.subject_effects.tolist(),
                "slope_table": self.slope_table.tolist(),
                "concentration": None if np.isinf(self.concentration)
                else self.concentration,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "Truth":
        d = json.loads(text)
        return cls(
            config=SimConfig.from_dict(d["config"]),
            row_class=np.asarray(d["row_class"], dtype=np.int64),
            subject_segments=[
                [(np.inf if end is None else float(end), int(g), float(m))
                 for end, g, m in segs]
                for segs in d["subject_segments"]
            ],
            subject_effects=np.asarray(d["subject_effects"], dtype=float),
            slope_table=np.asarray(d["slope_table"], dtype=float),
            concentration=np.inf if d["concentration"] is None else d["concentration"],
        )


@dataclass(frozen=True)
class SimResult:
    data: LongDataset
    truth: Truth


def simulation_roles() -> VariableRoles:
    """Roles for the generated CSV layout."""
    return VariableRoles(
        subject_col="ID",
        time_col="t",
        outcome_col="y",
        event_time_col="T",
        status_col="delta",
        split_vars=COVARIATE_NAMES,
        survival_vars=("X3", "X4", "X5"),
        fixed_vars=COVARIATE_NAMES,
        random_vars=(),
    )


def generate(config: SimConfig) -> SimResult:
    """Generate one dataset plus its truth sidecar."""
    rngs = streams(config.seed)
    cov = gen_covariates(config, rngs["covariates"])
    pre_class, post_class = _draw_segment_classes(config, cov, rngs["classes"])
    entry, T = _draw_survival_core(config, cov, pre_class, post_class, rngs["survival"])

    n = config.n_subjects
    if config.censoring == "none":
        observed = T.copy()
        status = np.ones(n, dtype=np.int8)
    else:
        rate = censoring_rate(config)
        censor = entry + rngs["censoring"].exponential(1.0, n) / rate
        observed = np.minimum(T, censor)
        status = (T <= censor).astype(np.int8)

    rng_long = rngs["longitudinal"]
    counts = 1 + rng_long.poisson(1.0, n)
    v = rng_long.normal(0.0, config.sigma_v, n)

    intercepts = np.zeros(4) if config.structure == "null" else CLASS_INTERCEPTS
    m_pre, m_post = _subject_multipliers(config, cov, pre_class, post_class)

    ids, starts = [], [0]
    times_all, y_all, cov_all, row_class_all = [], [], [], []
    segments = []
    for i in range(n):
        inner = rng_long.uniform(entry[i], observed[i], int(counts[i]))
        times = np.unique(np.concatenate([[entry[i]], inner]))
        times = times[times <= observed[i]]
        if cov.post is None:
            row_cls = np.full(times.size, pre_class[i], dtype=np.int64)
            row_cov = np.tile(cov.pre[i], (times.size, 1))
            segments.append([(np.inf, int(pre_class[i]), float(m_pre[i]))])
        else:
            after = times > cov.change[i]
            row_cls = np.where(after, post_class[i], pre_class[i]).astype(np.int64)
            row_cov = np.where(after[:, None], cov.post[i], cov.pre[i])
            segments.append(
                [
                    (float(cov.change[i]), int(pre_class[i]), float(m_pre[i])),
                    (np.inf, int(post_class[i]), float(m_post[i])),
                ]
            )
        eps = rng_long.normal(0.0, config.sigma_e, times.size)
        y = intercepts[row_cls - 1] + v[i] + eps
        ids.append(str(i + 1))
        starts.append(starts[-1] + times.size)
        times_all.append(times)
        y_all.append(y)
        cov_all.append(row_cov)
        row_class_all.append(row_cls)

    data = LongDataset(
        subject_ids=ids,
        starts=np.asarray(starts),
        times=np.concatenate(times_all),
        outcome=np.concatenate(y_all),
        covariates=np.vstack(cov_all),
        covariate_names=COVARIATE_NAMES,
        event_time=observed,
        status=status,
    )
    truth = Truth(
        config=config,
        row_class=np.concatenate(row_class_all),
        subject_segments=segments,
        subject_effects=v,
        slope_table=SLOPES[config.hazard],
        concentration=(
            calibrate_concentration(config.structure, config.p0)
            if config.structure in ("tree", "linear") and config.p0 > 0.25
            else 0.0
        ),
    )
    return SimResult(data=data, truth=truth)
