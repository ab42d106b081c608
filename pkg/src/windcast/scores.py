"""Forecast verification: proper scores, calibration diagnostics, point metrics.

Scores come with block-bootstrap standard errors (default block length 24 h)
because forecast errors at neighboring origins are serially dependent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .density import PredictiveCDF
from .errors import DataError
from .market import QUAD_POINTS, _edges, gauss2_integral

__all__ = [
    "pinball",
    "crps",
    "sample_crps",
    "energy_score",
    "point_metrics",
    "PointMetrics",
    "reliability",
    "ReliabilityTable",
    "randomized_pit",
    "block_bootstrap_se",
    "ScoreReport",
    "score_report",
]


def pinball(quantiles, observations, alpha: float) -> float:
    """Mean check loss of quantile forecasts at nominal level alpha."""
    if not 0.0 < alpha < 1.0:
        raise DataError("alpha must lie strictly inside (0, 1)")
    q = np.asarray(quantiles, dtype=float)
    y = np.asarray(observations, dtype=float)
    if q.shape != y.shape or q.size == 0:
        raise DataError("need matched, nonempty forecast/observation pairs")
    u = y - q
    return float(np.mean(u * (alpha - (u < 0.0))))


def crps(cdf: PredictiveCDF, y: float) -> float:
    """Continuous ranked probability score by quadrature on [0, 1].

    The 2001-point grid is refined with the observation and any CDF jump
    points so degenerate and boundary-mass cases integrate exactly.
    """
    if not 0.0 <= y <= 1.0:
        raise DataError("observation must lie in [0, 1]")
    base = np.linspace(0.0, 1.0, QUAD_POINTS)
    extra = np.asarray([y, *cdf.jump_points()], dtype=float)
    edges = _edges(base, 0.0, 1.0, extra)

    def integrand(x):
        return (cdf.eval(x) - (x >= y)) ** 2

    return gauss2_integral(integrand, edges)


def sample_crps(ensemble, y: float) -> float:
    """Ensemble CRPS estimator: E|X - y| - 0.5 E|X - X'|."""
    x = np.sort(np.asarray(ensemble, dtype=float))
    j = x.size
    if j < 2:
        raise DataError("ensemble estimator needs at least two members")
    term1 = float(np.mean(np.abs(x - y)))
    # sorted identity: sum over ordered pairs of |x_i - x_j| = 2 * dot(weights, x)
    weights = 2.0 * np.arange(1, j + 1) - j - 1
    term2 = 2.0 * float(np.dot(weights, x)) / (j * j)
    return term1 - 0.5 * term2


def energy_score(paths, observation) -> float:
    """Multivariate ensemble energy score over the flattened window.

    ES = mean_j ||x_j - y|| - 1/(2 J^2) sum_ij ||x_i - x_j||.
    """
    flat = getattr(paths, "flat", None)
    if callable(flat):  # TrajectorySet
        x = flat()
    else:
        x = np.asarray(paths, dtype=float)
        if x.ndim != 2:
            x = x.reshape(x.shape[0], -1)
    y = np.asarray(observation, dtype=float).reshape(-1)
    j, d = x.shape
    if j < 2:
        raise DataError("energy score needs an ensemble of at least two paths")
    if y.shape != (d,):
        raise DataError(f"observation dim {y.shape} does not match paths dim {d}")
    term1 = float(np.mean(np.linalg.norm(x - y[None, :], axis=1)))
    if d == 1:
        xs = np.sort(x[:, 0])
        weights = 2.0 * np.arange(1, j + 1) - j - 1
        pair_sum = 2.0 * float(np.dot(weights, xs))  # sum over ordered pairs
    else:
        pair_sum = 0.0
        chunk = max(1, 2_000_000 // max(j, 1))
        for lo in range(0, j, chunk):
            block = x[lo : lo + chunk]
            diff = block[:, None, :] - x[None, :, :]
            pair_sum += float(np.sum(np.sqrt(np.sum(diff**2, axis=2))))
    return term1 - pair_sum / (2.0 * j * j)


@dataclass(frozen=True)
class PointMetrics:
    rmse: float
    mae: float
    bias: float
    n: int


def point_metrics(forecasts, observations) -> PointMetrics:
    """RMSE, MAE and bias of point forecasts (bias = mean forecast error)."""
    f = np.asarray(forecasts, dtype=float)
    y = np.asarray(observations, dtype=float)
    if f.shape != y.shape or f.size == 0:
        raise DataError("need matched, nonempty forecast/observation pairs")
    keep = ~(np.isnan(f) | np.isnan(y))
    if not keep.any():
        raise DataError("no usable pairs")
    e = f[keep] - y[keep]
    return PointMetrics(
        float(np.sqrt(np.mean(e**2))), float(np.mean(np.abs(e))), float(np.mean(e)),
        int(e.size),
    )


def randomized_pit(cdfs, observations, rng: np.random.Generator) -> np.ndarray:
    """PIT values, drawn uniformly inside any probability mass at the observation.

    Calibrated forecasts then give exactly uniform PIT, even for
    discrete-continuous mixtures with boundary masses.
    """
    y = np.asarray(observations, dtype=float)
    out = np.empty(y.size)
    for i, (cdf, obs) in enumerate(zip(cdfs, y)):
        lo, hi = cdf.interval(float(obs))
        out[i] = lo + rng.uniform() * (hi - lo) if hi > lo else hi
    return out


@dataclass(frozen=True)
class ReliabilityTable:
    """Empirical coverage per nominal level, optionally per conditioner bin."""

    levels: np.ndarray
    coverage: np.ndarray
    counts: np.ndarray
    by_bin: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def gap(self) -> np.ndarray:
        return self.coverage - self.levels


@dataclass(frozen=True)
class ReliabilityResult:
    table: ReliabilityTable
    pit: np.ndarray
    ks_statistic: float
    ks_pvalue: float


def reliability(
    cdfs,
    observations,
    levels,
    rng: np.random.Generator | None = None,
    min_pairs: int = 100,
    bin_labels=None,
) -> ReliabilityResult:
    """Coverage of the defining quantiles plus a randomized-PIT uniformity check.

    ``bin_labels`` (optional, one label per pair) adds conditional coverage
    rows, e.g. by power level or lead bucket.
    """
    cdfs = list(cdfs)
    y = np.asarray(observations, dtype=float)
    levels = np.asarray(levels, dtype=float)
    if len(cdfs) != y.size:
        raise DataError("one predictive CDF per observation required")
    if y.size < min_pairs:
        raise DataError(f"insufficient sample: {y.size} pairs, need {min_pairs}")
    quantiles = np.empty((y.size, levels.size))
    for i, cdf in enumerate(cdfs):
        quantiles[i] = cdf.inverse(levels)
    hits = y[:, None] <= quantiles
    coverage = hits.mean(axis=0)
    counts = np.full(levels.size, y.size)
    by_bin: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    if bin_labels is not None:
        labels = np.asarray(bin_labels)
        for lab in np.unique(labels):
            sel = labels == lab
            by_bin[str(lab)] = (hits[sel].mean(axis=0), np.full(levels.size, int(sel.sum())))
    if rng is None:
        rng = np.random.default_rng(0)
    pit = randomized_pit(cdfs, y, rng)
    ks = stats.kstest(pit, "uniform")
    table = ReliabilityTable(levels, coverage, counts, by_bin)
    return ReliabilityResult(table, pit, float(ks.statistic), float(ks.pvalue))


def block_bootstrap_se(
    samples: np.ndarray,
    block_length: int = 24,
    n_boot: int = 200,
    seed: int = 0,
) -> np.ndarray:
    """SE of the mean by circular block bootstrap along axis 0."""
    x = np.asarray(samples, dtype=float)
    one_dim = x.ndim == 1
    if one_dim:
        x = x[:, None]
    n = x.shape[0]
    if n == 0:
        raise DataError("empty sample")
    block = max(1, min(block_length, n))
    n_blocks = int(np.ceil(n / block))
    rng = np.random.default_rng(seed)
    means = np.empty((n_boot, x.shape[1]))
    offsets = np.arange(block)
    for b in range(n_boot):
        starts = rng.integers(0, n, size=n_blocks)
        idx = (starts[:, None] + offsets[None, :]).reshape(-1)[:n] % n
        means[b] = x[idx].mean(axis=0)
    se = means.std(axis=0, ddof=1)
    return se[0] if one_dim else se


@dataclass(frozen=True)
class ScoreReport:
    """Per-lead and overall score values with bootstrap standard errors."""

    metric: str
    leads: tuple[int, ...]
    values: np.ndarray
    se: np.ndarray
    overall: float
    overall_se: float
    n: int


def score_report(
    metric: str,
    per_origin_scores: np.ndarray,
    leads,
    block_length: int = 24,
    n_boot: int = 200,
    seed: int = 0,
) -> ScoreReport:
    """Summarize an (origins, leads) score matrix, bootstrapping over origins."""
    scores = np.asarray(per_origin_scores, dtype=float)
    if scores.ndim == 1:
        scores = scores[:, None]
    if scores.shape[0] == 0:
        raise DataError("empty sample")
    leads = tuple(int(k) for k in leads)
    if scores.shape[1] != len(leads):
        raise DataError("one score column per lead required")
    values = np.nanmean(scores, axis=0)
    per_origin_overall = np.nanmean(scores, axis=1)
    filled = np.where(np.isnan(scores), values[None, :], scores)
    se = block_bootstrap_se(filled, block_length, n_boot, seed)
    overall_se = float(
        block_bootstrap_se(per_origin_overall, block_length, n_boot, seed)
    )
    return ScoreReport(
        metric, leads, values, np.atleast_1d(se),
        float(np.nanmean(per_origin_overall)), overall_se, int(scores.shape[0]),
    )
