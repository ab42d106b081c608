"""Point forecasting models for a single target series.

All estimators are least-squares based: plain AR, threshold AR with an
observable regime rule, threshold AR with off-site lag terms, and
conditional-parametric variants whose coefficients vary smoothly with an
exogenous covariate (piecewise-linear over a node grid, fitted locally with
triangular kernel weights). Recursive fitting with exponential forgetting
covers slow parameter drift.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .data import SpaceTimeSeries
from .density import AdaptiveQuantileModel, fit_adaptive_qr
from .errors import DataError, NumericError

MIN_ROWS_PER_PARAM = 10


def _lag_vector(y: np.ndarray, t: int, lags: tuple[int, ...]) -> np.ndarray:
    """Regressors at origin t: value i steps back is y[t - i + 1] for lag i."""
    idx = np.array([t - i + 1 for i in lags])
    if idx.min() < 0:
        raise DataError("history does not cover the required lags")
    vals = y[idx]
    if np.isnan(vals).any():
        raise DataError("missing lag value in history")
    return vals


def lag_design(
    y: np.ndarray, lags: tuple[int, ...], lead: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Aligned (origins, X, target) for a lead-k model; rows with gaps dropped."""
    y = np.asarray(y, dtype=float)
    t_max_lag = max(lags)
    t_first = t_max_lag - 1
    t_last = y.size - 1 - lead
    if t_last < t_first:
        raise DataError("series too short for the requested lags and lead")
    origins = np.arange(t_first, t_last + 1)
    cols = [y[origins - i + 1] for i in lags]
    x = np.column_stack(cols)
    target = y[origins + lead]
    keep = ~(np.isnan(x).any(axis=1) | np.isnan(target))
    return origins[keep], x[keep], target[keep]


def _ols(x: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Intercept-augmented OLS; returns (coefs incl. intercept, sigma, rmse)."""
    n, p = x.shape
    design = np.column_stack([np.ones(n), x])
    if n < MIN_ROWS_PER_PARAM * (p + 1):
        raise DataError(
            f"too few rows: {n} usable, need {MIN_ROWS_PER_PARAM * (p + 1)}"
        )
    coef, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    if rank < p + 1:
        raise NumericError("rank-deficient design (collinear or constant regressors)")
    resid = target - design @ coef
    dof = max(n - (p + 1), 1)
    sigma = float(np.sqrt(resid @ resid / dof))
    rmse = float(np.sqrt(np.mean(resid**2)))
    return coef, sigma, rmse


@dataclass(frozen=True)
class ARModel:
    """Linear autoregression for one lead; iterated or direct k-step use."""

    lags: tuple[int, ...]
    intercept: float
    coefficients: tuple[float, ...]
    noise_sd: float
    lead: int = 1
    horizon_mode: str = "direct"
    insample_rmse: float = float("nan")

    def __post_init__(self) -> None:
        if len(set(self.lags)) != len(self.lags) or any(i < 1 for i in self.lags):
            raise DataError("lags must be distinct positive integers")
        if self.noise_sd < 0:
            raise DataError("noise sd must be nonnegative")
        if self.horizon_mode not in ("direct", "iterated"):
            raise DataError("horizon_mode must be 'direct' or 'iterated'")

    def predict_one(self, y: np.ndarray, t: int) -> float:
        vals = _lag_vector(np.asarray(y, dtype=float), t, self.lags)
        raw = self.intercept + float(np.dot(self.coefficients, vals))
        return float(np.clip(raw, 0.0, 1.0))


def fit_ar(
    y: np.ndarray,
    lags: tuple[int, ...] = (1,),
    lead: int = 1,
    horizon_mode: str = "direct",
) -> ARModel:
    _, x, target = lag_design(y, tuple(lags), lead)
    coef, sigma, rmse = _ols(x, target)
    return ARModel(
        tuple(lags), float(coef[0]), tuple(float(c) for c in coef[1:]), sigma,
        lead, horizon_mode, rmse,
    )


@dataclass(frozen=True)
class ThresholdRule:
    """Observable regime rule: strictly increasing thresholds on a covariate."""

    thresholds: tuple[float, ...]

    def __post_init__(self) -> None:
        if any(b <= a for a, b in zip(self.thresholds, self.thresholds[1:])):
            raise DataError("thresholds must be strictly increasing")

    @property
    def n_regimes(self) -> int:
        return len(self.thresholds) + 1

    def regime_of(self, value) -> np.ndarray:
        return np.searchsorted(np.asarray(self.thresholds), value, side="right")


@dataclass(frozen=True)
class TARModel:
    """Per-regime AR parameters switched by a threshold rule on a covariate."""

    lags: tuple[int, ...]
    rule: ThresholdRule
    intercepts: tuple[float, ...]
    coefficients: tuple[tuple[float, ...], ...]
    noise_sds: tuple[float, ...]
    lead: int = 1
    insample_rmse: float = float("nan")

    def __post_init__(self) -> None:
        r = self.rule.n_regimes
        if not (len(self.intercepts) == len(self.coefficients) == len(self.noise_sds) == r):
            raise DataError("one parameter set per regime required")

    def predict_one(self, y: np.ndarray, t: int, covariate: float | None = None) -> float:
        y = np.asarray(y, dtype=float)
        cov = y[t] if covariate is None else covariate
        if np.isnan(cov):
            raise DataError("regime covariate is missing")
        r = int(self.rule.regime_of(cov))
        vals = _lag_vector(y, t, self.lags)
        raw = self.intercepts[r] + float(np.dot(self.coefficients[r], vals))
        return float(np.clip(raw, 0.0, 1.0))


def fit_tar(
    y: np.ndarray,
    rule: ThresholdRule,
    lags: tuple[int, ...] = (1,),
    lead: int = 1,
    covariate: np.ndarray | None = None,
) -> TARModel:
    """Per-regime OLS; the regime covariate defaults to the last power value."""
    y = np.asarray(y, dtype=float)
    cov = y if covariate is None else np.asarray(covariate, dtype=float)
    if cov.shape != y.shape:
        raise DataError("covariate must align with the series")
    origins, x, target = lag_design(y, tuple(lags), lead)
    cov_rows = cov[origins]
    keep = ~np.isnan(cov_rows)
    origins, x, target, cov_rows = origins[keep], x[keep], target[keep], cov_rows[keep]
    regimes = rule.regime_of(cov_rows)
    intercepts, coefs, sds = [], [], []
    sq_err = 0.0
    for r in range(rule.n_regimes):
        sel = regimes == r
        coef, sigma, _ = _ols(x[sel], target[sel])
        intercepts.append(float(coef[0]))
        coefs.append(tuple(float(c) for c in coef[1:]))
        sds.append(sigma)
        resid = target[sel] - np.column_stack([np.ones(sel.sum()), x[sel]]) @ coef
        sq_err += float(resid @ resid)
    rmse = float(np.sqrt(sq_err / target.size))
    return TARModel(tuple(lags), rule, tuple(intercepts), tuple(coefs), tuple(sds), lead, rmse)


@dataclass(frozen=True)
class OffsiteTerms:
    """Lagged regressors borrowed from other sites, per target model."""

    lags_by_site: dict[str, tuple[int, ...]]

    def __post_init__(self) -> None:
        for site, lags in self.lags_by_site.items():
            if not lags:
                raise DataError(f"empty lag set for off-site {site!r}")
            if any(i < 1 for i in lags):
                raise DataError(f"off-site lags for {site!r} must be positive")

    def columns(self) -> list[tuple[str, int]]:
        return [(s, i) for s, lags in self.lags_by_site.items() for i in lags]


@dataclass(frozen=True)
class SpaceTimeARModel:
    """Threshold AR extended with off-site lag terms (per-regime coefficients)."""

    site: str
    base: TARModel
    offsite: OffsiteTerms
    offsite_coefficients: tuple[tuple[float, ...], ...]  # (regime, column)

    def predict_one(
        self,
        series: SpaceTimeSeries,
        t: int,
        covariate: float | None = None,
    ) -> float:
        y = series.column(self.site)
        cov = y[t] if covariate is None else covariate
        if np.isnan(cov):
            raise DataError("regime covariate is missing")
        r = int(self.base.rule.regime_of(cov))
        vals = _lag_vector(y, t, self.base.lags)
        raw = self.base.intercepts[r] + float(np.dot(self.base.coefficients[r], vals))
        for (other, lag), nu in zip(self.offsite.columns(), self.offsite_coefficients[r]):
            v = series.values[t - lag + 1, series.sites.index(other)]
            if np.isnan(v):
                raise DataError(f"missing off-site lag for {other!r}")
            raw += nu * v
        return float(np.clip(raw, 0.0, 1.0))


def fit_rst(
    series: SpaceTimeSeries,
    site: str,
    rule: ThresholdRule,
    lags: tuple[int, ...] = (1,),
    offsite: OffsiteTerms | None = None,
    lead: int = 1,
    covariate: np.ndarray | None = None,
) -> SpaceTimeARModel:
    """Regime-switching fit with off-site lag terms; off-site lags default {1,2}."""
    if offsite is None:
        offsite = OffsiteTerms(
            {s: (1, 2) for s in series.sites.names if s != site}
        )
    for other in offsite.lags_by_site:
        series.sites.index(other)  # validates existence
    y = series.column(site)
    cov = y if covariate is None else np.asarray(covariate, dtype=float)
    origins, x_own, target = lag_design(y, tuple(lags), lead)
    off_cols = []
    for other, lag in offsite.columns():
        col = series.values[origins - lag + 1, series.sites.index(other)]
        off_cols.append(col)
    x = np.column_stack([x_own, *off_cols]) if off_cols else x_own
    cov_rows = cov[origins]
    keep = ~(np.isnan(x).any(axis=1) | np.isnan(cov_rows))
    origins, x, target, cov_rows = origins[keep], x[keep], target[keep], cov_rows[keep]
    regimes = rule.regime_of(cov_rows)
    p_own = len(lags)
    intercepts, own_coefs, off_coefs, sds = [], [], [], []
    sq_err = 0.0
    for r in range(rule.n_regimes):
        sel = regimes == r
        coef, sigma, _ = _ols(x[sel], target[sel])
        intercepts.append(float(coef[0]))
        own_coefs.append(tuple(float(c) for c in coef[1 : 1 + p_own]))
        off_coefs.append(tuple(float(c) for c in coef[1 + p_own :]))
        sds.append(sigma)
        resid = target[sel] - np.column_stack([np.ones(sel.sum()), x[sel]]) @ coef
        sq_err += float(resid @ resid)
    rmse = float(np.sqrt(sq_err / target.size))
    base = TARModel(
        tuple(lags), rule, tuple(intercepts), tuple(own_coefs), tuple(sds), lead, rmse
    )
    return SpaceTimeARModel(site, base, offsite, tuple(off_coefs))


@dataclass(frozen=True)
class CovariateGrid:
    """Node grid for conditional-parametric coefficients.

    Periodic grids wrap at ``period`` (directions in degrees use 360); other
    covariates clamp to the outermost node.
    """

    nodes: tuple[float, ...]
    periodic: bool = False
    period: float = 360.0

    def __post_init__(self) -> None:
        if len(self.nodes) < 2:
            raise DataError("need at least two covariate nodes")
        if any(b <= a for a, b in zip(self.nodes, self.nodes[1:])):
            raise DataError("covariate nodes must be strictly increasing")
        if self.periodic and (self.nodes[-1] - self.nodes[0]) >= self.period:
            raise DataError("periodic nodes must span less than one period")

    @staticmethod
    def regular(lo: float, hi: float, n: int = 8, periodic: bool = False, period: float = 360.0):
        if periodic:
            nodes = tuple(lo + (hi - lo) * i / n for i in range(n))
        else:
            nodes = tuple(np.linspace(lo, hi, n))
        return CovariateGrid(nodes, periodic, period)

    def distance(self, x, node: float) -> np.ndarray:
        d = np.abs(np.asarray(x, dtype=float) - node)
        if self.periodic:
            d = np.minimum(d, self.period - d)
        return d

    def interp_weights(self, x: float) -> list[tuple[int, float]]:
        """Piecewise-linear interpolation weights over adjacent nodes."""
        nodes = np.asarray(self.nodes)
        if self.periodic:
            x = float(np.mod(x - nodes[0], self.period)) + nodes[0]
            if x >= nodes[-1]:
                span = self.period - (nodes[-1] - nodes[0])
                frac = (x - nodes[-1]) / span
                return [(len(nodes) - 1, 1.0 - frac), (0, frac)]
        if x <= nodes[0]:
            return [(0, 1.0)]
        if x >= nodes[-1]:
            return [(len(nodes) - 1, 1.0)]
        j = int(np.searchsorted(nodes, x, side="right"))
        frac = (x - nodes[j - 1]) / (nodes[j] - nodes[j - 1])
        return [(j - 1, 1.0 - frac), (j, frac)]

    def weight_matrix(self, x) -> np.ndarray:
        """Interpolation weights for many covariate values at once: (N, nodes)."""
        nodes = np.asarray(self.nodes)
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.zeros((xs.size, nodes.size))
        if self.periodic:
            xs = np.mod(xs - nodes[0], self.period) + nodes[0]
            wrap = xs >= nodes[-1]
            span = self.period - (nodes[-1] - nodes[0])
            frac_w = (xs[wrap] - nodes[-1]) / span
            out[np.nonzero(wrap)[0], nodes.size - 1] = 1.0 - frac_w
            out[np.nonzero(wrap)[0], 0] = frac_w
            inner = ~wrap
        else:
            lo = xs <= nodes[0]
            hi = xs >= nodes[-1]
            out[np.nonzero(lo)[0], 0] = 1.0
            out[np.nonzero(hi)[0], nodes.size - 1] = 1.0
            inner = ~(lo | hi)
        idx = np.nonzero(inner)[0]
        if idx.size:
            j = np.searchsorted(nodes, xs[idx], side="right")
            j = np.clip(j, 1, nodes.size - 1)
            frac = (xs[idx] - nodes[j - 1]) / (nodes[j] - nodes[j - 1])
            out[idx, j - 1] = 1.0 - frac
            out[idx, j] = frac
        return out


@dataclass(frozen=True)
class ConditionalARModel:
    """AR whose coefficients are piecewise-linear functions of a covariate."""

    lags: tuple[int, ...]
    grid: CovariateGrid
    node_coefficients: np.ndarray  # (nodes, 1 + p)
    noise_sd: float
    lead: int = 1
    insample_rmse: float = float("nan")

    def coefficients_at(self, x: float) -> np.ndarray:
        pairs = self.grid.interp_weights(x)
        return sum(w * self.node_coefficients[j] for j, w in pairs)

    def predict_one(self, y: np.ndarray, t: int, x: float) -> float:
        coef = self.coefficients_at(x)
        vals = _lag_vector(np.asarray(y, dtype=float), t, self.lags)
        raw = coef[0] + float(np.dot(coef[1:], vals))
        return float(np.clip(raw, 0.0, 1.0))


def _fit_per_node(
    grid: CovariateGrid,
    x_cov: np.ndarray,
    design: np.ndarray,
    target: np.ndarray,
    bandwidth: float | None,
) -> np.ndarray:
    """Local least squares per node with triangular kernel weights.

    ``bandwidth`` None means uniform weights: every node then solves the same
    global OLS, which makes the model collapse to its constant-coefficient
    counterpart.
    """
    n, p1 = design.shape
    if n < MIN_ROWS_PER_PARAM * p1:
        raise DataError(f"too few rows: {n} usable, need {MIN_ROWS_PER_PARAM * p1}")
    node_coefs = np.empty((len(grid.nodes), p1))
    for j, node in enumerate(grid.nodes):
        if bandwidth is None:
            w = np.ones(n)
        else:
            w = np.maximum(0.0, 1.0 - grid.distance(x_cov, node) / bandwidth)
        if np.count_nonzero(w) < p1:
            raise DataError(f"too few observations near covariate node {node}")
        sw = np.sqrt(w)
        coef, _, rank, _ = np.linalg.lstsq(design * sw[:, None], target * sw, rcond=None)
        if rank < p1:
            raise NumericError("rank-deficient design (collinear or constant regressors)")
        node_coefs[j] = coef
    return node_coefs


def _cp_default_bandwidth(grid: CovariateGrid, scale: float = 1.5) -> float:
    gaps = np.diff(np.asarray(grid.nodes))
    return float(scale * np.max(gaps))


def fit_cpar(
    y: np.ndarray,
    x_cov: np.ndarray,
    grid: CovariateGrid,
    lags: tuple[int, ...] = (1,),
    lead: int = 1,
    bandwidth: float | None | str = "auto",
) -> ConditionalARModel:
    """Conditional-parametric AR: locally weighted OLS per covariate node."""
    y = np.asarray(y, dtype=float)
    x_cov = np.asarray(x_cov, dtype=float)
    if x_cov.shape != y.shape:
        raise DataError("covariate must align with the series")
    origins, x_own, target = lag_design(y, tuple(lags), lead)
    cov_rows = x_cov[origins]
    keep = ~np.isnan(cov_rows)
    x_own, target, cov_rows = x_own[keep], target[keep], cov_rows[keep]
    design = np.column_stack([np.ones(target.size), x_own])
    bw = _cp_default_bandwidth(grid) if bandwidth == "auto" else bandwidth
    node_coefs = _fit_per_node(grid, cov_rows, design, target, bw)
    coef_rows = grid.weight_matrix(cov_rows) @ node_coefs
    resid = target - np.einsum("np,np->n", coef_rows, design)
    sigma = float(np.std(resid, ddof=min(design.shape[1], resid.size - 1)))
    rmse = float(np.sqrt(np.mean(resid**2)))
    return ConditionalARModel(tuple(lags), grid, node_coefs, sigma, lead, rmse)


@dataclass(frozen=True)
class LogisticPowerFit:
    """Logistic speed-to-power map fitted by least squares, clipped to [0, 1]."""

    scale: float
    midpoint: float
    width: float

    def __call__(self, speed) -> np.ndarray:
        s = np.asarray(speed, dtype=float)
        out = self.scale / (1.0 + np.exp(-(s - self.midpoint) / self.width))
        return np.clip(out, 0.0, 1.0)


def fit_speed_power_curve(speeds: np.ndarray, powers: np.ndarray) -> LogisticPowerFit:
    speeds = np.asarray(speeds, dtype=float)
    powers = np.asarray(powers, dtype=float)
    keep = ~(np.isnan(speeds) | np.isnan(powers))
    speeds, powers = speeds[keep], powers[keep]
    if speeds.size < 30:
        raise DataError("too few (speed, power) pairs to fit a conversion curve")

    def resid(params):
        c, v0, w = params
        return c / (1.0 + np.exp(-(speeds - v0) / w)) - powers

    v0_init = float(np.median(speeds))
    sol = optimize.least_squares(
        resid,
        x0=(0.95, v0_init, 2.0),
        bounds=((1e-3, 0.0, 0.1), (1.0, 40.0, 10.0)),
    )
    c, v0, w = sol.x
    return LogisticPowerFit(float(c), float(v0), float(w))


@dataclass(frozen=True)
class ConditionalARXModel:
    """Conditional-parametric ARX: diurnal harmonics plus a converted NWP term.

    Regressors per origin t and lead k: intercept, own lags, cos/sin of the
    target hour (24 h period), and the speed forecast for t+k pushed through
    a fitted speed-to-power curve. All coefficients vary with the covariate.
    """

    lags: tuple[int, ...]
    grid: CovariateGrid
    node_coefficients: np.ndarray
    conversion: LogisticPowerFit
    noise_sd: float
    lead: int
    insample_rmse: float = float("nan")

    def regressors(self, y: np.ndarray, t: int, target_hour: float, nwp_speed: float) -> np.ndarray:
        vals = _lag_vector(np.asarray(y, dtype=float), t, self.lags)
        angle = 2.0 * np.pi * target_hour / 24.0
        g = float(self.conversion(nwp_speed))
        return np.concatenate([[1.0], vals, [np.cos(angle), np.sin(angle), g]])

    def coefficients_at(self, x: float) -> np.ndarray:
        pairs = self.grid.interp_weights(x)
        return sum(w * self.node_coefficients[j] for j, w in pairs)

    def predict_one(
        self, y: np.ndarray, t: int, x: float, target_hour: float, nwp_speed: float
    ) -> float:
        if np.isnan(nwp_speed):
            raise DataError("missing NWP input for a model that requires it")
        row = self.regressors(y, t, target_hour, nwp_speed)
        raw = float(self.coefficients_at(x) @ row)
        return float(np.clip(raw, 0.0, 1.0))


LEAD_BUCKET_HOURS = 6


def fit_cparx(
    y: np.ndarray,
    hour_of_day: np.ndarray,
    nwp_speed: np.ndarray,
    grid: CovariateGrid,
    lags: tuple[int, ...] = (1,),
    lead: int = 1,
    covariate: np.ndarray | None = None,
    bandwidth: float | None | str = "auto",
    conversion: LogisticPowerFit | None = None,
) -> ConditionalARXModel:
    """Fit the conditional ARX for one lead.

    ``nwp_speed`` holds the speed forecast issued at each origin for origin+lead
    (one column of the per-lead NWP matrix). The covariate defaults to that
    same forecast speed. The speed-to-power conversion is fitted per 6 h lead
    bucket from (forecast speed, realized power) pairs unless supplied.
    """
    y = np.asarray(y, dtype=float)
    hour_of_day = np.asarray(hour_of_day, dtype=float)
    nwp_speed = np.asarray(nwp_speed, dtype=float)
    if hour_of_day.shape != y.shape or nwp_speed.shape != y.shape:
        raise DataError("hour and NWP series must align with the target series")
    origins, x_own, target = lag_design(y, tuple(lags), lead)
    speeds = nwp_speed[origins]
    cov_rows = speeds if covariate is None else np.asarray(covariate, dtype=float)[origins]
    keep = ~(np.isnan(speeds) | np.isnan(cov_rows))
    origins, x_own, target = origins[keep], x_own[keep], target[keep]
    speeds, cov_rows = speeds[keep], cov_rows[keep]
    if conversion is None:
        conversion = fit_speed_power_curve(speeds, target)
    target_hours = hour_of_day[origins + lead]
    angle = 2.0 * np.pi * target_hours / 24.0
    g_vals = conversion(speeds)
    design = np.column_stack(
        [np.ones(target.size), x_own, np.cos(angle), np.sin(angle), g_vals]
    )
    bw = _cp_default_bandwidth(grid) if bandwidth == "auto" else bandwidth
    node_coefs = _fit_per_node(grid, cov_rows, design, target, bw)
    coef_rows = grid.weight_matrix(cov_rows) @ node_coefs
    resid = target - np.einsum("np,np->n", coef_rows, design)
    sigma = float(np.std(resid, ddof=min(design.shape[1], resid.size - 1)))
    rmse = float(np.sqrt(np.mean(resid**2)))
    return ConditionalARXModel(tuple(lags), grid, node_coefs, conversion, sigma, lead, rmse)


@dataclass
class RecursiveFit:
    """Recursive least squares with exponential forgetting."""

    model: ARModel
    coefficient_path: np.ndarray | None = None


def fit_recursive(
    y: np.ndarray,
    lags: tuple[int, ...] = (1,),
    lead: int = 1,
    forgetting: float = 0.995,
    track_path: bool = False,
) -> RecursiveFit:
    """RLS with forgetting in (0.9, 1]; at 1.0 it reproduces batch OLS.

    The filter is seeded with exact OLS on an initial window, so subsequent
    updates are algebraically identical to growing-window least squares when
    ``forgetting`` is 1.
    """
    if not 0.9 < forgetting <= 1.0:
        raise DataError(f"forgetting factor {forgetting} outside (0.9, 1]")
    _, x, target = lag_design(np.asarray(y, dtype=float), tuple(lags), lead)
    n = target.size
    p1 = x.shape[1] + 1
    design = np.column_stack([np.ones(n), x])
    n0 = min(max(2 * p1, 20), n)
    if n0 < p1:
        raise DataError("initial window smaller than the parameter count")
    x0 = design[:n0]
    gram = x0.T @ x0
    try:
        p_mat = np.linalg.inv(gram)
    except np.linalg.LinAlgError:
        raise NumericError("rank-deficient design (collinear or constant regressors)") from None
    theta = p_mat @ (x0.T @ target[:n0])
    path = np.empty((n, p1)) if track_path else None
    if path is not None:
        path[:n0] = theta
    lam = forgetting
    for i in range(n0, n):
        phi = design[i]
        pphi = p_mat @ phi
        gain = pphi / (lam + phi @ pphi)
        theta = theta + gain * (target[i] - phi @ theta)
        p_mat = (p_mat - np.outer(gain, pphi)) / lam
        if path is not None:
            path[i] = theta
    resid = target - design @ theta
    sigma = float(np.std(resid, ddof=min(p1, n - 1)))
    model = ARModel(
        tuple(lags), float(theta[0]), tuple(float(c) for c in theta[1:]), sigma,
        lead, "direct", float(np.sqrt(np.mean(resid**2))),
    )
    return RecursiveFit(model, path)


def predict_iterated(model: ARModel, history: np.ndarray, n_leads: int) -> np.ndarray:
    """Chain 1-step predictions, feeding each (clipped) forecast back in."""
    if model.lead != 1:
        raise DataError("iterated prediction requires a 1-step model")
    hist = np.asarray(history, dtype=float).tolist()
    out = np.empty(n_leads)
    for k in range(n_leads):
        t = len(hist) - 1
        val = model.predict_one(np.asarray(hist), t)
        out[k] = val
        hist.append(val)
    return out


def predict_direct(models: dict[int, ARModel], history: np.ndarray, leads) -> np.ndarray:
    """Apply the lead-specific model for each requested horizon."""
    y = np.asarray(history, dtype=float)
    t = y.size - 1
    out = np.empty(len(leads))
    for j, k in enumerate(leads):
        if k not in models:
            raise DataError(f"no direct model fitted for lead {k}")
        out[j] = models[k].predict_one(y, t)
    return out


def predict_point(model, history: np.ndarray, n_leads: int) -> np.ndarray:
    """Conditional-expectation point forecasts for leads 1..n."""
    if isinstance(model, ARModel):
        if model.horizon_mode == "iterated":
            return predict_iterated(model, history, n_leads)
        if model.lead != 1 or n_leads != 1:
            raise DataError("a single direct model only serves its own lead")
        y = np.asarray(history, dtype=float)
        return np.array([model.predict_one(y, y.size - 1)])
    if isinstance(model, dict):
        return predict_direct(model, history, range(1, n_leads + 1))
    raise DataError(f"cannot predict with {type(model).__name__}")


@dataclass(frozen=True)
class QuantileARModel:
    """Quantile point forecasts from check-loss-fitted linear models on lags."""

    lags: tuple[int, ...]
    lead: int
    qr: AdaptiveQuantileModel

    def predict(self, history: np.ndarray, alpha: float | None = None):
        y = np.asarray(history, dtype=float)
        vals = _lag_vector(y, y.size - 1, self.lags)
        row = np.concatenate([[1.0], vals])
        values = self.qr.predict_values(row)[0]
        if alpha is None:
            return values
        if not 0.0 < alpha < 1.0:
            raise DataError("alpha must lie strictly inside (0, 1)")
        return float(np.interp(alpha, self.qr.levels, values))


def fit_quantile_ar(
    y: np.ndarray,
    levels,
    lags: tuple[int, ...] = (1,),
    lead: int = 1,
    forgetting: float = 1.0,
) -> QuantileARModel:
    _, x, target = lag_design(np.asarray(y, dtype=float), tuple(lags), lead)
    design = np.column_stack([np.ones(target.size), x])
    qr = fit_adaptive_qr(design, target, levels, forgetting)
    return QuantileARModel(tuple(lags), lead, qr)


def predict_quantile_point(model: QuantileARModel, history: np.ndarray, alpha: float) -> float:
    """Quantile point forecast at nominal level alpha for the model's lead."""
    if not 0.0 < alpha < 1.0:
        raise DataError("alpha must lie strictly inside (0, 1)")
    return float(model.predict(history, alpha))
