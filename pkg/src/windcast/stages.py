"""Batch pipeline stages tying the modules into reproducible end-to-end runs.

Each stage reads its inputs from CSV files in the output directory and
writes its artifacts back there, so stages can run individually or chained
by the ``pipeline`` subcommand. All randomness is seeded from the config;
repeated runs produce byte-identical files.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import copula, market
from .config import RunConfig
from .data import (
    SiteSet,
    SpaceTimeSeries,
    ZoneAggregation,
    aggregate,
    format_utc,
    load_series,
    parse_utc,
)
from .density import (
    PredictiveCDF,
    QuantileCDF,
    QuantileSet,
    fit_adaptive_qr,
    make_parametric,
)
from .errors import ConfigError, DataError
from .model_store import (
    DRESS_LEVELS,
    POOLED_BIN,
    FittedBundle,
    UnitModels,
    dump_models,
    load_models,
)
from .point import CovariateGrid, LogisticPowerFit, fit_ar, fit_cparx, fit_recursive
from .scores import (
    block_bootstrap_se,
    energy_score,
    pinball,
    randomized_pit,
)
from .scores import crps as crps_score
from .sim import PowerCurveSpec, RegimeSwitch, SimConfig, simulate, uniform_correlation
from .util import format_number, spawn_rng, worker_count

STAGES = ("simulate", "fit", "forecast", "trajectories", "trade", "reserve", "verify")

PORTFOLIO = "portfolio"
LEAD_BUCKET_HOURS = 6
LEVEL_BIN_EDGES = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)


@dataclass(frozen=True)
class Workspace:
    root: Path

    def __post_init__(self) -> None:
        object.__setattr__(self, "root", Path(self.root))

    def path(self, name: str) -> Path:
        return self.root / name

    def nwp(self, unit: str) -> Path:
        return self.root / f"nwp_{unit}.csv"

    @property
    def power_mw(self) -> Path:
        return self.root / "power_mw.csv"

    @property
    def speeds(self) -> Path:
        return self.root / "speeds.csv"

    @property
    def prices(self) -> Path:
        return self.root / "prices.csv"

    @property
    def model(self) -> Path:
        return self.root / "model.txt"

    @property
    def forecasts_point(self) -> Path:
        return self.root / "forecasts_point.csv"

    @property
    def forecasts_quantiles(self) -> Path:
        return self.root / "forecasts_quantiles.csv"

    @property
    def forecasts_parametric(self) -> Path:
        return self.root / "forecasts_parametric.csv"

    @property
    def fan_chart(self) -> Path:
        return self.root / "fan_chart.csv"

    @property
    def trajectories(self) -> Path:
        return self.root / "trajectories.csv"

    @property
    def covariance(self) -> Path:
        return self.root / "covariance.txt"

    @property
    def bids(self) -> Path:
        return self.root / "bids.csv"

    @property
    def reserve(self) -> Path:
        return self.root / "reserve.csv"

    @property
    def scores(self) -> Path:
        return self.root / "scores.csv"

    @property
    def reliability(self) -> Path:
        return self.root / "reliability.csv"

    @property
    def pit(self) -> Path:
        return self.root / "pit.csv"


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    if not Path(path).exists():
        raise DataError(f"missing stage input {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        return header, list(reader)


def sites_from_config(cfg: RunConfig) -> SiteSet:
    return SiteSet(tuple(cfg.sites.names), tuple(cfg.sites.capacities_mw))


def sim_config(cfg: RunConfig) -> SimConfig:
    sim = cfg.simulate
    sites = sites_from_config(cfg)
    regime = None
    if sim.regime_threshold is not None:
        regime = RegimeSwitch(sim.regime_threshold, sim.regime_low_factor, sim.regime_high_factor)
    return SimConfig(
        sites=sites,
        ar_coefficient=sim.ar_coefficient,
        mean_speed=sim.mean_speed,
        speed_sd=sim.speed_sd,
        diurnal_amplitude=sim.diurnal_amplitude,
        diurnal_phase_h=sim.diurnal_phase_h,
        spatial_correlation=uniform_correlation(sites.m, sim.spatial_rho),
        seed=sim.seed,
        curve=PowerCurveSpec(sim.cut_in, sim.rated, sim.cut_off, 1.0, sim.ramp_shape),
        regime=regime,
    )


def eval_origins(cfg: RunConfig, total_hours: int) -> np.ndarray:
    """Forecast-origin rows in the held-out window, stepping origin_step_h."""
    first = cfg.model.train_hours
    last = total_hours - cfg.forecast.horizon - 1
    if last < first:
        raise ConfigError("no room for forecast origins after the training window")
    return np.arange(first, last + 1, cfg.forecast.origin_step_h)


def portfolio_aggregation(sites: SiteSet) -> ZoneAggregation:
    return ZoneAggregation.from_sites(sites, {name: PORTFOLIO for name in sites.names})


def _portfolio_weights(sites: SiteSet) -> np.ndarray:
    caps = np.asarray(sites.capacities_mw)
    return caps / caps.sum()


def _load_speeds(ws: Workspace, sites: SiteSet) -> np.ndarray:
    header, rows = _read_csv(ws.speeds)
    if tuple(header[1:]) != sites.names:
        raise DataError("speeds file does not match configured sites")
    return np.array([[float(c) for c in row[1:]] for row in rows])


def nwp_noise_matrix(cfg: RunConfig, total: int) -> np.ndarray | None:
    """Seeded (T, horizon, m) noise grid shared by every stage that derives NWP."""
    sd = cfg.simulate.nwp_noise_sd
    if sd <= 0:
        return None
    m = len(cfg.sites.names)
    rng = spawn_rng(cfg.simulate.seed, 9)
    return sd * rng.standard_normal((total, cfg.forecast.horizon, m))


def unit_nwp_matrix(cfg: RunConfig, speeds: np.ndarray, unit_index: int | None, total: int) -> np.ndarray:
    """Forecast-speed matrix (T, horizon): entry [t, k-1] is the speed forecast
    issued at t for t+k. Perfect foresight of the simulated speeds plus optional
    seeded noise; the portfolio (unit_index None) uses the capacity-weighted mean.
    """
    horizon = cfg.forecast.horizon
    noise = nwp_noise_matrix(cfg, total)
    weights = _portfolio_weights(sites_from_config(cfg))
    out = np.full((total, horizon), np.nan)
    for k in range(1, horizon + 1):
        future = np.full((total, speeds.shape[1]), np.nan)
        future[: total - k] = speeds[k:]
        if noise is not None:
            future[: total - k] += noise[: total - k, k - 1, :]
        per_site = np.maximum(future, 0.0)
        if unit_index is None:
            out[:, k - 1] = per_site @ weights
        else:
            out[:, k - 1] = per_site[:, unit_index]
    return out


# ---------------------------------------------------------------------------
# simulate


def stage_simulate(cfg: RunConfig, ws: Workspace) -> None:
    ws.root.mkdir(parents=True, exist_ok=True)
    sites = sites_from_config(cfg)
    start = parse_utc(cfg.simulate.start)
    result = simulate(sim_config(cfg), cfg.simulate.hours, start)
    caps = np.asarray(sites.capacities_mw)

    def mw_rows():
        for i in range(result.power.n_steps):
            row = [format_utc(result.timestamps[i])]
            row.extend(format_number(v) for v in result.power.values[i] * caps)
            yield row

    _write_csv(ws.power_mw, ["timestamp", *sites.names], mw_rows())

    def speed_rows():
        for i in range(result.timestamps.size):
            row = [format_utc(result.timestamps[i])]
            row.extend(format_number(v) for v in result.speeds[i])
            yield row

    _write_csv(ws.speeds, ["timestamp", *sites.names], speed_rows())

    total = cfg.simulate.hours
    origins = eval_origins(cfg, total)
    units = list(sites.names) + [PORTFOLIO]
    for u, unit in enumerate(units):
        idx = None if unit == PORTFOLIO else u
        nwp = unit_nwp_matrix(cfg, result.speeds, idx, total)

        def nwp_rows(nwp=nwp):
            for t in origins:
                stamp = format_utc(result.timestamps[t])
                for k in range(1, cfg.forecast.horizon + 1):
                    yield [stamp, str(k), format_number(nwp[t, k - 1]), format_number(0.0)]

        _write_csv(ws.nwp(unit), ["origin", "lead_h", "u", "v"], nwp_rows())

    _write_prices(cfg, ws, result.timestamps, origins)


def _write_prices(cfg: RunConfig, ws: Workspace, timestamps, origins) -> None:
    """Synthetic two-price preset: day-ahead diurnal shape, positive unit costs."""
    rng = spawn_rng(cfg.simulate.seed, 11)
    leads = list(cfg.market.delivery_leads) if hasattr(cfg.market, "delivery_leads") else list(
        range(cfg.market.lead_start, cfg.market.lead_end + 1)
    )
    rows = []
    for t in origins:
        stamp = format_utc(timestamps[t])
        hour0 = int(timestamps[t].astype("datetime64[s]").astype(np.int64) % 86400) / 3600.0
        for k in leads:
            base = 42.0 + 12.0 * np.sin(2.0 * np.pi * ((hour0 + k) - 18.0) / 24.0)
            down = 1.0 + 7.0 * float(rng.random())
            up = 1.0 + 7.0 * float(rng.random())
            rows.append(
                [stamp, str(k), format_number(base), format_number(base + up), format_number(base - down)]
            )
    _write_csv(ws.prices, ["origin", "lead_h", "pi_c", "pi_b", "pi_s"], rows)


# ---------------------------------------------------------------------------
# fit


def _unit_series(cfg: RunConfig, ws: Workspace) -> tuple[SpaceTimeSeries, np.ndarray, np.ndarray, list[str]]:
    """Power series plus per-unit value/speed matrices with the portfolio appended."""
    sites = sites_from_config(cfg)
    series = load_series(ws.power_mw, sites)
    speeds = _load_speeds(ws, sites)
    if speeds.shape[0] != series.n_steps:
        raise DataError("speed sidecar does not align with the power series")
    port = aggregate(series, portfolio_aggregation(sites))
    values = np.column_stack([series.values, port.values[:, 0]])
    weights = _portfolio_weights(sites)
    speed_all = np.column_stack([speeds, speeds @ weights])
    units = list(sites.names) + [PORTFOLIO]
    return series, values, speed_all, units


def _point_forecast_matrix(
    bundle: FittedBundle,
    unit: UnitModels,
    y: np.ndarray,
    hours: np.ndarray,
    nwp: np.ndarray,
    origins: np.ndarray,
    lead: int,
) -> np.ndarray:
    """Vectorized point forecasts for one (unit, lead) across many origins."""
    lags = bundle.lags
    cols = [y[origins - i + 1] for i in lags]
    own = np.column_stack(cols)
    if bundle.family == "ar":
        coef = unit.ar_coefs[lead]
        raw = coef[0] + own @ coef[1:]
    else:
        speeds_k = nwp[origins, lead - 1]
        grid = unit.grid()
        conv = unit.conversion_for(lead, LEAD_BUCKET_HOURS)
        angle = 2.0 * np.pi * hours[np.minimum(origins + lead, hours.size - 1)] / 24.0
        design = np.column_stack(
            [np.ones(origins.size), own, np.cos(angle), np.sin(angle), conv(speeds_k)]
        )
        coef_rows = grid.weight_matrix(speeds_k) @ unit.node_coefs[lead]
        raw = np.einsum("np,np->n", coef_rows, design)
        raw = np.where(np.isnan(speeds_k), np.nan, raw)
    bad = np.isnan(own).any(axis=1)
    raw = np.where(bad, np.nan, raw)
    return np.clip(raw, 0.0, 1.0)


def _qr_design(bundle: FittedBundle, points: np.ndarray, nwp_speeds: np.ndarray) -> np.ndarray:
    if bundle.family == "ar":
        return np.column_stack([np.ones(points.size), points])
    return np.column_stack([np.ones(points.size), points, nwp_speeds])


def _smoothed_final_variance(errors: np.ndarray, lam: float) -> float:
    """Final state of exponentially smoothed squared errors (floored)."""
    e2 = errors[~np.isnan(errors)] ** 2
    if e2.size == 0:
        return 0.01
    window = min(e2.size, 2500)
    tail = e2[-window:]
    weights = (1.0 - lam) * lam ** np.arange(window - 1, -1, -1)
    base = float(np.dot(weights, tail))
    # remaining weight goes to the long-run mean
    base += float(lam**window) * float(np.mean(e2))
    return max(base, 1e-8)


def _fit_unit(cfg: RunConfig, bundle: FittedBundle, name: str, y_full: np.ndarray,
              hours: np.ndarray, nwp: np.ndarray) -> UnitModels:
    mo = cfg.model
    train = mo.train_hours
    y = y_full[:train]
    unit = UnitModels(name)
    horizon = cfg.forecast.horizon
    max_lag = max(mo.lags)
    train_rows = np.arange(max_lag - 1, train - 1)
    if bundle.family == "cparx":
        speeds_pool = nwp[train_rows][:, : horizon]
        finite = speeds_pool[~np.isnan(speeds_pool)]
        lo, hi = np.quantile(finite, [0.01, 0.99])
        if hi - lo < 1e-6:
            hi = lo + 1.0
        unit.nodes = np.linspace(lo, hi, mo.cp_nodes)
        grid = CovariateGrid(tuple(float(v) for v in unit.nodes))
        for bucket in range((horizon - 1) // LEAD_BUCKET_HOURS + 1):
            k_lo = bucket * LEAD_BUCKET_HOURS + 1
            k_hi = min((bucket + 1) * LEAD_BUCKET_HOURS, horizon)
            xs, ys = [], []
            for k in range(k_lo, k_hi + 1):
                rows = train_rows[train_rows + k < train]
                xs.append(nwp[rows, k - 1])
                ys.append(y_full[rows + k])
            xcat = np.concatenate(xs)
            ycat = np.concatenate(ys)
            keep = ~(np.isnan(xcat) | np.isnan(ycat))
            from .point import fit_speed_power_curve

            conv = fit_speed_power_curve(xcat[keep], ycat[keep])
            unit.conversions[bucket] = (conv.scale, conv.midpoint, conv.width)
    lam_v = cfg.forecast.variance_smoothing
    for lead in range(1, horizon + 1):
        if bundle.family == "ar":
            if mo.rls_forgetting < 1.0:
                fitted = fit_recursive(y, mo.lags, lead, mo.rls_forgetting).model
            else:
                fitted = fit_ar(y, mo.lags, lead)
            unit.ar_coefs[lead] = np.array([fitted.intercept, *fitted.coefficients])
            unit.sigma[lead] = fitted.noise_sd
        else:
            grid = unit.grid()
            conv = unit.conversion_for(lead, LEAD_BUCKET_HOURS)
            fitted = fit_cparx(
                y, hours[:train], nwp[:train, lead - 1], grid,
                lags=mo.lags, lead=lead, conversion=conv,
            )
            unit.node_coefs[lead] = fitted.node_coefficients
            unit.sigma[lead] = fitted.noise_sd
        # in-sample forecasts feed the quantile models and the variance tracker
        rows = train_rows[train_rows + lead < train]
        points = _point_forecast_matrix(bundle, unit, y_full, hours, nwp, rows, lead)
        actual = y_full[rows + lead]
        keep = ~(np.isnan(points) | np.isnan(actual))
        rows, points, actual = rows[keep], points[keep], actual[keep]
        design = _qr_design(bundle, points, nwp[rows, lead - 1])
        qr = fit_adaptive_qr(design, actual, np.asarray(mo.quantile_levels), mo.qr_forgetting)
        unit.qr_coefs[lead] = qr.coefficients
        unit.variance[lead] = _smoothed_final_variance(actual - points, lam_v)
        if cfg.forecast.density == "dressed":
            _collect_dress_errors(unit, points, actual, lead)
    if cfg.forecast.density == "dressed":
        _finalize_dress(unit)
    return unit


def _collect_dress_errors(unit: UnitModels, points, actual, lead: int) -> None:
    bucket = (lead - 1) // LEAD_BUCKET_HOURS
    store = unit.__dict__.setdefault("_dress_raw", {})
    edges = np.asarray(LEVEL_BIN_EDGES)
    bins = np.clip(np.searchsorted(edges, points, side="right") - 1, 0, edges.size - 2)
    err = actual - points
    for b in range(edges.size - 1):
        sel = bins == b
        if sel.any():
            store.setdefault((bucket, b), []).append(err[sel])
    store.setdefault((bucket, POOLED_BIN), []).append(err)


def _finalize_dress(unit: UnitModels) -> None:
    store = unit.__dict__.pop("_dress_raw", {})
    for key, chunks in store.items():
        errors = np.concatenate(chunks)
        unit.dress[key] = np.quantile(errors, DRESS_LEVELS)


def stage_fit(cfg: RunConfig, ws: Workspace) -> None:
    series, values, speed_all, units = _unit_series(cfg, ws)
    hours = series.hour_of_day()
    total = series.n_steps
    bundle = FittedBundle(
        family=cfg.model.family,
        lags=tuple(cfg.model.lags),
        horizon=cfg.forecast.horizon,
        levels=tuple(cfg.model.quantile_levels),
        density=cfg.forecast.density,
        train_hours=cfg.model.train_hours,
        gln_shape=cfg.forecast.gln_shape,
    )
    nwp_mats = {}
    sites = sites_from_config(cfg)
    for u, unit_name in enumerate(units):
        idx = None if unit_name == PORTFOLIO else u
        nwp_mats[unit_name] = unit_nwp_matrix(cfg, speed_all[:, : sites.m], idx, total)

    def work(u_name: str) -> UnitModels:
        col = units.index(u_name)
        return _fit_unit(cfg, bundle, u_name, values[:, col], hours, nwp_mats[u_name])

    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fitted = list(pool.map(work, units))
    else:
        fitted = [work(u) for u in units]
    for unit in fitted:
        bundle.units[unit.unit] = unit
    ws.model.write_text(dump_models(bundle))


# ---------------------------------------------------------------------------
# forecast


def _read_nwp_file(path: Path, horizon: int) -> dict[str, np.ndarray]:
    header, rows = _read_csv(path)
    if header != ["origin", "lead_h", "u", "v"]:
        raise DataError(f"{path}: unexpected NWP schema {header}")
    out: dict[str, np.ndarray] = {}
    for row in rows:
        origin, lead, u, v = row
        arr = out.setdefault(origin, np.full(horizon, np.nan))
        k = int(lead)
        if not 1 <= k <= horizon:
            raise DataError(f"{path}: lead {k} outside horizon")
        arr[k - 1] = float(np.hypot(float(u), float(v)))
    return out


def _marginal_from_quantiles(levels: np.ndarray, values: np.ndarray) -> QuantileCDF:
    return QuantileCDF(QuantileSet(levels, np.clip(np.sort(values), 0.0, 1.0)))


def _dress_quantiles(unit: UnitModels, point: float, lead: int, levels: np.ndarray) -> np.ndarray:
    bucket = (lead - 1) // LEAD_BUCKET_HOURS
    edges = np.asarray(LEVEL_BIN_EDGES)
    b = int(np.clip(np.searchsorted(edges, point, side="right") - 1, 0, edges.size - 2))
    errq = unit.dress.get((bucket, b))
    if errq is None:
        errq = unit.dress.get((bucket, POOLED_BIN))
        if errq is None:
            raise DataError(f"no dressing errors for lead bucket {bucket}")
    err_at_levels = np.interp(levels, DRESS_LEVELS, errq)
    return np.clip(np.sort(point + err_at_levels), 0.0, 1.0)


def stage_forecast(cfg: RunConfig, ws: Workspace, emit_plots: bool = False) -> None:
    bundle = load_models(ws.model.read_text())
    series, values, _, units = _unit_series(cfg, ws)
    hours = series.hour_of_day()
    total = series.n_steps
    origins = eval_origins(cfg, total)
    stamps = [format_utc(series.timestamps[t]) for t in origins]
    horizon = bundle.horizon
    levels = np.asarray(bundle.levels)
    parametric = bundle.density not in ("quantiles", "dressed")

    point_rows = []
    quantile_rows = []
    parametric_rows = []
    fan_rows = []
    coverages = np.arange(0.1, 0.95, 0.1)
    # per unit and lead, vectorized over origins
    points_by_unit: dict[str, np.ndarray] = {}
    values_by_unit: dict[str, np.ndarray] = {}
    for name in units:
        unit = bundle.units[name]
        nwp_map = _read_nwp_file(ws.nwp(name), horizon)
        nwp = np.full((total, horizon), np.nan)
        for i, t in enumerate(origins):
            arr = nwp_map.get(stamps[i])
            if arr is None:
                raise DataError(f"NWP file for {name} lacks origin {stamps[i]}")
            nwp[t] = arr
        col = units.index(name)
        y = values[:, col]
        pts = np.empty((origins.size, horizon))
        qvals = np.empty((origins.size, horizon, levels.size))
        for lead in range(1, horizon + 1):
            p = _point_forecast_matrix(bundle, unit, y, hours, nwp, origins, lead)
            pts[:, lead - 1] = p
            if not parametric:
                if bundle.density == "quantiles":
                    design = _qr_design(bundle, p, nwp[origins, lead - 1])
                    raw = design @ unit.qr_coefs[lead].T
                    qvals[:, lead - 1, :] = np.clip(np.sort(raw, axis=1), 0.0, 1.0)
                else:
                    for i in range(origins.size):
                        qvals[i, lead - 1, :] = _dress_quantiles(unit, float(p[i]), lead, levels)
        points_by_unit[name] = pts
        values_by_unit[name] = qvals
        for i, stamp in enumerate(stamps):
            for lead in range(1, horizon + 1):
                point_rows.append([stamp, name, str(lead), format_number(pts[i, lead - 1])])
                if parametric:
                    cdf = make_parametric(
                        float(pts[i, lead - 1]), unit.variance[lead], bundle.density,
                        nu=bundle.gln_shape,
                    )
                    parametric_rows.append(
                        [stamp, name, str(lead), bundle.density,
                         *_parametric_params(cdf)]
                    )
                else:
                    for a, q in zip(levels, qvals[i, lead - 1]):
                        quantile_rows.append(
                            [stamp, name, str(lead), format_number(a), format_number(q)]
                        )
            if emit_plots and not parametric:
                for lead in range(1, horizon + 1):
                    qs = QuantileSet(levels, qvals[i, lead - 1])
                    cdf = QuantileCDF(qs)
                    for c in coverages:
                        lo = cdf.inverse(0.5 - c / 2)
                        hi = cdf.inverse(0.5 + c / 2)
                        fan_rows.append(
                            [stamp, name, str(lead), format_number(c),
                             format_number(lo), format_number(hi)]
                        )

    _write_csv(ws.forecasts_point, ["origin", "site", "lead_h", "value"], point_rows)
    if parametric:
        _write_csv(
            ws.forecasts_parametric,
            ["origin", "site", "lead_h", "family", "mu", "sigma", "nu"],
            parametric_rows,
        )
    else:
        _write_csv(
            ws.forecasts_quantiles,
            ["origin", "site", "lead_h", "alpha", "quantile"],
            quantile_rows,
        )
    if emit_plots:
        _write_csv(
            ws.fan_chart,
            ["origin", "site", "lead_h", "coverage", "lower", "upper"],
            fan_rows,
        )


def _parametric_params(cdf) -> list[str]:
    from .density import BetaDensity, CensoredGaussian, GeneralizedLogitNormal, TruncatedGaussian

    if isinstance(cdf, (TruncatedGaussian, CensoredGaussian)):
        return [format_number(cdf.mu), format_number(cdf.sigma), format_number(0.0)]
    if isinstance(cdf, GeneralizedLogitNormal):
        return [format_number(cdf.mu), format_number(cdf.sigma), format_number(cdf.nu)]
    if isinstance(cdf, BetaDensity):
        return [format_number(cdf.a), format_number(cdf.b), format_number(0.0)]
    raise DataError("unknown parametric representation")


# ---------------------------------------------------------------------------
# shared forecast readers


def read_marginals(cfg: RunConfig, ws: Workspace) -> tuple[list[str], dict[tuple[str, str, int], PredictiveCDF], np.ndarray]:
    """Marginal CDFs keyed by (origin, site, lead) from the forecast artifacts.

    Returns (ordered origin stamps, marginal map, levels). Works from the
    quantile export or, failing that, the parametric export.
    """
    from .density import BetaDensity, CensoredGaussian, GeneralizedLogitNormal, TruncatedGaussian

    marg: dict[tuple[str, str, int], PredictiveCDF] = {}
    origins: list[str] = []
    seen = set()
    if ws.forecasts_quantiles.exists():
        header, rows = _read_csv(ws.forecasts_quantiles)
        store: dict[tuple[str, str, int], list[tuple[float, float]]] = {}
        for origin, site, lead, alpha, quantile in rows:
            store.setdefault((origin, site, int(lead)), []).append(
                (float(alpha), float(quantile))
            )
            if origin not in seen:
                seen.add(origin)
                origins.append(origin)
        levels = None
        for key, pairs in store.items():
            pairs.sort()
            lv = np.array([p[0] for p in pairs])
            vals = np.array([p[1] for p in pairs])
            if levels is None:
                levels = lv
            marg[key] = _marginal_from_quantiles(lv, vals)
        return origins, marg, levels if levels is not None else np.array([])
    header, rows = _read_csv(ws.forecasts_parametric)
    for origin, site, lead, family, mu, sigma, nu in rows:
        mu, sigma, nu = float(mu), float(sigma), float(nu)
        if family == "beta":
            cdf: PredictiveCDF = BetaDensity(mu, sigma)
        elif family == "truncated-gaussian":
            cdf = TruncatedGaussian(mu, sigma)
        elif family == "censored-gaussian":
            cdf = CensoredGaussian(mu, sigma)
        elif family == "generalized-logit-normal":
            cdf = GeneralizedLogitNormal(mu, sigma, nu)
        else:
            raise DataError(f"unknown family {family!r} in parametric export")
        marg[(origin, site, int(lead))] = cdf
        if origin not in seen:
            seen.add(origin)
            origins.append(origin)
    return origins, marg, np.asarray(cfg.model.quantile_levels)


def read_point_forecasts(ws: Workspace) -> dict[tuple[str, str, int], float]:
    header, rows = _read_csv(ws.forecasts_point)
    return {(o, s, int(k)): float(v) for o, s, k, v in rows}


# ---------------------------------------------------------------------------
# trajectories


def stage_trajectories(cfg: RunConfig, ws: Workspace) -> None:
    sites = sites_from_config(cfg)
    series = load_series(ws.power_mw, sites)
    origins_all, marg, _ = read_marginals(cfg, ws)
    horizon = cfg.forecast.horizon
    m = sites.m
    dim = m * horizon
    cov = copula.LatentCovariance.identity(dim, cfg.trajectories.covariance_smoothing)
    rows_out = []
    for o_idx, origin in enumerate(origins_all):
        t = series.row_at(parse_utc(origin))
        grid = np.empty((m, horizon), dtype=object)
        for s_idx, site in enumerate(sites.names):
            for k in range(1, horizon + 1):
                cdf = marg.get((origin, site, k))
                if cdf is None:
                    raise DataError(f"missing marginal for ({origin}, {site}, {k})")
                grid[s_idx, k - 1] = cdf
        traj = copula.sample_trajectories(
            grid, cov, cfg.trajectories.num_paths, cfg.trajectories.seed + o_idx
        )
        for j in range(traj.n_paths):
            for s_idx, site in enumerate(sites.names):
                for k in range(1, horizon + 1):
                    rows_out.append(
                        [origin, str(j), site, str(k), format_number(traj.paths[j, s_idx, k - 1])]
                    )
        window_end = t + horizon
        if window_end < series.n_steps:
            window = series.values[t + 1 : t + horizon + 1].T  # (m, horizon)
            if not np.isnan(window).any():
                z = copula.to_latent(window, grid)
                cov = copula.update_covariance(cov, z)
    _write_csv(ws.trajectories, ["origin", "traj_id", "site", "lead_h", "value"], rows_out)
    with open(ws.covariance, "w") as fh:
        fh.write(f"dim {cov.dim}\n")
        for row in cov.matrix:
            fh.write(" ".join(format_number(v) for v in row) + "\n")


def read_covariance(path: Path) -> copula.LatentCovariance:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2 or header[0] != "dim":
            raise DataError(f"{path}: expected 'dim <n>' header")
        dim = int(header[1])
        rows = [np.array([float(v) for v in line.split()]) for line in fh if line.strip()]
    mat = np.vstack(rows)
    if mat.shape != (dim, dim):
        raise DataError(f"{path}: matrix shape {mat.shape} does not match header dim {dim}")
    return copula.LatentCovariance(mat)


# ---------------------------------------------------------------------------
# trade


def _read_prices(cfg: RunConfig, ws: Workspace) -> dict[str, market.MarketPrices]:
    path = Path(cfg.market.price_file) if cfg.market.price_file else ws.prices
    if not path.exists():
        raise DataError(f"price file {path} not found")
    header, rows = _read_csv(path)
    if header != ["origin", "lead_h", "pi_c", "pi_b", "pi_s"]:
        raise DataError(f"{path}: unexpected price schema {header}")
    leads = list(range(cfg.market.lead_start, cfg.market.lead_end + 1))
    store: dict[str, dict[int, tuple[float, float, float]]] = {}
    for origin, lead, pc, pb, ps in rows:
        store.setdefault(origin, {})[int(lead)] = (float(pc), float(pb), float(ps))
    out = {}
    for origin, by_lead in store.items():
        if not all(k in by_lead for k in leads):
            continue
        pc = np.array([by_lead[k][0] for k in leads])
        pb = np.array([by_lead[k][1] for k in leads])
        ps = np.array([by_lead[k][2] for k in leads])
        out[origin] = market.MarketPrices(tuple(leads), pc, pb, ps)
    return out


def stage_trade(cfg: RunConfig, ws: Workspace) -> None:
    origins, marg, _ = read_marginals(cfg, ws)
    prices_by_origin = _read_prices(cfg, ws)
    leads = list(range(cfg.market.lead_start, cfg.market.lead_end + 1))
    rows_out = []
    for origin in origins:
        prices = prices_by_origin.get(origin)
        if prices is None:
            continue
        cdfs = []
        for k in leads:
            cdf = marg.get((origin, PORTFOLIO, k))
            if cdf is None:
                raise DataError(f"missing portfolio marginal for ({origin}, {k})")
            cdfs.append(cdf)
        bid = market.optimal_bid(cdfs, prices)
        for i, k in enumerate(leads):
            rows_out.append(
                [origin, str(k), format_number(bid.levels[i]), format_number(bid.volumes[i])]
            )
    if not rows_out:
        raise DataError("no origins with both forecasts and prices")
    _write_csv(ws.bids, ["origin", "lead_h", "alpha", "bid"], rows_out)


# ---------------------------------------------------------------------------
# reserve


def _wind_error_density(cdf: PredictiveCDF, point: float, step: float) -> market.GridDensity:
    """Forecast-error density on [-1, 1]: the marginal shifted by the point forecast."""
    n = int(round(2.0 / step)) + 1
    grid = -1.0 + step * np.arange(n)
    edges = np.concatenate([[grid[0] - step / 2], grid + step / 2]) + point
    cdf_vals = cdf.eval(np.clip(edges, 0.0, 1.0))
    cdf_vals[edges < 0.0] = 0.0
    cdf_vals[edges >= 1.0] = 1.0
    masses = np.diff(cdf_vals)
    return market.GridDensity(-1.0, step, masses).normalized()


def stage_reserve(cfg: RunConfig, ws: Workspace) -> None:
    origins, marg, _ = read_marginals(cfg, ws)
    points = read_point_forecasts(ws)
    origin = origins[-1]  # one reserve decision per gate closure: the latest
    rs = cfg.reserve
    step = rs.grid_step
    load_err = market.GridDensity.gaussian(0.0, rs.load_error_sd, step, half_width=1.0)
    outage = market.GridDensity.two_point_outage(rs.outage_probability, rs.outage_size, step)
    rows_out = []
    for k in range(cfg.market.lead_start, cfg.market.lead_end + 1):
        cdf = marg.get((origin, PORTFOLIO, k))
        point = points.get((origin, PORTFOLIO, k))
        if cdf is None or point is None:
            raise DataError(f"missing portfolio forecast for reserve sizing at lead {k}")
        wind_err = _wind_error_density(cdf, point, step)
        problem = market.ReserveProblem(
            load_err, outage, wind_err,
            rs.up_hold, rs.up_short, rs.down_hold, rs.down_short,
        )
        margin = market.convolve_margin(problem)
        q_up, q_down = market.optimal_reserves(problem, margin)
        cost = market.expected_reserve_cost(
            margin.deficit_part(), q_up, rs.up_hold, rs.up_short
        ) + market.expected_reserve_cost(
            margin.surplus_part(), q_down, rs.down_hold, rs.down_short
        )
        rows_out.append(
            [origin, str(k), format_number(q_up), format_number(q_down), format_number(cost)]
        )
    _write_csv(ws.reserve, ["origin", "lead_h", "q_up", "q_down", "expected_cost"], rows_out)


# ---------------------------------------------------------------------------
# verify


def stage_verify(cfg: RunConfig, ws: Workspace) -> None:
    sites = sites_from_config(cfg)
    series = load_series(ws.power_mw, sites)
    origins, marg, levels = read_marginals(cfg, ws)
    points = read_point_forecasts(ws)
    horizon = cfg.forecast.horizon
    site_names = list(sites.names)
    n_origin = len(origins)
    origin_rows = [series.row_at(parse_utc(o)) for o in origins]

    err = np.full((n_origin, len(site_names), horizon), np.nan)
    actual = np.full((n_origin, len(site_names), horizon), np.nan)
    pred = np.full((n_origin, len(site_names), horizon), np.nan)
    for i, origin in enumerate(origins):
        t = origin_rows[i]
        for s_idx, site in enumerate(site_names):
            for k in range(1, horizon + 1):
                if t + k >= series.n_steps:
                    continue
                y = series.values[t + k, s_idx]
                p = points.get((origin, site, k))
                if p is None or np.isnan(y):
                    continue
                actual[i, s_idx, k - 1] = y
                pred[i, s_idx, k - 1] = p
                err[i, s_idx, k - 1] = p - y

    score_rows = []
    leads = list(range(1, horizon + 1))
    block = 24 // max(cfg.forecast.origin_step_h, 1) + 1

    def emit(metric: str, per_origin: np.ndarray, transform=None) -> None:
        vals = np.nanmean(per_origin, axis=0)
        filled = np.where(np.isnan(per_origin), vals[None, :], per_origin)
        se = np.atleast_1d(block_bootstrap_se(filled, block))
        n = int(np.sum(~np.isnan(per_origin[:, 0])))
        for j, k in enumerate(leads):
            v, s = vals[j], se[j]
            if transform is not None:
                v, s = transform(v, s)
            score_rows.append([metric, str(k), format_number(v), format_number(s), str(n)])

    emit("mse", np.nanmean(err**2, axis=1))
    emit("rmse", np.nanmean(err**2, axis=1),
         transform=lambda v, s: (float(np.sqrt(v)), float(s / (2.0 * np.sqrt(v)) if v > 0 else 0.0)))
    emit("mae", np.nanmean(np.abs(err), axis=1))
    emit("bias", np.nanmean(err, axis=1))

    # pinball per configured level, pooled across sites
    for a in levels:
        pb = np.full((n_origin, horizon), np.nan)
        for i, origin in enumerate(origins):
            per_site = np.full((len(site_names), horizon), np.nan)
            for s_idx, site in enumerate(site_names):
                for k in range(1, horizon + 1):
                    cdf = marg.get((origin, site, k))
                    y = actual[i, s_idx, k - 1]
                    if cdf is None or np.isnan(y):
                        continue
                    q = cdf.inverse(float(a))
                    u = y - q
                    per_site[s_idx, k - 1] = u * (a - (u < 0.0))
            pb[i] = np.nanmean(per_site, axis=0)
        emit(f"pinball@{format_number(float(a))}", pb)

    crps_mat = np.full((n_origin, horizon), np.nan)
    for i, origin in enumerate(origins):
        per_site = np.full((len(site_names), horizon), np.nan)
        for s_idx, site in enumerate(site_names):
            for k in range(1, horizon + 1):
                cdf = marg.get((origin, site, k))
                y = actual[i, s_idx, k - 1]
                if cdf is None or np.isnan(y):
                    continue
                per_site[s_idx, k - 1] = crps_score(cdf, float(y))
        crps_mat[i] = np.nanmean(per_site, axis=0)
    emit("crps", crps_mat)

    # energy score per origin over the full window, from the trajectory artifact
    if ws.trajectories.exists():
        header, rows = _read_csv(ws.trajectories)
        store: dict[str, dict[int, np.ndarray]] = {}
        site_index = {s: i for i, s in enumerate(site_names)}
        for origin, traj_id, site, lead, value in rows:
            paths = store.setdefault(origin, {})
            j = int(traj_id)
            if j not in paths:
                paths[j] = np.full(len(site_names) * horizon, np.nan)
            paths[j][site_index[site] * horizon + (int(lead) - 1)] = float(value)
        es = []
        for i, origin in enumerate(origins):
            paths = store.get(origin)
            window = actual[i].reshape(-1)
            if paths is None or np.isnan(window).any():
                continue
            ens = np.vstack([paths[j] for j in sorted(paths)])
            es.append(energy_score(ens, window))
        if es:
            es_arr = np.asarray(es)
            se = float(block_bootstrap_se(es_arr, block))
            score_rows.append(
                ["energy_score", "0", format_number(float(es_arr.mean())), format_number(se),
                 str(es_arr.size)]
            )

    _write_csv(ws.scores, ["metric", "lead_h", "value", "se", "n"], score_rows)

    # reliability + randomized PIT over all (origin, site, lead) cells
    cells = []
    obs = []
    buckets = []
    for i, origin in enumerate(origins):
        for s_idx, site in enumerate(site_names):
            for k in range(1, horizon + 1):
                cdf = marg.get((origin, site, k))
                y = actual[i, s_idx, k - 1]
                if cdf is None or np.isnan(y):
                    continue
                cells.append(cdf)
                obs.append(y)
                buckets.append((k - 1) // LEAD_BUCKET_HOURS)
    rel_rows = []
    if len(cells) >= 100 and levels.size:
        from .scores import reliability as reliability_op

        result = reliability_op(
            cells, np.asarray(obs), levels,
            rng=spawn_rng(cfg.run.seed, 5), bin_labels=np.asarray(buckets),
        )
        for j, a in enumerate(levels):
            rel_rows.append(
                [format_number(float(a)), format_number(result.table.coverage[j]),
                 str(int(result.table.counts[j])), ""]
            )
        for lab, (cov, cnt) in result.table.by_bin.items():
            for j, a in enumerate(levels):
                rel_rows.append(
                    [format_number(float(a)), format_number(cov[j]), str(int(cnt[j])),
                     f"lead_bucket_{lab}"]
                )
        _write_csv(ws.pit, ["pit"], [[format_number(v)] for v in result.pit])
    _write_csv(ws.reliability, ["alpha", "coverage", "n", "bin"], rel_rows)


# ---------------------------------------------------------------------------
# pipeline


def run_pipeline(cfg: RunConfig, ws: Workspace, from_stage: str = "simulate",
                 emit_plots: bool = False) -> None:
    if from_stage not in STAGES:
        raise ConfigError(f"unknown stage {from_stage!r}; choose from {STAGES}")
    start = STAGES.index(from_stage)
    for stage in STAGES[start:]:
        run_stage(stage, cfg, ws, emit_plots)


def run_stage(stage: str, cfg: RunConfig, ws: Workspace, emit_plots: bool = False) -> None:
    ws.root.mkdir(parents=True, exist_ok=True)
    if stage == "simulate":
        stage_simulate(cfg, ws)
    elif stage == "fit":
        stage_fit(cfg, ws)
    elif stage == "forecast":
        stage_forecast(cfg, ws, emit_plots)
    elif stage == "trajectories":
        stage_trajectories(cfg, ws)
    elif stage == "trade":
        stage_trade(cfg, ws)
    elif stage == "reserve":
        stage_reserve(cfg, ws)
    elif stage == "verify":
        stage_verify(cfg, ws)
    else:
        raise ConfigError(f"unknown stage {stage!r}")
