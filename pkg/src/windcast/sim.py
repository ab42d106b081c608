"""Synthetic space-time wind fields and their conversion to power.

The generator is the truth oracle for the rest of the package: latent
per-site speed = mean + diurnal sine + AR(1) anomaly driven by spatially
correlated Gaussian innovations, pushed through a parametric power curve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import SiteSet, SpaceTimeSeries, HOUR
from .errors import DataError, NumericError

DEFAULT_START = np.datetime64("2026-01-01T00:00:00", "s")


@dataclass(frozen=True)
class PowerCurveSpec:
    """Piecewise speed-to-power map: flat zero, polynomial rise, flat rated, hard stop."""

    cut_in: float = 4.0
    rated: float = 16.0
    cut_off: float = 25.0
    nominal: float = 1.0
    ramp_shape: float = 3.0

    def __post_init__(self) -> None:
        if not (0.0 < self.cut_in < self.rated < self.cut_off):
            raise DataError("need 0 < cut_in < rated < cut_off")
        if not (0.0 < self.nominal <= 1.0):
            raise DataError("nominal power must be in (0, 1]")
        if self.ramp_shape <= 0:
            raise DataError("ramp_shape must be positive")


def power_curve(v, spec: PowerCurveSpec = PowerCurveSpec()):
    """Normalized power output for wind speed ``v`` (m/s, scalar or array).

    Zero below cut-in and at or above cut-off; rises as
    ((v - cut_in)/(rated - cut_in))**ramp_shape to nominal; flat at nominal
    between rated and cut-off.
    """
    arr = np.asarray(v, dtype=float)
    if np.any(arr < 0):
        raise DataError("wind speed must be nonnegative")
    frac = (arr - spec.cut_in) / (spec.rated - spec.cut_in)
    ramp = np.clip(frac, 0.0, 1.0) ** spec.ramp_shape
    out = np.where(arr < spec.cut_in, 0.0, ramp * spec.nominal)
    out = np.where(arr >= spec.rated, spec.nominal, out)
    out = np.where(arr >= spec.cut_off, 0.0, out)
    if np.isscalar(v):
        return float(out)
    return out


@dataclass(frozen=True)
class RegimeSwitch:
    """Two-regime innovation volatility keyed on the last latent speed.

    The high regime (speed above ``threshold``) scales the innovation sd by
    ``high_factor``; the low regime by ``low_factor``. Keying on an
    observable keeps the structure recoverable by threshold-AR fits.
    """

    threshold: float
    low_factor: float = 1.0
    high_factor: float = 2.0

    def __post_init__(self) -> None:
        if self.low_factor <= 0 or self.high_factor <= 0:
            raise DataError("regime factors must be positive")


@dataclass(frozen=True)
class SimConfig:
    sites: SiteSet
    ar_coefficient: tuple[float, ...] = (0.95,)
    mean_speed: tuple[float, ...] = (9.0,)
    speed_sd: tuple[float, ...] = (1.2,)
    diurnal_amplitude: tuple[float, ...] = (1.0,)
    diurnal_phase_h: float = 15.0
    spatial_correlation: np.ndarray | None = None
    seed: int = 0
    curve: PowerCurveSpec = field(default_factory=PowerCurveSpec)
    regime: RegimeSwitch | None = None

    def __post_init__(self) -> None:
        m = self.sites.m
        for name in ("ar_coefficient", "mean_speed", "speed_sd", "diurnal_amplitude"):
            vals = tuple(float(x) for x in np.broadcast_to(getattr(self, name), (m,)))
            object.__setattr__(self, name, vals)
        if any(not (0.0 < phi < 1.0) for phi in self.ar_coefficient):
            raise DataError("AR coefficients must lie in (0, 1)")
        if any(sd < 0 for sd in self.speed_sd):
            raise DataError("speed_sd must be nonnegative")
        if any(a < 0 for a in self.diurnal_amplitude):
            raise DataError("diurnal amplitudes must be nonnegative")
        corr = self.spatial_correlation
        if corr is None:
            corr = np.eye(m)
        corr = np.asarray(corr, dtype=float)
        if corr.shape != (m, m):
            raise DataError(f"spatial correlation must be {m}x{m}")
        if not np.allclose(corr, corr.T, atol=1e-12):
            raise DataError("spatial correlation must be symmetric")
        if not np.allclose(np.diag(corr), 1.0, atol=1e-12):
            raise DataError("spatial correlation must have unit diagonal")
        corr = corr.copy()
        corr.flags.writeable = False
        object.__setattr__(self, "spatial_correlation", corr)


def uniform_correlation(m: int, rho: float) -> np.ndarray:
    """Equicorrelation matrix; PSD for rho in (-1/(m-1), 1]."""
    if m > 1 and not (-1.0 / (m - 1) < rho <= 1.0):
        raise DataError(f"rho {rho} outside the PSD range for m={m}")
    return (1.0 - rho) * np.eye(m) + rho * np.ones((m, m))


@dataclass(frozen=True)
class SimResult:
    """Simulator output: latent pieces for oracle tests plus the power series."""

    timestamps: np.ndarray
    speeds: np.ndarray     # (T, m) m/s, after flooring at 0
    anomalies: np.ndarray  # (T, m) latent AR(1) component
    power: SpaceTimeSeries


def simulate(config: SimConfig, hours: int, start: np.datetime64 = DEFAULT_START) -> SimResult:
    """Draw a seeded space-time speed field and convert it to power.

    Identical (config, hours, start) reproduce bit-identical output.
    """
    if hours < 1:
        raise DataError("hours must be >= 1")
    m = config.sites.m
    try:
        chol = np.linalg.cholesky(config.spatial_correlation + 1e-12 * np.eye(m))
    except np.linalg.LinAlgError:
        raise NumericError("spatial correlation matrix is not positive semi-definite") from None
    rng = np.random.default_rng(config.seed)
    phi = np.asarray(config.ar_coefficient)
    sd = np.asarray(config.speed_sd)
    mean = np.asarray(config.mean_speed)
    amp = np.asarray(config.diurnal_amplitude)

    timestamps = start + np.arange(hours) * HOUR
    hour_of_day = (timestamps.astype("datetime64[s]").astype(np.int64) % 86400) / 3600.0
    diurnal = amp[None, :] * np.sin(
        2.0 * np.pi * (hour_of_day[:, None] - config.diurnal_phase_h) / 24.0
    )

    anomalies = np.empty((hours, m))
    shocks = rng.standard_normal((hours, m)) @ chol.T
    stationary = sd / np.sqrt(1.0 - phi**2)
    state = stationary * shocks[0]
    anomalies[0] = state
    prev_speed = mean + diurnal[0] + state
    for t in range(1, hours):
        scale = sd
        if config.regime is not None:
            factors = np.where(
                prev_speed > config.regime.threshold,
                config.regime.high_factor,
                config.regime.low_factor,
            )
            scale = sd * factors
        state = phi * state + scale * shocks[t]
        anomalies[t] = state
        prev_speed = mean + diurnal[t] + state

    speeds = np.maximum(mean[None, :] + diurnal + anomalies, 0.0)
    power_vals = power_curve(speeds, config.curve)
    power = SpaceTimeSeries(config.sites, timestamps, power_vals)
    return SimResult(timestamps, speeds, anomalies, power)
