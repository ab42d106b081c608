"""Predictive marginal distributions per (site, lead time).

Two representations share one interface: parametric families on [0, 1]
(truncated Gaussian, censored Gaussian, generalized logit-normal, Beta) and
interpolated quantile sets with exponential tails. Boundary point masses are
explicit so evaluation and inversion stay total on the unit interval.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

from .errors import DataError, NumericError

_NORM = stats.norm

VARIANCE_FLOOR = 1e-8


def _as_array(y) -> tuple[np.ndarray, bool]:
    arr = np.atleast_1d(np.asarray(y, dtype=float))
    return arr, np.ndim(y) == 0


class PredictiveCDF:
    """Common behavior for one marginal predictive distribution on [0, 1]."""

    def eval(self, y):
        """F(y), right-continuous, vectorized."""
        raise NotImplementedError

    def inverse(self, alpha):
        """Generalized inverse inf{y : F(y) >= alpha}, vectorized over alpha."""
        raise NotImplementedError

    def interval(self, y: float) -> tuple[float, float]:
        """(F(y-), F(y)) for randomized PIT at point masses."""
        return float(self.eval(y)), float(self.eval(y))

    def boundary_masses(self) -> tuple[float, float]:
        return 0.0, 0.0

    def jump_points(self) -> tuple[float, ...]:
        """Interior discontinuities of F, used as quadrature breakpoints."""
        return ()

    def mean(self) -> float:
        """E[Y] = integral of (1 - F) over [0, 1] (support is nonnegative)."""
        grid = np.linspace(0.0, 1.0, 4001)
        return float(np.trapezoid(1.0 - self.eval(grid), grid))


def bisect_inverse(cdf: PredictiveCDF, alpha: float, tol: float = 1e-10) -> float:
    """Reference inversion by bisection; cross-checks the analytic paths."""
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if cdf.eval(mid) >= alpha:
            hi = mid
        else:
            lo = mid
    return hi


class TruncatedGaussian(PredictiveCDF):
    """Gaussian conditioned on [0, 1]; continuous, no boundary mass."""

    def __init__(self, mu: float, sigma: float):
        if sigma <= 0:
            raise DataError("sigma must be positive")
        self.mu = float(mu)
        self.sigma = float(sigma)
        self._a = (0.0 - self.mu) / self.sigma
        self._b = (1.0 - self.mu) / self.sigma
        self._z = _NORM.cdf(self._b) - _NORM.cdf(self._a)
        if self._z <= 0:
            raise NumericError("truncation interval carries no probability mass")

    def eval(self, y):
        arr, scalar = _as_array(y)
        inner = (_NORM.cdf((arr - self.mu) / self.sigma) - _NORM.cdf(self._a)) / self._z
        out = np.clip(inner, 0.0, 1.0)
        out = np.where(arr < 0.0, 0.0, out)
        out = np.where(arr >= 1.0, 1.0, out)
        return float(out[0]) if scalar else out

    def inverse(self, alpha):
        arr, scalar = _as_array(alpha)
        p = _NORM.cdf(self._a) + arr * self._z
        out = np.clip(self.mu + self.sigma * _NORM.ppf(p), 0.0, 1.0)
        return float(out[0]) if scalar else out

    def pdf(self, y):
        arr, scalar = _as_array(y)
        out = _NORM.pdf((arr - self.mu) / self.sigma) / (self.sigma * self._z)
        out = np.where((arr < 0.0) | (arr > 1.0), 0.0, out)
        return float(out[0]) if scalar else out

    def mean(self) -> float:
        return self.mu + self.sigma * (_NORM.pdf(self._a) - _NORM.pdf(self._b)) / self._z


class CensoredGaussian(PredictiveCDF):
    """Gaussian clipped to [0, 1]: point masses at both boundaries."""

    def __init__(self, mu: float, sigma: float):
        if sigma <= 0:
            raise DataError("sigma must be positive")
        self.mu = float(mu)
        self.sigma = float(sigma)
        self._a = (0.0 - self.mu) / self.sigma
        self._b = (1.0 - self.mu) / self.sigma

    def boundary_masses(self) -> tuple[float, float]:
        return float(_NORM.cdf(self._a)), float(_NORM.sf(self._b))

    def eval(self, y):
        arr, scalar = _as_array(y)
        out = _NORM.cdf((arr - self.mu) / self.sigma)
        out = np.where(arr < 0.0, 0.0, out)
        out = np.where(arr >= 1.0, 1.0, out)
        return float(out[0]) if scalar else out

    def interval(self, y: float) -> tuple[float, float]:
        hi = float(self.eval(y))
        lo = hi
        if y == 0.0:
            lo = 0.0
        if y == 1.0:
            lo = float(_NORM.cdf(self._b))
        return lo, hi

    def inverse(self, alpha):
        arr, scalar = _as_array(alpha)
        p0 = _NORM.cdf(self._a)
        p_hi = _NORM.cdf(self._b)
        inner = self.mu + self.sigma * _NORM.ppf(np.clip(arr, 1e-300, 1.0))
        out = np.where(arr <= p0, 0.0, np.where(arr > p_hi, 1.0, np.clip(inner, 0.0, 1.0)))
        return float(out[0]) if scalar else out

    def pdf(self, y):
        arr, scalar = _as_array(y)
        out = _NORM.pdf((arr - self.mu) / self.sigma) / self.sigma
        out = np.where((arr <= 0.0) | (arr >= 1.0), 0.0, out)
        return float(out[0]) if scalar else out

    def mean(self) -> float:
        za, zb = self._a, self._b
        interior = self.mu * (_NORM.cdf(zb) - _NORM.cdf(za)) + self.sigma * (
            _NORM.pdf(za) - _NORM.pdf(zb)
        )
        return float(interior + _NORM.sf(zb))


class GeneralizedLogitNormal(PredictiveCDF):
    """log(y**nu / (1 - y**nu)) is Gaussian; censored near both boundaries.

    Values inside (0, censor_eps) and (1 - censor_eps, 1) collapse to the
    boundaries, giving explicit point masses there.
    """

    def __init__(self, mu: float, sigma: float, nu: float = 1.0, censor_eps: float = 1e-3):
        if sigma <= 0 or nu <= 0:
            raise DataError("sigma and nu must be positive")
        if not 0.0 < censor_eps < 0.5:
            raise DataError("censor_eps must be in (0, 0.5)")
        self.mu = float(mu)
        self.sigma = float(sigma)
        self.nu = float(nu)
        self.censor_eps = float(censor_eps)
        self._t_lo = self.transform(censor_eps)
        self._t_hi = self.transform(1.0 - censor_eps)

    def transform(self, y):
        arr, scalar = _as_array(y)
        p = arr**self.nu
        out = np.log(p) - np.log1p(-p)
        return float(out[0]) if scalar else out

    def transform_slope(self, y: float) -> float:
        return self.nu / (y * (1.0 - y**self.nu))

    def inverse_transform(self, x):
        arr, scalar = _as_array(x)
        out = stats.logistic.cdf(arr) ** (1.0 / self.nu)
        return float(out[0]) if scalar else out

    def boundary_masses(self) -> tuple[float, float]:
        p0 = _NORM.cdf((self._t_lo - self.mu) / self.sigma)
        p1 = _NORM.sf((self._t_hi - self.mu) / self.sigma)
        return float(p0), float(p1)

    def eval(self, y):
        arr, scalar = _as_array(y)
        clipped = np.clip(arr, self.censor_eps, 1.0 - self.censor_eps)
        out = _NORM.cdf((self.transform(clipped) - self.mu) / self.sigma)
        out = np.where(arr < 0.0, 0.0, out)
        out = np.where(arr >= 1.0, 1.0, out)
        return float(out[0]) if scalar else out

    def interval(self, y: float) -> tuple[float, float]:
        hi = float(self.eval(y))
        lo = hi
        if y == 0.0:
            lo = 0.0
        if y == 1.0:
            lo = float(_NORM.cdf((self._t_hi - self.mu) / self.sigma))
        return lo, hi

    def inverse(self, alpha):
        arr, scalar = _as_array(alpha)
        p0, p1 = self.boundary_masses()
        x = self.mu + self.sigma * _NORM.ppf(np.clip(arr, 1e-300, 1.0 - 1e-16))
        inner = self.inverse_transform(x)
        out = np.where(arr <= p0, 0.0, np.where(arr > 1.0 - p1, 1.0, inner))
        return float(out[0]) if scalar else out

    def pdf(self, y):
        arr, scalar = _as_array(y)
        eps = self.censor_eps
        safe = np.clip(arr, eps / 2, 1.0 - eps / 2)
        slope = self.nu / (safe * (1.0 - safe**self.nu))
        out = _NORM.pdf((self.transform(safe) - self.mu) / self.sigma) / self.sigma * slope
        out = np.where((arr < eps) | (arr > 1.0 - eps), 0.0, out)
        return float(out[0]) if scalar else out


class BetaDensity(PredictiveCDF):
    def __init__(self, a: float, b: float):
        if a <= 0 or b <= 0:
            raise DataError("Beta shape parameters must be positive")
        self.a = float(a)
        self.b = float(b)
        self._dist = stats.beta(a, b)

    @staticmethod
    def from_moments(mean: float, variance: float) -> "BetaDensity":
        if not 0.0 < mean < 1.0:
            raise NumericError(f"Beta mean {mean} must lie strictly inside (0, 1)")
        if variance >= mean * (1.0 - mean):
            raise NumericError(
                f"variance {variance} infeasible for a Beta with mean {mean}"
            )
        if variance <= 0:
            raise NumericError("variance must be positive")
        nu = mean * (1.0 - mean) / variance - 1.0
        return BetaDensity(mean * nu, (1.0 - mean) * nu)

    def eval(self, y):
        arr, scalar = _as_array(y)
        out = self._dist.cdf(np.clip(arr, 0.0, 1.0))
        out = np.where(arr < 0.0, 0.0, out)
        return float(out[0]) if scalar else out

    def inverse(self, alpha):
        arr, scalar = _as_array(alpha)
        out = self._dist.ppf(arr)
        return float(out[0]) if scalar else out

    def pdf(self, y):
        arr, scalar = _as_array(y)
        out = self._dist.pdf(np.clip(arr, 0.0, 1.0))
        out = np.where((arr < 0.0) | (arr > 1.0), 0.0, out)
        return float(out[0]) if scalar else out

    def mean(self) -> float:
        return self.a / (self.a + self.b)


class PointMass(PredictiveCDF):
    """Degenerate distribution concentrated at one value."""

    def __init__(self, value: float):
        if not 0.0 <= value <= 1.0:
            raise DataError("point mass location must lie in [0, 1]")
        self.value = float(value)

    def eval(self, y):
        arr, scalar = _as_array(y)
        out = np.where(arr >= self.value, 1.0, 0.0)
        return float(out[0]) if scalar else out

    def inverse(self, alpha):
        arr, scalar = _as_array(alpha)
        out = np.full(arr.shape, self.value)
        return float(out[0]) if scalar else out

    def interval(self, y: float) -> tuple[float, float]:
        if y == self.value:
            return 0.0, 1.0
        v = float(self.eval(y))
        return v, v

    def jump_points(self) -> tuple[float, ...]:
        if 0.0 < self.value < 1.0:
            return (self.value,)
        return ()

    def boundary_masses(self) -> tuple[float, float]:
        return (1.0 if self.value == 0.0 else 0.0, 1.0 if self.value == 1.0 else 0.0)

    def mean(self) -> float:
        return self.value


PARAMETRIC_FAMILIES = ("truncated-gaussian", "censored-gaussian", "generalized-logit-normal", "beta")


@dataclass
class VarianceTracker:
    """Exponentially smoothed variance per tracked slot, floored at 1e-8."""

    smoothing: float
    variance: np.ndarray

    def __post_init__(self) -> None:
        if not 0.0 < self.smoothing <= 1.0:
            raise DataError("smoothing must be in (0, 1]")
        self.variance = np.maximum(np.asarray(self.variance, dtype=float), VARIANCE_FLOOR)

    @staticmethod
    def start(shape, smoothing: float = 0.98, initial: float = 0.01) -> "VarianceTracker":
        return VarianceTracker(smoothing, np.full(shape, float(initial)))

    def update(self, errors: np.ndarray) -> None:
        errors = np.asarray(errors, dtype=float)
        ok = ~np.isnan(errors)
        lam = self.smoothing
        new = lam * self.variance + (1.0 - lam) * errors**2
        self.variance = np.where(ok, np.maximum(new, VARIANCE_FLOOR), self.variance)


def _solve_location(make, target_mean: float, sigma: float) -> float:
    """Find mu so the family's mean hits target_mean (monotone in mu)."""
    target = min(max(target_mean, 1e-6), 1.0 - 1e-6)

    def gap(mu: float) -> float:
        return make(mu).mean() - target

    lo, hi = -1.0 - 4.0 * sigma, 2.0 + 4.0 * sigma
    for _ in range(80):
        if gap(lo) < 0:
            break
        lo = 2.0 * lo - 1.0
    for _ in range(80):
        if gap(hi) > 0:
            break
        hi = 2.0 * hi + 1.0
    return float(optimize.brentq(gap, lo, hi, xtol=1e-12, rtol=1e-15))


def make_parametric(
    point: float,
    variance: float,
    family: str,
    nu: float = 1.0,
    censor_eps: float = 1e-3,
) -> PredictiveCDF:
    """Build a parametric predictive density around a point forecast.

    The location/scale are chosen so the density's mean matches the point
    forecast (numerically for the truncated/censored families, analytically
    for Beta). The generalized logit-normal matches on the transformed scale
    instead: latent location at the transformed point forecast, latent scale
    from the tracked variance via the transform slope.
    """
    if not 0.0 <= point <= 1.0:
        raise DataError("point forecast must lie in [0, 1]")
    variance = max(float(variance), VARIANCE_FLOOR)
    sigma = float(np.sqrt(variance))
    if family == "truncated-gaussian":
        mu = _solve_location(lambda m: TruncatedGaussian(m, sigma), point, sigma)
        return TruncatedGaussian(mu, sigma)
    if family == "censored-gaussian":
        mu = _solve_location(lambda m: CensoredGaussian(m, sigma), point, sigma)
        return CensoredGaussian(mu, sigma)
    if family == "beta":
        return BetaDensity.from_moments(point, variance)
    if family == "generalized-logit-normal":
        anchor = min(max(point, censor_eps), 1.0 - censor_eps)
        probe = GeneralizedLogitNormal(0.0, 1.0, nu, censor_eps)
        mu = probe.transform(anchor)
        latent_sigma = max(sigma * probe.transform_slope(anchor), 1e-6)
        return GeneralizedLogitNormal(mu, latent_sigma, nu, censor_eps)
    raise DataError(f"unknown parametric family {family!r}")


def density_integral(cdf: PredictiveCDF, n: int = 200_001) -> float:
    """Continuous density mass plus boundary masses; should be 1 within 1e-6."""
    grid = np.linspace(0.0, 1.0, n)
    p0, p1 = cdf.boundary_masses()
    return float(np.trapezoid(cdf.pdf(grid), grid)) + p0 + p1


@dataclass(frozen=True)
class QuantileSet:
    """Quantile forecasts at strictly increasing levels, values in [0, 1]."""

    levels: np.ndarray
    values: np.ndarray
    tail_rates: tuple[float | None, float | None] = (None, None)

    def __post_init__(self) -> None:
        levels = np.asarray(self.levels, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if levels.ndim != 1 or levels.size < 1:
            raise DataError("need at least one quantile level")
        if np.any(levels <= 0.0) or np.any(levels >= 1.0):
            raise DataError("levels must lie strictly inside (0, 1)")
        if np.any(np.diff(levels) <= 0):
            raise DataError("levels must be strictly increasing")
        if values.shape != levels.shape:
            raise DataError("one value per level required")
        if np.any(values < 0.0) or np.any(values > 1.0):
            raise DataError("quantile values must lie in [0, 1]")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "values", values)

    def rearranged(self) -> "QuantileSet":
        """Repair crossing quantiles by sorting values across levels."""
        return QuantileSet(self.levels, np.sort(self.values), self.tail_rates)

    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.values) >= 0))


class QuantileCDF(PredictiveCDF):
    """Piecewise-linear CDF through quantile nodes with exponential tails.

    Interior levels interpolate linearly; beyond the outermost nodes the CDF
    decays exponentially, pinned to F(0) = 0 and F(1) = 1. Tail decay rates
    come from the set's tail_spec or are fitted to the outermost quantile
    gaps. Nodes sitting exactly on a boundary become boundary masses.
    """

    def __init__(self, qs: QuantileSet):
        qs = qs.rearranged()
        self.qs = qs
        a = qs.levels
        v = qs.values
        self._a = a
        self._v = v
        lo_rate, hi_rate = qs.tail_rates
        if lo_rate is None:
            if a.size >= 2 and v[1] > v[0]:
                lo_rate = float(np.log(a[1] / a[0]) / (v[1] - v[0]))
            else:
                lo_rate = 1.0
        if hi_rate is None:
            if a.size >= 2 and v[-1] > v[-2]:
                hi_rate = float(np.log((1.0 - a[-2]) / (1.0 - a[-1])) / (v[-1] - v[-2]))
            else:
                hi_rate = 1.0
        if lo_rate <= 0 or hi_rate <= 0:
            raise DataError("tail decay rates must be positive")
        self._lo_rate = lo_rate
        self._hi_rate = hi_rate

    def _interior(self, y: np.ndarray, side: str) -> np.ndarray:
        # piecewise-linear through the nodes; tie runs become CDF jumps, and
        # the search side picks the bottom (left limit) or top (value) of a jump
        a, v = self._a, self._v
        if v.size == 1:
            return np.full(y.shape, a[0])
        idx = np.searchsorted(v, y, side=side)
        idx = np.clip(idx, 1, v.size - 1)
        v_lo = v[idx - 1]
        v_hi = v[idx]
        gap = v_hi - v_lo
        safe = np.where(gap > 0, gap, 1.0)
        frac = np.clip((y - v_lo) / safe, 0.0, 1.0)
        frac = np.where(gap > 0, frac, 1.0 if side == "right" else 0.0)
        return a[idx - 1] + frac * (a[idx] - a[idx - 1])

    def _eval_side(self, y, side: str):
        arr, scalar = _as_array(y)
        a, v = self._a, self._v
        out = self._interior(arr, side)
        if v[0] > 0.0:
            rate = self._lo_rate
            base = np.exp(-rate * v[0])
            tail = a[0] * (np.exp(rate * (arr - v[0])) - base) / (1.0 - base)
            out = np.where(arr < v[0], tail, out)
        if v[-1] < 1.0:
            rate = self._hi_rate
            span = 1.0 - v[-1]
            base = np.exp(-rate * span)
            tail = 1.0 - (1.0 - a[-1]) * (np.exp(-rate * (arr - v[-1])) - base) / (1.0 - base)
            out = np.where(arr > v[-1], tail, out)
        if side == "right":
            out = np.where(arr >= 1.0, 1.0, out)
        else:
            out = np.where(arr > 1.0, 1.0, out)
            out = np.where(arr == 0.0, 0.0, out)
        out = np.where(arr < 0.0, 0.0, out)
        return float(out[0]) if scalar else out

    def eval(self, y):
        return self._eval_side(y, "right")

    def interval(self, y: float) -> tuple[float, float]:
        return float(self._eval_side(y, "left")), float(self._eval_side(y, "right"))

    def boundary_masses(self) -> tuple[float, float]:
        return float(self.eval(0.0)), float(1.0 - self._eval_side(1.0, "left"))

    def jump_points(self) -> tuple[float, ...]:
        v = self._v
        ties = [float(x) for x in np.unique(v[:-1][np.diff(v) == 0]) if 0.0 < x < 1.0]
        return tuple(ties)

    def inverse(self, alpha):
        arr, scalar = _as_array(alpha)
        a, v = self._a, self._v
        out = np.interp(arr, a, v)
        if v[0] > 0.0:
            rate = self._lo_rate
            base = np.exp(-rate * v[0])
            inner = base + np.clip(arr / a[0], 0.0, 1.0) * (1.0 - base)
            tail = v[0] + np.log(np.maximum(inner, 1e-300)) / rate
            out = np.where(arr < a[0], np.maximum(tail, 0.0), out)
        else:
            out = np.where(arr < a[0], 0.0, out)
        if v[-1] < 1.0:
            rate = self._hi_rate
            span = 1.0 - v[-1]
            base = np.exp(-rate * span)
            inner = base + np.clip((1.0 - arr) / (1.0 - a[-1]), 0.0, 1.0) * (1.0 - base)
            tail = v[-1] - np.log(np.maximum(inner, 1e-300)) / rate
            out = np.where(arr > a[-1], np.minimum(tail, 1.0), out)
        else:
            out = np.where(arr > a[-1], 1.0, out)
        return float(out[0]) if scalar else out


def cdf_eval(cdf: PredictiveCDF, y: float) -> float:
    if not 0.0 <= y <= 1.0:
        raise DataError("y must lie in [0, 1]")
    return float(cdf.eval(y))


def cdf_inverse(cdf: PredictiveCDF, alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise DataError("alpha must lie strictly inside (0, 1)")
    return float(cdf.inverse(alpha))


@dataclass
class QRFit:
    coefficients: np.ndarray
    converged: bool
    iterations: int


def quantile_regression(
    design: np.ndarray,
    target: np.ndarray,
    alpha: float,
    forgetting: float | None = None,
    smoothing: float = 1e-4,
    tol: float = 1e-8,
    max_iter: int = 200,
) -> QRFit:
    """Linear quantile regression by IRLS on a smoothed check function.

    Minimizes the (exponentially weighted, when ``forgetting`` < 1) check
    loss with |u| smoothed to sqrt(u**2 + smoothing**2). Iterates until the
    coefficient change drops below ``tol`` or ``max_iter`` is hit; the last
    iterate is returned flagged when unconverged.
    """
    if not 0.0 < alpha < 1.0:
        raise DataError("alpha must lie strictly inside (0, 1)")
    x = np.asarray(design, dtype=float)
    yv = np.asarray(target, dtype=float)
    if x.ndim != 2 or x.shape[0] != yv.shape[0]:
        raise DataError("design and target row counts differ")
    n, p = x.shape
    if n < p:
        raise DataError("too few rows")
    if forgetting is None:
        tw = np.ones(n)
    else:
        if not 0.0 < forgetting <= 1.0:
            raise DataError("forgetting factor must be in (0, 1]")
        tw = forgetting ** np.arange(n - 1, -1, -1)

    sw = np.sqrt(tw)
    beta, _, rank, _ = np.linalg.lstsq(x * sw[:, None], yv * sw, rcond=None)
    if rank < p:
        raise NumericError("rank-deficient design")
    shift = (alpha - 0.5) * (x * tw[:, None]).sum(axis=0)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        u = yv - x @ beta
        w = tw / (2.0 * np.sqrt(u**2 + smoothing**2))
        xtw = x.T * w
        lhs = xtw @ x
        rhs = xtw @ yv + shift
        try:
            new = np.linalg.solve(lhs, rhs)
        except np.linalg.LinAlgError:
            raise NumericError("rank-deficient design") from None
        delta = float(np.max(np.abs(new - beta)))
        beta = new
        if delta < tol:
            return QRFit(beta, True, iterations)
    return QRFit(beta, False, iterations)


def check_loss(u: np.ndarray, alpha: float, weights: np.ndarray | None = None) -> float:
    """Mean (or weighted mean) check loss rho_alpha(u)."""
    u = np.asarray(u, dtype=float)
    loss = u * (alpha - (u < 0.0))
    if weights is None:
        return float(np.mean(loss))
    weights = np.asarray(weights, dtype=float)
    return float(np.sum(weights * loss) / np.sum(weights))


@dataclass
class AdaptiveQuantileModel:
    """Per-level linear quantile models sharing one design layout."""

    levels: np.ndarray
    coefficients: np.ndarray  # (L, p)
    converged: np.ndarray     # (L,) bool
    tail_rates: tuple[float | None, float | None] = (None, None)

    def predict_values(self, design: np.ndarray) -> np.ndarray:
        """Quantile values (N, L), rearranged nondecreasing and clipped to [0, 1]."""
        x = np.atleast_2d(np.asarray(design, dtype=float))
        raw = x @ self.coefficients.T
        return np.clip(np.sort(raw, axis=1), 0.0, 1.0)

    def predict(self, design: np.ndarray) -> list[QuantileSet]:
        vals = self.predict_values(design)
        return [QuantileSet(self.levels, row, self.tail_rates) for row in vals]


def fit_adaptive_qr(
    design: np.ndarray,
    target: np.ndarray,
    levels,
    forgetting: float = 1.0,
    min_rows_per_level: int = 50,
) -> AdaptiveQuantileModel:
    """Fit one exponentially weighted linear quantile model per level."""
    levels = np.asarray(levels, dtype=float)
    if np.any(levels <= 0.0) or np.any(levels >= 1.0) or np.any(np.diff(levels) <= 0):
        raise DataError("levels must be strictly increasing inside (0, 1)")
    x = np.asarray(design, dtype=float)
    if x.shape[0] < min_rows_per_level:
        raise DataError(
            f"{x.shape[0]} training rows; need at least {min_rows_per_level} per level"
        )
    coefs = np.empty((levels.size, x.shape[1]))
    converged = np.empty(levels.size, dtype=bool)
    for i, alpha in enumerate(levels):
        fit = quantile_regression(x, target, float(alpha), forgetting=forgetting)
        coefs[i] = fit.coefficients
        converged[i] = fit.converged
    return AdaptiveQuantileModel(levels, coefs, converged)


class ErrorClimatology:
    """Forecast-error quantiles binned by forecast level and lead bucket."""

    def __init__(
        self,
        level_edges=(0.0, 0.2, 0.4, 0.6, 0.8, 1.0),
        lead_bucket_hours: int = 6,
    ):
        self.level_edges = np.asarray(level_edges, dtype=float)
        self.lead_bucket_hours = int(lead_bucket_hours)
        self._bins: dict[tuple[int, int], list[float]] = {}
        self._pooled: dict[int, list[float]] = {}

    def bucket(self, lead: int) -> int:
        return (int(lead) - 1) // self.lead_bucket_hours

    def level_bin(self, point: float) -> int:
        edges = self.level_edges
        return int(np.clip(np.searchsorted(edges, point, side="right") - 1, 0, edges.size - 2))

    def add(self, point: float, actual: float, lead: int) -> None:
        err = actual - point
        key = (self.bucket(lead), self.level_bin(point))
        self._bins.setdefault(key, []).append(err)
        self._pooled.setdefault(key[0], []).append(err)

    def add_many(self, points, actuals, leads) -> None:
        for p, a, k in zip(points, actuals, leads):
            if not (np.isnan(p) or np.isnan(a)):
                self.add(float(p), float(a), int(k))

    def bin_count(self, lead: int, point: float) -> int:
        return len(self._bins.get((self.bucket(lead), self.level_bin(point)), ()))

    def error_quantiles(self, point: float, lead: int, levels) -> tuple[np.ndarray, bool]:
        """Error quantiles from the matching bin; pooled fallback when empty."""
        key = (self.bucket(lead), self.level_bin(point))
        errors = self._bins.get(key)
        fallback = False
        if not errors:
            errors = self._pooled.get(key[0])
            fallback = True
            if not errors:
                raise DataError(f"no error history for lead bucket {key[0]}")
        return np.quantile(np.asarray(errors), np.asarray(levels)), fallback


def dress_point_forecast(
    point: float,
    lead: int,
    climatology: ErrorClimatology,
    levels,
) -> tuple[QuantileSet, bool]:
    """Turn a point forecast into quantiles by adding conditional error quantiles."""
    levels = np.asarray(levels, dtype=float)
    err_q, fallback = climatology.error_quantiles(point, lead, levels)
    vals = np.clip(point + err_q, 0.0, 1.0)
    return QuantileSet(levels, np.sort(vals)), fallback
