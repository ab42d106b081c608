"""Day-ahead offering under two-price imbalance settlement, and reserve sizing.

The optimal offer is the predictive quantile at the cost-ratio level (a
newsvendor solution); settlement decomposes revenue into a fatal day-ahead
part minus an imbalance cost. Reserve requirements come from convolving
component uncertainty densities on a numeric grid and reading quantiles off
the split margin density.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .density import PredictiveCDF
from .errors import DataError, NumericError

QUAD_POINTS = 2001
_GAUSS_OFFSET = 0.5 / np.sqrt(3.0)


def gauss2_integral(fun, edges: np.ndarray) -> float:
    """Two-point Gauss-Legendre per cell: exact for piecewise-linear integrands
    whose kinks and jumps sit on cell edges."""
    a = edges[:-1]
    b = edges[1:]
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    lo = mid - half * 2.0 * _GAUSS_OFFSET
    hi = mid + half * 2.0 * _GAUSS_OFFSET
    return float(np.sum(half * (fun(lo) + fun(hi))))


def _edges(points: np.ndarray, lo: float, hi: float, extra=()) -> np.ndarray:
    cut = np.concatenate([points, np.asarray(extra, dtype=float)])
    cut = cut[(cut >= lo) & (cut <= hi)]
    return np.unique(np.concatenate([[lo, hi], cut]))


@dataclass(frozen=True)
class MarketPrices:
    """Settlement prices per delivery lead, with derived regulation unit costs."""

    leads: tuple[int, ...]
    day_ahead: np.ndarray       # pi_c
    balancing_buy: np.ndarray   # pi_b
    balancing_sell: np.ndarray  # pi_s

    def __post_init__(self) -> None:
        pc = np.asarray(self.day_ahead, dtype=float)
        pb = np.asarray(self.balancing_buy, dtype=float)
        ps = np.asarray(self.balancing_sell, dtype=float)
        n = len(self.leads)
        if not (pc.shape == pb.shape == ps.shape == (n,)):
            raise DataError("one price triple per lead required")
        if np.any(pc - ps < -1e-12) or np.any(pb - pc < -1e-12):
            raise DataError(
                "two-price settlement requires pi_c >= pi_s and pi_b >= pi_c "
                "(nonnegative regulation unit costs)"
            )
        object.__setattr__(self, "day_ahead", pc)
        object.__setattr__(self, "balancing_buy", pb)
        object.__setattr__(self, "balancing_sell", ps)

    @property
    def down_cost(self) -> np.ndarray:
        """Unit cost of surplus (production above contract)."""
        return np.maximum(self.day_ahead - self.balancing_sell, 0.0)

    @property
    def up_cost(self) -> np.ndarray:
        """Unit cost of deficit (production below contract)."""
        return np.maximum(self.balancing_buy - self.day_ahead, 0.0)

    def at(self, lead: int) -> tuple[float, float, float]:
        i = self.leads.index(lead)
        return float(self.day_ahead[i]), float(self.down_cost[i]), float(self.up_cost[i])


@dataclass(frozen=True)
class MarketSpec:
    """Operational window: gate closure offset and delivery leads."""

    gate_closure_offset_h: int = 12
    lead_start: int = 13
    lead_end: int = 37

    def __post_init__(self) -> None:
        if self.gate_closure_offset_h <= 0:
            raise DataError("gate closure offset must be positive")
        if self.lead_end < self.lead_start:
            raise DataError("empty delivery window")

    @property
    def delivery_leads(self) -> range:
        return range(self.lead_start, self.lead_end + 1)


@dataclass(frozen=True)
class Bid:
    """Offered energy per lead (normalized) and the quantile level used."""

    leads: tuple[int, ...]
    levels: np.ndarray
    volumes: np.ndarray

    def __post_init__(self) -> None:
        vol = np.asarray(self.volumes, dtype=float)
        lev = np.asarray(self.levels, dtype=float)
        if vol.shape != (len(self.leads),) or lev.shape != vol.shape:
            raise DataError("one (level, volume) pair per lead required")
        if np.any(vol < 0.0) or np.any(vol > 1.0):
            raise DataError("bid volumes must lie in [0, 1]")
        object.__setattr__(self, "levels", lev)
        object.__setattr__(self, "volumes", vol)


def newsvendor_level(pi_down: float, pi_up: float) -> float:
    """Optimal quantile level from the regulation unit costs."""
    if pi_down < 0 or pi_up < 0:
        raise DataError("regulation unit costs must be nonnegative")
    total = pi_down + pi_up
    if total <= 0:
        raise DataError("both unit costs are zero: the offer is indifferent")
    return pi_down / total


def optimal_bid(marginals, prices: MarketPrices) -> Bid:
    """Quantile offers: volume per lead is the predictive quantile at the
    cost-ratio level."""
    cdfs = list(marginals)
    if len(cdfs) != len(prices.leads):
        raise DataError("one predictive CDF per delivery lead required")
    levels = np.empty(len(cdfs))
    volumes = np.empty(len(cdfs))
    for i, cdf in enumerate(cdfs):
        alpha = newsvendor_level(float(prices.down_cost[i]), float(prices.up_cost[i]))
        levels[i] = alpha
        volumes[i] = np.clip(cdf.inverse(alpha), 0.0, 1.0)
    return Bid(tuple(prices.leads), levels, volumes)


def expected_imbalance_cost(
    cdf: PredictiveCDF, pi_down: float, pi_up: float, contract: float
) -> float:
    """E[imbalance cost] for a contract: pi_down * E[surplus] + pi_up * E[deficit].

    Uses the tail-integral identities E[(Y-c)+] = int_c^1 (1-F) and
    E[(c-Y)+] = int_0^c F, with quadrature on a 2001-point grid refined by
    the contract level and any CDF jump points, so boundary masses are exact.
    """
    if not 0.0 <= contract <= 1.0:
        raise DataError("contract volume must lie in [0, 1]")
    base = np.linspace(0.0, 1.0, QUAD_POINTS)
    jumps = np.asarray(cdf.jump_points(), dtype=float)
    surplus = 0.0
    deficit = 0.0
    if contract < 1.0:
        edges = _edges(base, contract, 1.0, jumps)
        surplus = gauss2_integral(lambda x: 1.0 - cdf.eval(x), edges)
    if contract > 0.0:
        edges = _edges(base, 0.0, contract, jumps)
        deficit = gauss2_integral(cdf.eval, edges)
    return float(pi_down * surplus + pi_up * deficit)


@dataclass(frozen=True)
class RevenueBreakdown:
    """Settlement identity R = day_ahead - balancing_cost, elementwise."""

    day_ahead: np.ndarray
    balancing_cost: np.ndarray
    revenue: np.ndarray
    imbalance: np.ndarray


def settle(realized, contract, pi_c, pi_down, pi_up) -> RevenueBreakdown:
    """Two-price settlement of realized production against a contract.

    All arguments broadcast; surplus is charged at pi_down per unit, deficit
    at pi_up per unit, and the day-ahead part pays pi_c times the realized
    energy regardless of the contract.
    """
    y = np.asarray(realized, dtype=float)
    c = np.asarray(contract, dtype=float)
    if np.any(y < 0.0) or np.any(y > 1.0):
        raise DataError("realized production must lie in [0, 1]")
    d = y - c
    fatal = np.asarray(pi_c, dtype=float) * y
    cost = np.where(d >= 0.0, np.asarray(pi_down, dtype=float) * d,
                    -np.asarray(pi_up, dtype=float) * d)
    return RevenueBreakdown(fatal, cost, fatal - cost, d)


def evaluate_bid_on_trajectories(
    paths: np.ndarray, volumes: np.ndarray, pi_down: np.ndarray, pi_up: np.ndarray
) -> float:
    """Mean imbalance cost of a per-lead bid over sampled trajectories.

    This is the scenario-based evaluator for multi-period offers: paths is
    (J, n_leads) in power space for the traded series.
    """
    paths = np.asarray(paths, dtype=float)
    d = paths - np.asarray(volumes, dtype=float)[None, :]
    cost = np.where(d >= 0.0, pi_down[None, :] * d, -pi_up[None, :] * d)
    return float(np.mean(np.sum(cost, axis=1)))


class GridDensity:
    """Probability masses on a uniform numeric grid."""

    def __init__(self, start: float, step: float, masses: np.ndarray):
        masses = np.asarray(masses, dtype=float)
        if masses.ndim != 1 or masses.size < 1:
            raise DataError("masses must be a nonempty vector")
        if np.any(masses < -1e-15):
            raise DataError("masses must be nonnegative")
        if step <= 0:
            raise DataError("grid step must be positive")
        self.start = float(start)
        self.step = float(step)
        self.masses = np.maximum(masses, 0.0)

    @property
    def grid(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.masses.size)

    @property
    def total(self) -> float:
        return float(self.masses.sum())

    def normalized(self) -> "GridDensity":
        total = self.total
        if total <= 0:
            raise NumericError("cannot normalize a zero-mass density")
        return GridDensity(self.start, self.step, self.masses / total)

    def mean(self) -> float:
        return float(np.dot(self.grid, self.masses) / self.total)

    def variance(self) -> float:
        mu = self.mean()
        return float(np.dot((self.grid - mu) ** 2, self.masses) / self.total)

    def cdf_values(self) -> np.ndarray:
        return np.cumsum(self.masses)

    def quantile(self, tau: float) -> float:
        """Generalized inverse: smallest grid point with CDF >= tau."""
        if not 0.0 <= tau <= 1.0:
            raise DataError("quantile level must lie in [0, 1]")
        cum = self.cdf_values()
        if tau >= cum[-1]:
            positive = np.nonzero(self.masses > 0)[0]
            return float(self.grid[positive[-1]])
        idx = int(np.searchsorted(cum, tau, side="left"))
        return float(self.grid[idx])

    def eval(self, y) -> np.ndarray:
        """Step CDF at y (right-continuous)."""
        arr = np.asarray(y, dtype=float)
        idx = np.floor((arr - self.start) / self.step + 1e-9).astype(int)
        cum = np.concatenate([[0.0], self.cdf_values()])
        return cum[np.clip(idx + 1, 0, self.masses.size)]

    def inverse(self, alpha) -> np.ndarray:
        arr = np.atleast_1d(np.asarray(alpha, dtype=float))
        out = np.array([self.quantile(float(a)) for a in arr])
        return float(out[0]) if np.ndim(alpha) == 0 else out

    def is_delta(self) -> bool:
        return int(np.count_nonzero(self.masses)) == 1

    def delta_location(self) -> float:
        idx = int(np.nonzero(self.masses)[0][0])
        return float(self.grid[idx])

    def resample(self, new_step: float) -> "GridDensity":
        """Linear density interpolation onto a finer/coarser uniform grid."""
        if abs(new_step - self.step) <= 1e-9 * max(new_step, self.step):
            return self
        if self.is_delta():
            return GridDensity(self.delta_location(), new_step, np.array([self.total]))
        lo = self.start
        hi = self.start + self.step * (self.masses.size - 1)
        n = int(np.floor((hi - lo) / new_step)) + 1
        if n < 2:
            raise DataError("grids incompatible after resampling")
        new_grid = lo + new_step * np.arange(n)
        dens = np.interp(new_grid, self.grid, self.masses / self.step)
        masses = dens * new_step
        total = masses.sum()
        if total <= 0:
            raise DataError("grids incompatible after resampling")
        return GridDensity(lo, new_step, masses * (self.total / total))

    @staticmethod
    def delta(location: float, step: float = 1e-3) -> "GridDensity":
        return GridDensity(location, step, np.array([1.0]))

    @staticmethod
    def gaussian(mean: float, sd: float, step: float = 1e-3, half_width: float = 1.0) -> "GridDensity":
        """Discretized Gaussian on [mean-half_width, mean+half_width]."""
        if sd <= 0:
            raise DataError("sd must be positive")
        n = int(round(2 * half_width / step)) + 1
        grid = (mean - half_width) + step * np.arange(n)
        masses = np.exp(-0.5 * ((grid - mean) / sd) ** 2)
        return GridDensity(float(grid[0]), step, masses / masses.sum())

    @staticmethod
    def two_point_outage(prob: float, size: float, step: float = 1e-3) -> "GridDensity":
        """Generation-loss preset: mass ``prob`` at -size, rest at zero (synthetic)."""
        if not 0.0 <= prob <= 1.0:
            raise DataError("outage probability must lie in [0, 1]")
        if size <= 0:
            raise DataError("outage size must be positive")
        n = int(round(size / step))
        masses = np.zeros(n + 1)
        masses[0] = prob
        masses[-1] = 1.0 - prob
        return GridDensity(-n * step, step, masses)

    @staticmethod
    def from_samples(samples: np.ndarray, step: float = 1e-3, lo: float = -1.0, hi: float = 1.0) -> "GridDensity":
        """Histogram density of empirical samples on a fixed grid."""
        samples = np.asarray(samples, dtype=float)
        samples = samples[~np.isnan(samples)]
        if samples.size == 0:
            raise DataError("no samples")
        n = int(round((hi - lo) / step)) + 1
        idx = np.clip(np.round((samples - lo) / step).astype(int), 0, n - 1)
        masses = np.zeros(n)
        np.add.at(masses, idx, 1.0)
        return GridDensity(lo, step, masses / samples.size)


def convolve_densities(a: GridDensity, b: GridDensity) -> GridDensity:
    """Distribution of the sum of two independent grid variables."""
    if a.is_delta():
        return GridDensity(b.start + a.delta_location(), b.step, b.masses * a.total)
    if b.is_delta():
        return GridDensity(a.start + b.delta_location(), a.step, a.masses * b.total)
    step = min(a.step, b.step)
    a = a.resample(step)
    b = b.resample(step)
    masses = np.convolve(a.masses, b.masses)
    return GridDensity(a.start + b.start, step, masses)


@dataclass(frozen=True)
class ReserveProblem:
    """Component uncertainty densities and piecewise-linear reserve costs.

    Cost slopes: holding a megawatt of unused reserve costs ``hold`` per MW;
    being short costs ``short`` per MW. Convexity of the newsvendor objective
    needs short > hold >= 0 on each side.
    """

    load_error: GridDensity
    generation_loss: GridDensity
    wind_error: GridDensity
    up_hold: float
    up_short: float
    down_hold: float
    down_short: float

    def __post_init__(self) -> None:
        for name in ("load_error", "generation_loss", "wind_error"):
            dens = getattr(self, name)
            if abs(dens.total - 1.0) > 1e-6:
                raise DataError(f"{name} density mass {dens.total} not within 1e-6 of 1")
        for side in ("up", "down"):
            hold = getattr(self, f"{side}_hold")
            short = getattr(self, f"{side}_short")
            if not (short > hold >= 0.0):
                raise DataError(
                    f"non-convex cost spec on {side} side: need short > hold >= 0"
                )


@dataclass(frozen=True)
class SystemMarginDensity:
    """Convolved margin density split into surplus and deficit parts."""

    density: GridDensity

    def surplus_part(self) -> GridDensity:
        """Distribution of max(O, 0): surplus magnitudes, atom at 0 for O <= 0."""
        return _folded(self.density, positive=True)

    def deficit_part(self) -> GridDensity:
        """Distribution of max(-O, 0): deficit magnitudes, atom at 0 for O >= 0."""
        return _folded(self.density, positive=False)


def _folded(dens: GridDensity, positive: bool) -> GridDensity:
    x = dens.grid
    mag = np.maximum(x if positive else -x, 0.0)
    n = int(np.ceil(mag.max() / dens.step + 1e-9)) + 1
    masses = np.zeros(n)
    idx = np.clip(np.round(mag / dens.step).astype(int), 0, n - 1)
    np.add.at(masses, idx, dens.masses)
    return GridDensity(0.0, dens.step, masses)


def convolve_margin(problem: ReserveProblem) -> SystemMarginDensity:
    """System margin density: the three components convolved, renormalized."""
    combined = convolve_densities(
        convolve_densities(problem.load_error, problem.generation_loss),
        problem.wind_error,
    )
    return SystemMarginDensity(combined.normalized())


def expected_reserve_cost(part: GridDensity, q: float, hold: float, short: float) -> float:
    """E[hold * (q - D)+ + short * (D - q)+] over the one-sided magnitude D."""
    d = part.grid
    gap = q - d
    per_point = np.where(gap >= 0.0, hold * gap, -short * gap)
    return float(np.dot(per_point, part.masses) / part.total)


def grid_search_reserve(part: GridDensity, hold: float, short: float, n_points: int = 1000) -> float:
    """Brute-force minimizer of the expected reserve cost on a candidate grid."""
    hi = float(part.grid[np.nonzero(part.masses > 0)[0][-1]])
    candidates = np.linspace(0.0, max(hi, part.step), n_points)
    costs = [expected_reserve_cost(part, float(c), hold, short) for c in candidates]
    return float(candidates[int(np.argmin(costs))])


def optimal_reserves(
    problem: ReserveProblem, margin: SystemMarginDensity, verify_grid: int = 1000
) -> tuple[float, float]:
    """(upward, downward) reserve: quantiles of the split margin density.

    Each side solves a newsvendor with quantile level short/(short + hold),
    cross-checked against a brute-force grid search; a discrepancy beyond one
    candidate-grid step raises.
    """
    results = []
    for part, hold, short in (
        (margin.deficit_part(), problem.up_hold, problem.up_short),
        (margin.surplus_part(), problem.down_hold, problem.down_short),
    ):
        tau = short / (short + hold)
        q = part.quantile(tau)
        if verify_grid:
            hi = float(part.grid[np.nonzero(part.masses > 0)[0][-1]])
            search_step = max(hi, part.step) / (verify_grid - 1)
            brute = grid_search_reserve(part, hold, short, verify_grid)
            tol = max(search_step, part.step) + 1e-12
            if abs(q - brute) > tol:
                raise NumericError(
                    f"closed-form reserve {q} deviates from grid search {brute}"
                )
        results.append(q)
    return float(results[0]), float(results[1])


def persistence_price_forecast(prices: MarketPrices) -> MarketPrices:
    """Pass-through price forecaster: tomorrow's unit costs equal today's."""
    return MarketPrices(prices.leads, prices.day_ahead, prices.balancing_buy, prices.balancing_sell)
