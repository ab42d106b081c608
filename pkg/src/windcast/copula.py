"""Joint space-time predictive distribution via a Gaussian copula.

Calibrated marginals map observations to a latent Gaussian vector; a
unit-diagonal correlation matrix tracked by exponential smoothing captures
the space-time dependence; trajectories come from sampling the latent
Gaussian and inverting the marginals cell by cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .data import MultivariateTarget
from .density import PredictiveCDF
from .errors import DataError, NumericError
from .util import PROB_CLAMP, spawn_rng

_NORM = stats.norm

JITTER_START = 1e-12
JITTER_MAX = 1e-8


def cholesky_with_jitter(matrix: np.ndarray) -> np.ndarray:
    """Cholesky factor with a bounded diagonal-jitter ladder (1e-12 to 1e-8)."""
    dim = matrix.shape[0]
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_START
    while jitter <= JITTER_MAX:
        try:
            return np.linalg.cholesky(matrix + jitter * np.eye(dim))
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericError("matrix not positive semi-definite within jitter tolerance")


@dataclass(frozen=True)
class LatentCovariance:
    """Correlation matrix of the latent Gaussian over the site-major layout.

    A correlation (not covariance) is tracked: latent marginals are standard
    normal by construction, so each update renormalizes to a unit diagonal,
    removing scale drift.
    """

    matrix: np.ndarray
    smoothing: float = 0.98

    def __post_init__(self) -> None:
        mat = np.asarray(self.matrix, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise DataError("correlation matrix must be square")
        if not np.allclose(mat, mat.T, atol=1e-10):
            raise DataError("correlation matrix must be symmetric")
        if not np.allclose(np.diag(mat), 1.0, atol=1e-10):
            raise DataError("correlation matrix must have a unit diagonal")
        if not 0.0 < self.smoothing <= 1.0:
            raise DataError("smoothing must be in (0, 1]")
        mat = mat.copy()
        mat.flags.writeable = False
        object.__setattr__(self, "matrix", mat)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @staticmethod
    def identity(dim: int, smoothing: float = 0.98) -> "LatentCovariance":
        return LatentCovariance(np.eye(dim), smoothing)


@dataclass(frozen=True)
class LatentSample:
    """One latent Gaussian vector for a forecast origin."""

    z: np.ndarray
    origin: np.datetime64 | None = None

    def __post_init__(self) -> None:
        z = np.asarray(self.z, dtype=float)
        if not np.all(np.isfinite(z)):
            raise DataError("latent sample must be finite")
        object.__setattr__(self, "z", z)


@dataclass(frozen=True)
class TrajectorySet:
    """J joint sample paths over the (site, lead) window, in power space."""

    paths: np.ndarray  # (J, m, n)
    origin: np.datetime64 | None = None

    def __post_init__(self) -> None:
        paths = np.asarray(self.paths, dtype=float)
        if paths.ndim != 3 or paths.shape[0] < 1:
            raise DataError("paths must be (J, m, n) with J >= 1")
        if np.nanmin(paths) < 0.0 or np.nanmax(paths) > 1.0:
            raise DataError("trajectory values must lie in [0, 1]")
        object.__setattr__(self, "paths", paths)

    @property
    def n_paths(self) -> int:
        return self.paths.shape[0]

    def flat(self) -> np.ndarray:
        """(J, m*n) site-major flattening."""
        j = self.paths.shape[0]
        return self.paths.reshape(j, -1)


def _marginal_grid(marginals) -> np.ndarray:
    grid = np.asarray(marginals, dtype=object)
    if grid.ndim != 2:
        raise DataError("marginals must be an (m, n) grid of predictive CDFs")
    for cell in grid.reshape(-1):
        if not isinstance(cell, PredictiveCDF):
            raise DataError("every cell needs a predictive CDF")
    return grid


def to_latent(observations: np.ndarray, marginals, origin=None) -> LatentSample:
    """Map an (m, n) observation window through the marginals to latent space.

    Probabilities are clamped to [1e-9, 1 - 1e-9] before the normal inverse
    so boundary masses stay finite.
    """
    grid = _marginal_grid(marginals)
    obs = np.asarray(observations, dtype=float)
    if obs.shape != grid.shape:
        raise DataError(f"observation window {obs.shape} does not match marginals {grid.shape}")
    if np.isnan(obs).any():
        raise DataError("observation window contains missing cells")
    if obs.min() < 0.0 or obs.max() > 1.0:
        raise DataError("observations must lie in [0, 1]")
    probs = np.empty(grid.size)
    flat_obs = obs.reshape(-1)
    for i, cell in enumerate(grid.reshape(-1)):
        probs[i] = cell.eval(float(flat_obs[i]))
    probs = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return LatentSample(_NORM.ppf(probs), origin)


def update_covariance(cov: LatentCovariance, sample: LatentSample) -> LatentCovariance:
    """Exponentially smoothed rank-one update, renormalized to a correlation."""
    z = sample.z
    if z.shape != (cov.dim,):
        raise DataError(f"latent sample dim {z.shape} does not match {cov.dim}")
    lam = cov.smoothing
    if lam == 1.0:
        return cov
    raw = lam * cov.matrix + (1.0 - lam) * np.outer(z, z)
    scale = np.sqrt(np.maximum(np.diag(raw), 1e-300))
    normalized = raw / np.outer(scale, scale)
    np.fill_diagonal(normalized, 1.0)
    normalized = 0.5 * (normalized + normalized.T)
    return LatentCovariance(normalized, lam)


def track_covariance(cov: LatentCovariance, samples) -> LatentCovariance:
    """Fold a time-ordered sequence of latent samples into the tracker."""
    for s in samples:
        cov = update_covariance(cov, s if isinstance(s, LatentSample) else LatentSample(s))
    return cov


def _latent_draws(cov: LatentCovariance, n_draws: int, seed: int) -> np.ndarray:
    chol = cholesky_with_jitter(cov.matrix)
    out = np.empty((n_draws, cov.dim))
    for j in range(n_draws):
        rng = spawn_rng(seed, j)
        out[j] = chol @ rng.standard_normal(cov.dim)
    return out


def sample_trajectories(
    marginals,
    cov: LatentCovariance,
    n_paths: int,
    seed: int,
    origin=None,
) -> TrajectorySet:
    """Draw J trajectories: latent Gaussian draws pushed through the marginal inverses.

    Draw j uses an RNG stream derived deterministically from (seed, j), so
    the result is reproducible and independent of any parallel schedule.
    """
    grid = _marginal_grid(marginals)
    if n_paths < 1:
        raise DataError("need at least one trajectory")
    m, n = grid.shape
    if cov.dim != m * n:
        raise DataError(f"covariance dim {cov.dim} does not match window {m}x{n}")
    z = _latent_draws(cov, n_paths, seed)
    u = _NORM.cdf(z)  # (J, m*n)
    paths = np.empty((n_paths, m * n))
    cells = grid.reshape(-1)
    for i, cell in enumerate(cells):
        paths[:, i] = cell.inverse(u[:, i])
    return TrajectorySet(paths.reshape(n_paths, m, n), origin)


def joint_cdf(
    observations: np.ndarray,
    marginals,
    cov: LatentCovariance,
    n_draws: int = 100_000,
    seed: int = 0,
) -> tuple[float, float]:
    """Monte-Carlo estimate of the joint CDF at the observation window.

    Returns (estimate, standard error). The joint probability is the chance
    that a latent Gaussian draw falls below the transformed observation in
    every coordinate.
    """
    sample = to_latent(observations, marginals)
    chol = cholesky_with_jitter(cov.matrix)
    rng = spawn_rng(seed, 0)
    hits = 0
    chunk = 20_000
    done = 0
    while done < n_draws:
        take = min(chunk, n_draws - done)
        z = rng.standard_normal((take, cov.dim)) @ chol.T
        hits += int(np.sum(np.all(z <= sample.z, axis=1)))
        done += take
    p = hits / n_draws
    se = float(np.sqrt(max(p * (1.0 - p), 1e-12) / n_draws))
    return float(p), se


def latent_target(sites, leads) -> MultivariateTarget:
    """Convenience constructor pinning the site-major layout."""
    return MultivariateTarget(sites, leads)
