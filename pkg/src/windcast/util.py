"""Shared numeric helpers: seeded RNG streams, batch CDF interpolation, worker count."""

from __future__ import annotations

import os

import numpy as np

PROB_CLAMP = 1e-9


def spawn_rng(seed: int, *key: int) -> np.random.Generator:
    """Deterministic child RNG stream for (seed, key).

    Streams for distinct keys are independent, so per-draw work can be
    parallelized without changing results.
    """
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def worker_count() -> int:
    """Parallelism cap from WINDCAST_THREADS (default 1: fully sequential)."""
    raw = os.environ.get("WINDCAST_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


def format_number(x: float) -> str:
    """Stable decimal rendering used by every CSV writer (shortest round-trip)."""
    if x != x:  # NaN marks a missing cell
        return ""
    return repr(float(x))


def batch_cdf_interp(values: np.ndarray, levels: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Evaluate many piecewise-linear CDFs at once.

    ``values`` has shape (N, L): per row, nondecreasing quantile values at the
    shared ``levels``. Returns F_i(y_i) per row, linear between nodes,
    right-continuous at ties, and clamped to [levels[0], levels[-1]] outside
    the node range. Tail shapes are refined by the per-marginal CDF objects;
    this fast path serves latent transforms where probabilities get clamped
    to the open unit interval anyway.
    """
    values = np.asarray(values, dtype=float)
    levels = np.asarray(levels, dtype=float)
    y = np.asarray(y, dtype=float)
    n, l = values.shape
    idx = np.sum(values <= y[:, None], axis=1)  # first node strictly above y
    out = np.empty(n, dtype=float)
    below = idx == 0
    above = idx == l
    out[below] = levels[0]
    out[above] = levels[-1]
    mid = ~(below | above)
    i = idx[mid]
    v_lo = values[mid, i - 1]
    v_hi = values[mid, i]
    a_lo = levels[i - 1]
    a_hi = levels[i]
    gap = v_hi - v_lo
    safe = np.where(gap > 0, gap, 1.0)
    frac = np.where(gap > 0, (y[mid] - v_lo) / safe, 0.0)
    out[mid] = a_lo + frac * (a_hi - a_lo)
    return out


def batch_inverse_interp(values: np.ndarray, levels: np.ndarray, alphas) -> np.ndarray:
    """Invert many piecewise-linear CDFs at once (generalized inverse).

    ``values``: (N, L) nondecreasing node values per row at shared ``levels``.
    ``alphas``: scalar, (N,) or (N, J). Outside the level range the outermost
    node value is returned (tail handling belongs to the per-marginal CDF
    objects).
    """
    values = np.asarray(values, dtype=float)
    levels = np.asarray(levels, dtype=float)
    n, l = values.shape
    a = np.asarray(alphas, dtype=float)
    if a.ndim == 0:
        a2 = np.full((n, 1), float(a))
        out_shape: tuple[int, ...] = (n,)
    elif a.ndim == 1:
        a2 = a[:, None]
        out_shape = (n,)
    else:
        a2 = a
        out_shape = a.shape
    idx = np.searchsorted(levels, a2, side="left")
    idx = np.clip(idx, 1, l - 1)
    rows = np.arange(n)[:, None]
    a_lo = levels[idx - 1]
    a_hi = levels[idx]
    v_lo = values[rows, idx - 1]
    v_hi = values[rows, idx]
    gap = a_hi - a_lo
    safe = np.where(gap > 0, gap, 1.0)
    frac = np.where(gap > 0, (a2 - a_lo) / safe, 0.0)
    out = v_lo + frac * (v_hi - v_lo)
    out = np.where(a2 <= levels[0], values[:, [0]], out)
    out = np.where(a2 >= levels[-1], values[:, [-1]], out)
    return out.reshape(out_shape)
