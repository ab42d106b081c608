"""Domain types for the bounded space-time power process.

Measurements live on an equispaced hourly UTC grid, one column per site,
normalized by nominal capacity so every value sits in [0, 1]. Missing cells
are explicit (NaN + mask), never imputed.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

# ingestion noise this far above capacity clamps to 1.0; anything larger errors
CAPACITY_SLACK = 1e-9

HOUR = np.timedelta64(3600, "s")


@dataclass(frozen=True)
class SiteSet:
    """Ordered site identifiers with their nominal capacities in MW."""

    names: tuple[str, ...]
    capacities_mw: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.names) < 1:
            raise DataError("site set must contain at least one site")
        if len(set(self.names)) != len(self.names):
            raise DataError("site identifiers must be unique")
        if len(self.capacities_mw) != len(self.names):
            raise DataError("one capacity per site required")
        if any(c <= 0 for c in self.capacities_mw):
            raise DataError("capacities must be strictly positive")

    @property
    def m(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"unknown site {name!r}") from None

    def capacity(self, name: str) -> float:
        return self.capacities_mw[self.index(name)]


@dataclass(frozen=True)
class LeadTimeSet:
    """Forecast origin plus the consecutive hourly horizons 1..n issued from it."""

    origin: np.datetime64
    n_leads: int
    step_hours: float = 1.0

    def __post_init__(self) -> None:
        if self.n_leads < 1:
            raise DataError("need at least one lead time")
        if self.step_hours <= 0:
            raise DataError("step must be positive")
        object.__setattr__(self, "origin", np.datetime64(self.origin, "s"))

    @property
    def horizons(self) -> range:
        return range(1, self.n_leads + 1)

    def target_times(self) -> np.ndarray:
        steps = np.arange(1, self.n_leads + 1)
        return self.origin + (steps * self.step_hours * 3600).astype("timedelta64[s]")


def parse_utc(stamp: str) -> np.datetime64:
    """Parse an ISO-8601 UTC timestamp to second resolution."""
    text = stamp.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(text)
    except ValueError as exc:
        raise DataError(f"malformed timestamp {stamp!r}") from exc
    if dt.tzinfo is not None:
        dt = dt.astimezone(timezone.utc).replace(tzinfo=None)
    return np.datetime64(dt, "s")


def format_utc(ts: np.datetime64) -> str:
    return str(np.datetime64(ts, "s")) + "Z"


@dataclass(frozen=True)
class SpaceTimeSeries:
    """Normalized power observations on an equispaced hourly grid.

    ``values`` is (T, m) with NaN marking missing cells; every present value
    lies in [0, 1]. Instances are immutable: the array is write-protected at
    construction and safe to share across readers.
    """

    sites: SiteSet
    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        ts = np.asarray(self.timestamps, dtype="datetime64[s]")
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape[1] != self.sites.m:
            raise DataError("values must be (T, m) with one column per site")
        if ts.shape[0] != vals.shape[0]:
            raise DataError("one timestamp per row required")
        if ts.shape[0] == 0:
            raise DataError("series is empty")
        diffs = np.diff(ts)
        if ts.shape[0] > 1:
            if np.any(diffs <= np.timedelta64(0, "s")):
                raise DataError("timestamps must be strictly increasing")
            if np.any(diffs != diffs[0]):
                raise DataError("timestamps must be equispaced")
        present = vals[~np.isnan(vals)]
        if present.size and (present.min() < 0.0 or present.max() > 1.0):
            raise DataError("normalized values must lie in [0, 1]")
        vals = vals.copy()
        vals.flags.writeable = False
        ts = ts.copy()
        ts.flags.writeable = False
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)

    @property
    def mask(self) -> np.ndarray:
        """Boolean (T, m) array, True where the cell is missing."""
        return np.isnan(self.values)

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    def column(self, site: str) -> np.ndarray:
        return self.values[:, self.sites.index(site)]

    def hour_of_day(self) -> np.ndarray:
        """UTC hour of day per row (float, supports fractional steps)."""
        secs = self.timestamps.astype("datetime64[s]").astype(np.int64)
        return (secs % 86400) / 3600.0

    def row_at(self, when: np.datetime64) -> int:
        when = np.datetime64(when, "s")
        idx = np.searchsorted(self.timestamps, when)
        if idx >= self.n_steps or self.timestamps[idx] != when:
            raise DataError(f"timestamp {format_utc(when)} not on the series grid")
        return int(idx)


@dataclass(frozen=True)
class MultivariateTarget:
    """Site-major flattening of the (site, lead) random-variable index.

    Flat index = site_index * n_leads + (lead - 1). The layout is fixed so
    latent covariance indices stay stable across modules.
    """

    sites: SiteSet
    leads: LeadTimeSet

    @property
    def dim(self) -> int:
        return self.sites.m * self.leads.n_leads

    def flat_index(self, site: str, lead: int) -> int:
        if lead not in self.leads.horizons:
            raise DataError(f"lead {lead} outside horizon set")
        return self.sites.index(site) * self.leads.n_leads + (lead - 1)

    def cell(self, flat: int) -> tuple[str, int]:
        n = self.leads.n_leads
        if not 0 <= flat < self.dim:
            raise DataError(f"flat index {flat} out of range")
        return self.sites.names[flat // n], flat % n + 1


def flatten(target: MultivariateTarget, window: np.ndarray) -> np.ndarray:
    """Flatten an (m, n) site-by-lead window to the canonical vector."""
    window = np.asarray(window, dtype=float)
    if window.shape != (target.sites.m, target.leads.n_leads):
        raise DataError(
            f"window shape {window.shape} does not match "
            f"({target.sites.m}, {target.leads.n_leads})"
        )
    if np.isnan(window).any():
        raise DataError("window contains missing cells")
    return window.reshape(-1).copy()


def unflatten(target: MultivariateTarget, vector: np.ndarray) -> np.ndarray:
    vector = np.asarray(vector, dtype=float)
    if vector.shape != (target.dim,):
        raise DataError(f"vector length {vector.shape} does not match dim {target.dim}")
    return vector.reshape(target.sites.m, target.leads.n_leads).copy()


@dataclass(frozen=True)
class ZoneAggregation:
    """Zone grouping with capacity-share weights per original zone."""

    mapping: dict[str, str]
    weights: dict[str, float]
    aggregate_sites: SiteSet = field(compare=False)

    @staticmethod
    def from_sites(sites: SiteSet, mapping: dict[str, str]) -> "ZoneAggregation":
        for name in sites.names:
            if name not in mapping:
                raise DataError(f"zone {name!r} has no aggregate mapping")
        agg_names: list[str] = []
        for name in sites.names:
            agg = mapping[name]
            if agg not in agg_names:
                agg_names.append(agg)
        totals = {agg: 0.0 for agg in agg_names}
        for name in sites.names:
            totals[mapping[name]] += sites.capacity(name)
        weights = {
            name: sites.capacity(name) / totals[mapping[name]] for name in sites.names
        }
        agg_sites = SiteSet(tuple(agg_names), tuple(totals[a] for a in agg_names))
        return ZoneAggregation(dict(mapping), weights, agg_sites)

    def __post_init__(self) -> None:
        per_agg: dict[str, float] = {}
        for zone, agg in self.mapping.items():
            if zone not in self.weights:
                raise DataError(f"zone {zone!r} missing a weight")
            per_agg[agg] = per_agg.get(agg, 0.0) + self.weights[zone]
        for agg, total in per_agg.items():
            if abs(total - 1.0) > 1e-12:
                raise DataError(f"weights for aggregate {agg!r} sum to {total}, not 1")


def aggregate(series: SpaceTimeSeries, agg: ZoneAggregation) -> SpaceTimeSeries:
    """Capacity-weighted aggregation of normalized values.

    The aggregate's normalized output equals the weighted mean of its members'
    normalized values (weights are capacity shares), which is exactly the MW
    sum renormalized by the aggregate capacity. A missing member cell makes
    the whole aggregate cell missing.
    """
    for name in series.sites.names:
        if name not in agg.mapping:
            raise DataError(f"zone {name!r} not covered by the aggregation")
    out_sites = agg.aggregate_sites
    t = series.n_steps
    out = np.zeros((t, out_sites.m), dtype=float)
    missing = np.zeros((t, out_sites.m), dtype=bool)
    for j, name in enumerate(series.sites.names):
        k = out_sites.index(agg.mapping[name])
        col = series.values[:, j]
        bad = np.isnan(col)
        missing[:, k] |= bad
        out[:, k] += np.where(bad, 0.0, col) * agg.weights[name]
    out[missing] = np.nan
    # guard against float drift outside the unit interval
    np.clip(out, 0.0, 1.0, out=out)
    return SpaceTimeSeries(out_sites, series.timestamps, out)


def load_series(path, sites: SiteSet) -> SpaceTimeSeries:
    """Load a ``timestamp,<site1>,<site2>,...`` CSV of MW values.

    Values are divided by nominal capacity. Raw values below zero or more
    than ``capacity * (1 + 1e-9)`` are errors; values within that sliver
    above capacity clamp to 1.0 and are reported via logging. Gaps in the
    hourly grid become missing cells, as do empty fields.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if not header or header[0] != "timestamp":
            raise DataError(f"{path}: first column must be 'timestamp'")
        names = tuple(h.strip() for h in header[1:])
        if names != sites.names:
            raise DataError(
                f"{path}: columns {names} do not match configured sites {sites.names}"
            )
        stamps: list[np.datetime64] = []
        rows: list[list[float]] = []
        caps = np.asarray(sites.capacities_mw, dtype=float)
        clamped = 0
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields")
            ts = parse_utc(row[0])
            if stamps and ts <= stamps[-1]:
                raise DataError(f"{path}:{lineno}: timestamps not strictly increasing")
            vals: list[float] = []
            for j, cell in enumerate(row[1:]):
                text = cell.strip()
                if not text:
                    vals.append(np.nan)
                    continue
                try:
                    mw = float(text)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: bad number {cell!r}") from None
                cap = caps[j]
                if mw < 0:
                    raise DataError(f"{path}:{lineno}: negative power {mw} for {names[j]}")
                if mw > cap * (1.0 + CAPACITY_SLACK):
                    raise DataError(
                        f"{path}:{lineno}: value {mw} MW exceeds nominal capacity "
                        f"{cap} MW for {names[j]}"
                    )
                if mw > cap:
                    clamped += 1
                    vals.append(1.0)
                else:
                    vals.append(mw / cap)
            stamps.append(ts)
            rows.append(vals)
    if not stamps:
        raise DataError(f"{path}: no data rows")
    if clamped:
        logger.warning("%s: clamped %d cells marginally above capacity to 1.0", path, clamped)
    start, end = stamps[0], stamps[-1]
    n = int((end - start) / HOUR) + 1
    grid = start + np.arange(n) * HOUR
    values = np.full((n, sites.m), np.nan)
    for ts, vals in zip(stamps, rows):
        offset_s = (ts - start) / np.timedelta64(1, "s")
        slot = offset_s / 3600.0
        if slot != int(slot):
            raise DataError(f"{path}: timestamp {format_utc(ts)} off the hourly grid")
        values[int(slot)] = vals
    return SpaceTimeSeries(sites, grid, values)


def save_series(series: SpaceTimeSeries, path) -> None:
    """Write the normalized series back out, mirroring the input schema."""
    from .util import format_number

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", *series.sites.names])
        for i in range(series.n_steps):
            row = [format_utc(series.timestamps[i])]
            row.extend(format_number(v) for v in series.values[i])
            writer.writerow(row)
