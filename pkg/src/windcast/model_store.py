"""Versioned plain-text serialization of fitted forecast models.

The document is a flat ``key = value`` listing: scalars, comma-separated
vectors, and semicolon-separated matrix rows. One file carries every fitted
unit (the configured sites plus the aggregated portfolio).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .point import CovariateGrid, LogisticPowerFit
from .util import format_number

FORMAT_VERSION = 1

DRESS_LEVELS = np.arange(1, 100) / 100.0
POOLED_BIN = -1


@dataclass
class UnitModels:
    """Fitted per-lead models for one forecast unit (site or portfolio)."""

    unit: str
    # family "ar": lead -> coefficient vector (intercept + lag coefs)
    ar_coefs: dict[int, np.ndarray] = field(default_factory=dict)
    # family "cparx": lead -> (nodes, p) coefficient matrix over the covariate grid
    node_coefs: dict[int, np.ndarray] = field(default_factory=dict)
    nodes: np.ndarray | None = None
    conversions: dict[int, tuple[float, float, float]] = field(default_factory=dict)
    sigma: dict[int, float] = field(default_factory=dict)
    # lead -> (levels, features) quantile-regression coefficients
    qr_coefs: dict[int, np.ndarray] = field(default_factory=dict)
    variance: dict[int, float] = field(default_factory=dict)
    # (lead bucket, forecast-level bin) -> error quantiles at DRESS_LEVELS
    dress: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)

    def grid(self) -> CovariateGrid:
        if self.nodes is None:
            raise DataError(f"unit {self.unit} carries no covariate grid")
        return CovariateGrid(tuple(float(v) for v in self.nodes))

    def conversion_for(self, lead: int, bucket_hours: int = 6) -> LogisticPowerFit:
        params = self.conversions[(int(lead) - 1) // bucket_hours]
        return LogisticPowerFit(*params)


@dataclass
class FittedBundle:
    family: str
    lags: tuple[int, ...]
    horizon: int
    levels: tuple[float, ...]
    density: str
    train_hours: int
    gln_shape: float
    units: dict[str, UnitModels] = field(default_factory=dict)


def _vec(values) -> str:
    return ",".join(format_number(float(v)) for v in np.asarray(values, dtype=float).reshape(-1))


def _mat(matrix: np.ndarray) -> str:
    return ";".join(_vec(row) for row in np.asarray(matrix, dtype=float))


def _parse_vec(text: str) -> np.ndarray:
    return np.array([float(p) for p in text.split(",") if p.strip() != ""])


def _parse_mat(text: str) -> np.ndarray:
    return np.array([_parse_vec(row) for row in text.split(";")])


def dump_models(bundle: FittedBundle) -> str:
    lines = [
        f"version = {FORMAT_VERSION}",
        f"family = {bundle.family}",
        f"lags = {','.join(str(i) for i in bundle.lags)}",
        f"horizon = {bundle.horizon}",
        f"levels = {_vec(bundle.levels)}",
        f"density = {bundle.density}",
        f"train_hours = {bundle.train_hours}",
        f"gln_shape = {format_number(bundle.gln_shape)}",
        f"units = {','.join(bundle.units)}",
    ]
    for name, unit in bundle.units.items():
        prefix = f"unit.{name}"
        if unit.nodes is not None:
            lines.append(f"{prefix}.nodes = {_vec(unit.nodes)}")
        for bucket in sorted(unit.conversions):
            lines.append(
                f"{prefix}.bucket.{bucket}.conversion = {_vec(unit.conversions[bucket])}"
            )
        for lead in sorted(set(unit.ar_coefs) | set(unit.node_coefs)):
            if lead in unit.ar_coefs:
                lines.append(f"{prefix}.lead.{lead}.point = {_vec(unit.ar_coefs[lead])}")
            else:
                lines.append(f"{prefix}.lead.{lead}.point = {_mat(unit.node_coefs[lead])}")
            lines.append(
                f"{prefix}.lead.{lead}.sigma = {format_number(unit.sigma.get(lead, float('nan')))}"
            )
            if lead in unit.qr_coefs:
                lines.append(f"{prefix}.lead.{lead}.qr = {_mat(unit.qr_coefs[lead])}")
            if lead in unit.variance:
                lines.append(
                    f"{prefix}.lead.{lead}.variance = {format_number(unit.variance[lead])}"
                )
        for (bucket, level_bin) in sorted(unit.dress):
            lines.append(
                f"{prefix}.dress.{bucket}.{level_bin} = {_vec(unit.dress[(bucket, level_bin)])}"
            )
    return "\n".join(lines) + "\n"


def load_models(text: str) -> FittedBundle:
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"model document line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    try:
        version = int(pairs.pop("version"))
    except KeyError:
        raise DataError("model document missing version") from None
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported model document version {version}")
    try:
        bundle = FittedBundle(
            family=pairs.pop("family"),
            lags=tuple(int(i) for i in pairs.pop("lags").split(",")),
            horizon=int(pairs.pop("horizon")),
            levels=tuple(float(v) for v in _parse_vec(pairs.pop("levels"))),
            density=pairs.pop("density"),
            train_hours=int(pairs.pop("train_hours")),
            gln_shape=float(pairs.pop("gln_shape")),
        )
        unit_names = [u for u in pairs.pop("units").split(",") if u]
    except KeyError as exc:
        raise DataError(f"model document missing header key {exc}") from None
    for name in unit_names:
        bundle.units[name] = UnitModels(name)
    for key, value in pairs.items():
        parts = key.split(".")
        if parts[0] != "unit" or len(parts) < 3:
            raise DataError(f"unrecognized model key {key!r}")
        unit = bundle.units.get(parts[1])
        if unit is None:
            raise DataError(f"model key {key!r} references unlisted unit")
        tail = parts[2:]
        if tail == ["nodes"]:
            unit.nodes = _parse_vec(value)
        elif len(tail) == 3 and tail[0] == "bucket" and tail[2] == "conversion":
            c, v0, w = _parse_vec(value)
            unit.conversions[int(tail[1])] = (float(c), float(v0), float(w))
        elif len(tail) == 3 and tail[0] == "lead":
            lead = int(tail[1])
            if tail[2] == "point":
                if ";" in value:
                    unit.node_coefs[lead] = _parse_mat(value)
                else:
                    unit.ar_coefs[lead] = _parse_vec(value)
            elif tail[2] == "sigma":
                unit.sigma[lead] = float(value)
            elif tail[2] == "qr":
                unit.qr_coefs[lead] = _parse_mat(value)
            elif tail[2] == "variance":
                unit.variance[lead] = float(value)
            else:
                raise DataError(f"unrecognized model key {key!r}")
        elif len(tail) == 3 and tail[0] == "dress":
            unit.dress[(int(tail[1]), int(tail[2]))] = _parse_vec(value)
        else:
            raise DataError(f"unrecognized model key {key!r}")
    return bundle
