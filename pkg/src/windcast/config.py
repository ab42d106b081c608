"""Run configuration: a plain-text INI document with strict validation.

Unknown sections or keys are rejected, every numeric hyperparameter is
range-checked, and parse -> serialize -> parse is the identity.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields

from .errors import ConfigError

_SENTINEL_NONE = ""


@dataclass(frozen=True)
class SitesSection:
    names: tuple[str, ...] = ("z1", "z2", "z3", "z4", "z5")
    capacities_mw: tuple[float, ...] = (775.0, 450.0, 425.0, 575.0, 275.0)


@dataclass(frozen=True)
class SimulateSection:
    hours: int = 16000
    seed: int = 42
    mean_speed: tuple[float, ...] = (9.0,)
    speed_sd: tuple[float, ...] = (0.6,)
    ar_coefficient: tuple[float, ...] = (0.95,)
    diurnal_amplitude: tuple[float, ...] = (0.8,)
    diurnal_phase_h: float = 15.0
    spatial_rho: float = 0.5
    cut_in: float = 4.0
    rated: float = 16.0
    cut_off: float = 25.0
    ramp_shape: float = 3.0
    regime_threshold: float | None = None
    regime_low_factor: float = 1.0
    regime_high_factor: float = 2.0
    nwp_noise_sd: float = 0.0
    start: str = "2026-01-01T00:00:00Z"


@dataclass(frozen=True)
class ModelSection:
    family: str = "cparx"            # ar | cparx
    lags: tuple[int, ...] = (1, 2)
    quantile_levels: tuple[float, ...] = (0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95)
    qr_forgetting: float = 1.0       # exponential forgetting for quantile fits
    rls_forgetting: float = 1.0      # forgetting for recursive point fits
    cp_nodes: int = 8
    train_hours: int = 12000


@dataclass(frozen=True)
class ForecastSection:
    horizon: int = 43
    origin_step_h: int = 24
    density: str = "quantiles"       # quantiles | dressed | parametric families
    variance_smoothing: float = 0.98
    gln_shape: float = 1.0


@dataclass(frozen=True)
class TrajectoriesSection:
    num_paths: int = 12
    covariance_smoothing: float = 0.98
    seed: int = 1


@dataclass(frozen=True)
class MarketSection:
    gate_closure_offset_h: int = 12
    lead_start: int = 13
    lead_end: int = 37
    price_file: str = ""             # blank: use the synthetic prices from simulate


@dataclass(frozen=True)
class ReserveSection:
    load_error_sd: float = 0.02
    outage_probability: float = 0.02
    outage_size: float = 0.08
    grid_step: float = 0.001
    up_hold: float = 5.0
    up_short: float = 25.0
    down_hold: float = 5.0
    down_short: float = 25.0


@dataclass(frozen=True)
class RunSection:
    out_dir: str = "out"
    seed: int = 1


@dataclass(frozen=True)
class RunConfig:
    sites: SitesSection = field(default_factory=SitesSection)
    simulate: SimulateSection = field(default_factory=SimulateSection)
    model: ModelSection = field(default_factory=ModelSection)
    forecast: ForecastSection = field(default_factory=ForecastSection)
    trajectories: TrajectoriesSection = field(default_factory=TrajectoriesSection)
    market: MarketSection = field(default_factory=MarketSection)
    reserve: ReserveSection = field(default_factory=ReserveSection)
    run: RunSection = field(default_factory=RunSection)


_SECTIONS: dict[str, type] = {
    "sites": SitesSection,
    "simulate": SimulateSection,
    "model": ModelSection,
    "forecast": ForecastSection,
    "trajectories": TrajectoriesSection,
    "market": MarketSection,
    "reserve": ReserveSection,
    "run": RunSection,
}

_DENSITY_CHOICES = (
    "quantiles",
    "dressed",
    "beta",
    "censored-gaussian",
    "truncated-gaussian",
    "generalized-logit-normal",
)


def _parse_typed(section: str, key: str, text: str, kind: str):
    text = text.strip()
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "str":
            return text
        if kind == "float | None":
            return None if text == _SENTINEL_NONE else float(text)
        if kind == "tuple[float, ...]":
            return tuple(float(p) for p in text.split(",") if p.strip() != "")
        if kind == "tuple[int, ...]":
            return tuple(int(p) for p in text.split(",") if p.strip() != "")
        if kind == "tuple[str, ...]":
            return tuple(p.strip() for p in text.split(",") if p.strip() != "")
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {text!r} as {kind}") from exc
    raise ConfigError(f"[{section}] {key}: unsupported type {kind}")


def _serialize_typed(value) -> str:
    if value is None:
        return _SENTINEL_NONE
    if isinstance(value, tuple):
        return ",".join(_serialize_typed(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
    built = {}
    for name, cls in _SECTIONS.items():
        kwargs = {}
        known = {f.name: f.type for f in fields(cls)}
        if parser.has_section(name):
            for key, raw in parser.items(name):
                if key not in known:
                    raise ConfigError(f"unknown key {key!r} in section [{name}]")
                kwargs[key] = _parse_typed(name, key, raw, known[key])
        built[name] = cls(**kwargs)
    cfg = RunConfig(**built)
    validate_config(cfg)
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def serialize_config(cfg: RunConfig) -> str:
    out = io.StringIO()
    for name, cls in _SECTIONS.items():
        section = getattr(cfg, name)
        out.write(f"[{name}]\n")
        for f in fields(cls):
            out.write(f"{f.name} = {_serialize_typed(getattr(section, f.name))}\n")
        out.write("\n")
    return out.getvalue()


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def validate_config(cfg: RunConfig) -> None:
    s = cfg.sites
    _require(len(s.names) >= 1, "[sites] needs at least one site")
    _require(len(set(s.names)) == len(s.names), "[sites] names must be unique")
    _require(len(s.capacities_mw) == len(s.names), "[sites] one capacity per site")
    _require(all(c > 0 for c in s.capacities_mw), "[sites] capacities must be positive")
    _require("portfolio" not in s.names, "[sites] the name 'portfolio' is reserved")

    sim = cfg.simulate
    _require(sim.hours >= 1, "[simulate] hours must be >= 1")
    m = len(s.names)
    for key in ("mean_speed", "speed_sd", "ar_coefficient", "diurnal_amplitude"):
        vals = getattr(sim, key)
        _require(len(vals) in (1, m), f"[simulate] {key} needs 1 or {m} values")
    _require(all(0 < p < 1 for p in sim.ar_coefficient),
             "[simulate] ar_coefficient must lie in (0, 1)")
    _require(all(v >= 0 for v in sim.speed_sd), "[simulate] speed_sd must be >= 0")
    _require(all(v >= 0 for v in sim.diurnal_amplitude),
             "[simulate] diurnal_amplitude must be >= 0")
    _require(0 < sim.cut_in < sim.rated < sim.cut_off,
             "[simulate] need 0 < cut_in < rated < cut_off")
    _require(sim.ramp_shape > 0, "[simulate] ramp_shape must be positive")
    _require(m == 1 or -1.0 / (m - 1) < sim.spatial_rho <= 1.0,
             f"[simulate] spatial_rho outside the PSD range for {m} sites")
    _require(sim.regime_low_factor > 0 and sim.regime_high_factor > 0,
             "[simulate] regime factors must be positive")
    _require(sim.nwp_noise_sd >= 0, "[simulate] nwp_noise_sd must be >= 0")

    mo = cfg.model
    _require(mo.family in ("ar", "cparx"), "[model] family must be 'ar' or 'cparx'")
    _require(len(mo.lags) >= 1 and all(i >= 1 for i in mo.lags)
             and len(set(mo.lags)) == len(mo.lags),
             "[model] lags must be distinct positive integers")
    _require(len(mo.quantile_levels) >= 1
             and all(0 < a < 1 for a in mo.quantile_levels)
             and all(b > a for a, b in zip(mo.quantile_levels, mo.quantile_levels[1:])),
             "[model] quantile_levels must be strictly increasing inside (0, 1)")
    _require(0.0 < mo.qr_forgetting <= 1.0, "[model] qr_forgetting must be in (0, 1]")
    _require(0.9 < mo.rls_forgetting <= 1.0, "[model] rls_forgetting must be in (0.9, 1]")
    _require(mo.cp_nodes >= 2, "[model] cp_nodes must be >= 2")
    _require(0 < mo.train_hours < sim.hours, "[model] train_hours must be inside the simulated span")

    fc = cfg.forecast
    _require(fc.horizon >= 1, "[forecast] horizon must be >= 1")
    _require(fc.origin_step_h >= 1, "[forecast] origin_step_h must be >= 1")
    _require(fc.density in _DENSITY_CHOICES,
             f"[forecast] density must be one of {_DENSITY_CHOICES}")
    _require(0.0 < fc.variance_smoothing <= 1.0,
             "[forecast] variance_smoothing must be in (0, 1]")
    _require(fc.gln_shape > 0, "[forecast] gln_shape must be positive")
    _require(cfg.model.train_hours + fc.horizon < sim.hours,
             "[forecast] no held-out window after train_hours + horizon")

    tr = cfg.trajectories
    _require(tr.num_paths >= 1, "[trajectories] num_paths must be >= 1")
    _require(0.0 < tr.covariance_smoothing <= 1.0,
             "[trajectories] covariance_smoothing must be in (0, 1]")

    mk = cfg.market
    _require(mk.gate_closure_offset_h > 0, "[market] gate_closure_offset_h must be positive")
    _require(mk.lead_start >= 1 and mk.lead_end >= mk.lead_start,
             "[market] delivery leads must be a nonempty range")
    _require(mk.lead_end <= fc.horizon,
             "[market] lead_end cannot exceed the forecast horizon")

    rs = cfg.reserve
    _require(rs.load_error_sd > 0, "[reserve] load_error_sd must be positive")
    _require(0.0 <= rs.outage_probability <= 1.0,
             "[reserve] outage_probability must lie in [0, 1]")
    _require(rs.outage_size > 0, "[reserve] outage_size must be positive")
    _require(0 < rs.grid_step <= 0.1, "[reserve] grid_step must be in (0, 0.1]")
    for side in ("up", "down"):
        hold = getattr(rs, f"{side}_hold")
        short = getattr(rs, f"{side}_short")
        _require(short > hold >= 0.0,
                 f"[reserve] need {side}_short > {side}_hold >= 0 (convex costs)")
