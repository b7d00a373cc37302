"""Scenario configuration: an INI file whose keys carry their units."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .bonds import MarketParams
from .grid_noise import FieldKind, GridSpec, Warp
from .measure import Probe
from .mpr import EtaSpec

DEFAULT_PROBES = "1:0.25/1:1; 1:1/1:1; 0.5:0.5/1:1; 0.25:0.75/0.75:0.25; 1:0.5/0.5:0.5; 0.75:0.125/0.25:1"

# section -> key -> default (None = required)
SCHEMA = {
    "grid": {"horizon_years": None, "n_time": None, "n_maturity": None, "u_min_years": ""},
    "field": {"kind": "normalized", "warp": "sqrt", "warp_power": "2",
              "warp_table_maturities_years": "", "warp_table_values": ""},
    "eta": {"kind": "zero", "value_per_year": "0", "maturity_power": "1",
            "time_decay_per_year": "0", "table": ""},
    "market": {"sigma_kind": "constant", "sigma_per_sqrt_year": "0.2", "sigma_maturity_power": "0",
               "short_rate_per_year": "0.03", "short_rate_slope_per_year2": "0",
               "initial_curve": "default", "initial_rate_per_year": "0.03"},
    "simulation": {"n_paths": None, "seed": "1", "block_paths": "2000", "density_kernel": "cell",
                   "checkpoints_years": "", "maturities_years": "", "probes": DEFAULT_PROBES},
    "verify": {"z_bound": "3", "martingale_allowance": "0.005",
               "negative_control_threshold": "0.05", "min_effective_fraction": "0.01"},
}


class ConfigError(ValueError):
    """Invalid configuration; names the offending key and the violated constraint."""

    def __init__(self, key: str, constraint: str):
        super().__init__(f"{key}: {constraint}")
        self.key = key
        self.constraint = constraint


@dataclass
class Scenario:
    grid: GridSpec
    kind: FieldKind
    eta: EtaSpec
    market: MarketParams
    n_paths: int
    seed: int
    block_paths: int
    checkpoints: list[float]
    maturities: list[float]
    probes: list[Probe]
    z_bound: float = 3.0
    martingale_allowance: float = 0.005
    negative_control_threshold: float = 0.05
    min_effective_fraction: float = 0.01
    density_kernel: str = "cell"
    config: dict = field(default_factory=dict)

    def config_hash(self) -> str:
        blob = json.dumps(self.config, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def read_config(path) -> dict:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    with open(path) as fh:
        parser.read_file(fh)
    return {s: dict(parser[s]) for s in parser.sections()}


def normalize_config(raw: dict) -> dict:
    """Fill defaults and reject unknown sections/keys."""
    out = {}
    for section in raw:
        if section not in SCHEMA:
            raise ConfigError(section, f"unknown section (expected one of {sorted(SCHEMA)})")
    for section, keys in SCHEMA.items():
        given = {k: str(v).strip() for k, v in raw.get(section, {}).items()}
        for k in given:
            if k not in keys:
                raise ConfigError(f"{section}.{k}", "unknown key")
        resolved = {}
        for k, default in keys.items():
            if k in given:
                resolved[k] = given[k]
            elif default is None:
                raise ConfigError(f"{section}.{k}", "required key is missing")
            else:
                resolved[k] = default
        out[section] = resolved
    return out


def _num(cfg, section, key, cast=float, check=None, constraint=""):
    text = cfg[section][key]
    try:
        value = cast(text)
    except ValueError:
        raise ConfigError(f"{section}.{key}", f"expected {cast.__name__}, got {text!r}") from None
    if cast is float and not np.isfinite(value):
        raise ConfigError(f"{section}.{key}", "must be finite")
    if check is not None and not check(value):
        raise ConfigError(f"{section}.{key}", constraint)
    return value


def _floats(cfg, section, key) -> list[float]:
    text = cfg[section][key]
    if not text:
        return []
    try:
        return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"{section}.{key}", f"expected comma-separated numbers, got {text!r}") from None


def _choice(cfg, section, key, options):
    value = cfg[section][key].lower()
    if value not in options:
        raise ConfigError(f"{section}.{key}", f"must be one of {', '.join(options)}")
    return value


def parse_probes(text: str) -> list[Probe]:
    probes = []
    for item in filter(None, (s.strip() for s in text.split(";"))):
        try:
            a, b = item.split("/")
            t1, T1 = (float(x) for x in a.split(":"))
            t2, T2 = (float(x) for x in b.split(":"))
        except ValueError:
            raise ConfigError("simulation.probes", f"bad probe {item!r}, expected t1:T1/t2:T2") from None
        probes.append(Probe(t1, T1, t2, T2))
    return probes


def build_scenario(raw: dict, seed: int | None = None, n_paths: int | None = None) -> Scenario:
    cfg = normalize_config(raw)
    if seed is not None:
        cfg["simulation"]["seed"] = str(seed)
    if n_paths is not None:
        cfg["simulation"]["n_paths"] = str(n_paths)

    T0 = _num(cfg, "grid", "horizon_years", check=lambda v: v > 0, constraint="must be > 0")
    n_time = _num(cfg, "grid", "n_time", int, lambda v: v >= 1, "must be >= 1")
    n_mat = _num(cfg, "grid", "n_maturity", int, lambda v: v >= 1, "must be >= 1")
    u_min = None
    if cfg["grid"]["u_min_years"]:
        u_min = _num(cfg, "grid", "u_min_years", check=lambda v: 0 < v <= T0,
                     constraint="must lie in (0, horizon_years]")
    grid = GridSpec(T0, n_time, n_mat, u_min)

    kind = _field_kind(cfg, grid)
    eta = _eta(cfg, grid)
    market = _market(cfg)
    try:
        market.initial_prices(grid)
        market.sigma_grid(grid)
    except ValueError as exc:
        raise ConfigError("market", str(exc)) from None

    n = _num(cfg, "simulation", "n_paths", int, lambda v: v >= 1, "must be >= 1")
    sd = _num(cfg, "simulation", "seed", int, lambda v: v >= 0, "must be a non-negative integer")
    block = _num(cfg, "simulation", "block_paths", int, lambda v: v >= 1, "must be >= 1")
    checkpoints = _floats(cfg, "simulation", "checkpoints_years") or [T0 * q for q in (0.25, 0.5, 0.75, 1.0)]
    maturities = _floats(cfg, "simulation", "maturities_years") or [grid.maturity_nodes[-1]]
    probes = parse_probes(cfg["simulation"]["probes"])
    for key, values, index in (("checkpoints_years", checkpoints, grid.time_index),
                               ("maturities_years", maturities, grid.maturity_index)):
        for v in values:
            try:
                index(v)
            except ValueError as exc:
                raise ConfigError(f"simulation.{key}", str(exc)) from None
    for p in probes:
        try:
            p.indices(grid)
        except ValueError as exc:
            raise ConfigError("simulation.probes", f"{p.label()}: {exc}") from None

    return Scenario(
        grid=grid, kind=kind, eta=eta, market=market, n_paths=n, seed=sd, block_paths=block,
        checkpoints=checkpoints, maturities=maturities, probes=probes,
        z_bound=_num(cfg, "verify", "z_bound", check=lambda v: v > 0, constraint="must be > 0"),
        martingale_allowance=_num(cfg, "verify", "martingale_allowance", check=lambda v: v >= 0,
                                  constraint="must be >= 0"),
        negative_control_threshold=_num(cfg, "verify", "negative_control_threshold",
                                        check=lambda v: v > 0, constraint="must be > 0"),
        min_effective_fraction=_num(cfg, "verify", "min_effective_fraction",
                                    check=lambda v: 0 <= v <= 1, constraint="must lie in [0, 1]"),
        density_kernel=_choice(cfg, "simulation", "density_kernel", ("cell", "node")),
        config=cfg,
    )


def load_scenario(path, seed: int | None = None, n_paths: int | None = None) -> Scenario:
    try:
        raw = read_config(path)
    except (OSError, configparser.Error) as exc:
        raise ConfigError("config", str(exc)) from None
    return build_scenario(raw, seed, n_paths)


def _field_kind(cfg, grid) -> FieldKind:
    kind = _choice(cfg, "field", "kind", ("normalized", "scaled"))
    if kind == "normalized":
        return FieldKind.normalized()
    name = _choice(cfg, "field", "warp", ("sqrt", "linear", "power", "table"))
    if name == "sqrt":
        warp = Warp.sqrt()
    elif name == "linear":
        warp = Warp.linear()
    elif name == "power":
        warp = Warp.power(_num(cfg, "field", "warp_power", check=lambda v: v > 0, constraint="must be > 0"))
    else:
        try:
            warp = Warp.table(_floats(cfg, "field", "warp_table_maturities_years"),
                              _floats(cfg, "field", "warp_table_values"))
        except ValueError as exc:
            raise ConfigError("field.warp_table_values", str(exc)) from None
    out = FieldKind.scaled(warp)
    try:
        out.validate(grid)
    except ValueError as exc:
        raise ConfigError("field.warp", str(exc)) from None
    return out


def _eta(cfg, grid) -> EtaSpec:
    kind = _choice(cfg, "eta", "kind", ("zero", "constant", "maturity_power", "separable", "piecewise"))
    c = _num(cfg, "eta", "value_per_year")
    p = _num(cfg, "eta", "maturity_power", check=lambda v: v >= 0, constraint="must be >= 0")
    decay = _num(cfg, "eta", "time_decay_per_year")
    if kind == "zero":
        return EtaSpec.zero()
    if kind == "constant":
        return EtaSpec.constant(c)
    if kind == "maturity_power":
        return EtaSpec.separable(np.ones_like, lambda u: c * np.power(u, p))
    if kind == "separable":
        return EtaSpec.separable(lambda t: np.exp(-decay * t), lambda u: c * np.power(u, p))
    rows = [r for r in cfg["eta"]["table"].split(";") if r.strip()]
    try:
        table = [[float(x) for x in r.split(",")] for r in rows]
        return EtaSpec.piecewise_constant(table)
    except ValueError:
        raise ConfigError("eta.table", "expected rows 'a,b,...; c,d,...' of equal length") from None


def _market(cfg) -> MarketParams:
    s_kind = _choice(cfg, "market", "sigma_kind", ("constant", "maturity_power"))
    s0 = _num(cfg, "market", "sigma_per_sqrt_year", check=lambda v: v >= 0, constraint="must be >= 0")
    sp = _num(cfg, "market", "sigma_maturity_power")
    r0 = _num(cfg, "market", "short_rate_per_year", check=lambda v: v >= 0, constraint="must be >= 0")
    slope = _num(cfg, "market", "short_rate_slope_per_year2")
    curve = _choice(cfg, "market", "initial_curve", ("default", "flat"))
    y = _num(cfg, "market", "initial_rate_per_year", check=lambda v: v >= 0, constraint="must be >= 0")

    if s_kind == "constant":
        sigma = lambda t, T: np.full(np.broadcast_shapes(np.shape(t), np.shape(T)), s0)  # noqa: E731
    else:
        sigma = lambda t, T: s0 * np.power(T, sp) + 0.0 * t  # noqa: E731
    rate = lambda t: np.maximum(r0 + slope * np.asarray(t, dtype=float), 0.0)  # noqa: E731
    initial = None if curve == "default" else (lambda T: np.exp(-y * np.asarray(T, dtype=float)))
    return MarketParams(sigma=sigma, short_rate=rate, initial_curve=initial)
