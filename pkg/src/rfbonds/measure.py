"""Discrete Radon-Nikodym density of the sheet shift, and the shifted field it makes driftless."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .grid_noise import FieldKind, FieldPath, GridSpec, SheetPath
from .mpr import KernelGrid, MprSurface
from .verify import Estimate, WeightedAccumulator, battery_summary


@dataclass(frozen=True)
class PathWeight:
    """``log_density_at[p, i]`` is the log density process at ``t_i`` on path ``p``."""

    log_density_at: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.log_density_at[:, -1]

    def at(self, i: int) -> np.ndarray:
        return self.log_density_at[:, i]


@dataclass(frozen=True)
class ShiftedField:
    values: np.ndarray


@dataclass(frozen=True)
class Probe:
    """Node pair ``(t1, T1) x (t2, T2)``."""

    t1: float
    T1: float
    t2: float
    T2: float

    def indices(self, grid: GridSpec) -> tuple[int, int, int, int]:
        return (grid.time_index(self.t1), grid.maturity_index(self.T1),
                grid.time_index(self.t2), grid.maturity_index(self.T2))

    def label(self) -> str:
        return f"({self.t1:g},{self.T1:g})x({self.t2:g},{self.T2:g})"


def _cell_areas(kind: FieldKind, grid: GridSpec) -> np.ndarray:
    strip_width, widths = kind.cell_widths(grid)
    return grid.dt * np.concatenate([[strip_width], widths])


def log_rn_density(kernel: KernelGrid, sheet: SheetPath, grid: GridSpec, rule: str = "cell") -> PathWeight:
    """Itô sum ``-sum c dW - 1/2 sum c^2 dA`` over rows ``k < i``, kernel taken at the left time node.

    ``rule`` selects how the kernel is integrated over a maturity cell, see
    ``KernelGrid.cell_drift``.
    """
    if kernel.kind.name != sheet.kind.name:
        raise ValueError(f"kernel built for {kernel.kind.name}, sheet sampled for {sheet.kind.name}")
    coef = kernel.density_coefficients(grid, rule)
    if not np.all(np.isfinite(coef)):
        bad = np.argwhere(~np.isfinite(coef))[0]
        raise ValueError(f"non-finite kernel at index {tuple(int(b) for b in bad)}")
    areas = _cell_areas(kernel.kind, grid)
    noise = sheet.noise()
    row = -np.sum(coef * noise, axis=-1) - 0.5 * (coef**2 @ areas)
    row = np.broadcast_to(row, (sheet.n_paths, grid.n_time))
    L = np.zeros((sheet.n_paths, grid.n_time + 1))
    np.cumsum(row, axis=1, out=L[:, 1:])
    return PathWeight(L)


def density_log_variance(kernel: KernelGrid, grid: GridSpec, rule: str = "cell"):
    """``sum c^2 dA``: the variance of the log density for a deterministic kernel."""
    coef = kernel.density_coefficients(grid, rule)
    return np.sum(coef**2 @ _cell_areas(kernel.kind, grid), axis=-1)


def shift_field(field: FieldPath, lam: MprSurface, grid: GridSpec) -> ShiftedField:
    """``Z~(t_i, u) = Z(t_i, u) + sum_{k<i} lambda(t_k, u) dt``."""
    lam_v = lam.values
    drift = np.zeros_like(lam_v)
    np.cumsum(lam_v[..., :-1, :] * grid.dt, axis=-2, out=drift[..., 1:, :])
    return ShiftedField(field.values + drift)


def probe_products(values: np.ndarray, probes, grid: GridSpec) -> np.ndarray:
    """``Z(t1, T1) * Z(t2, T2)`` per path and probe."""
    cols = []
    for p in probes:
        i1, j1, i2, j2 = p.indices(grid)
        cols.append(values[:, i1, j1] * values[:, i2, j2])
    return np.stack(cols, axis=1)


def probe_weight_index(probe: Probe, grid: GridSpec) -> int:
    # the density process at the later of the two probe times suffices
    return max(grid.time_index(probe.t1), grid.time_index(probe.t2))


def accumulate_probes(acc: dict, shifted: ShiftedField, weights: PathWeight | None, probes, grid: GridSpec) -> dict:
    """Feed probe products into one accumulator per probe."""
    prods = probe_products(shifted.values, probes, grid)
    for col, p in enumerate(probes):
        i = probe_weight_index(p, grid)
        a = acc.setdefault(col, WeightedAccumulator(1))
        a.add(prods[:, col], None if weights is None else weights.at(i))
    return acc


@dataclass
class SheetTestReport:
    rows: list[dict]
    summary: dict
    underpowered: bool

    @property
    def passed(self) -> bool:
        return not self.underpowered and self.summary["n_exceeding"] == 0


def summarize_probes(acc: dict, probes, kind: FieldKind, z_bound: float = 3.0,
                     min_effective_fraction: float = 0.01) -> SheetTestReport:
    rows = []
    underpowered = False
    for col, p in enumerate(probes):
        est: Estimate = acc[col].weighted()[0]
        expected = kind.field_covariance(p.t1, p.T1, p.t2, p.T2)
        z = est.z_score(expected)
        low = est.effective_n < min_effective_fraction * est.n
        underpowered |= low
        rows.append({
            "probe": p.label(), "estimate": est.mean, "std_error": est.std_error,
            "expected": expected, "z_score": z, "effective_n": est.effective_n,
            "n": est.n, "underpowered": low,
        })
    summary = battery_summary([r["z_score"] for r in rows], z_bound)
    return SheetTestReport(rows, summary, underpowered)


def weighted_sheet_test(shifted: ShiftedField, weights: PathWeight | None, probes, grid: GridSpec,
                        kind: FieldKind | None = None, z_bound: float = 3.0,
                        min_effective_fraction: float = 0.01) -> SheetTestReport:
    """Importance-sampled covariances of the shifted field against the sheet-law covariance."""
    kind = kind or FieldKind.normalized()
    acc = accumulate_probes({}, shifted, weights, probes, grid)
    return summarize_probes(acc, probes, kind, z_bound, min_effective_fraction)


ENSEMBLE_CSV_HEADER = ["label", "estimate", "std_error", "expected", "z_score", "effective_n", "n"]


def write_ensemble_csv(rows, path) -> None:
    """One row per probe or time node."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ENSEMBLE_CSV_HEADER, extrasaction="ignore")
        writer.writeheader()
        for r in rows:
            out = dict(r)
            out.setdefault("label", r.get("probe", ""))
            writer.writerow({k: _cell(v) for k, v in out.items() if k in ENSEMBLE_CSV_HEADER})


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v
