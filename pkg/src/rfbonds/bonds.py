"""Discount-bond dynamics driven by a random field, and the discounted-price martingale check."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grid_noise import FieldPath, GridSpec
from .measure import PathWeight
from .mpr import MprSurface
from .verify import WeightedAccumulator


@dataclass(frozen=True)
class MarketParams:
    """Volatility ``sigma(t, T)``, deterministic short rate ``r(t)`` and initial curve ``P(0, T)``.

    Callables are evaluated on broadcast node arrays.  Without an initial
    curve the flat curve ``exp(-r(0) T)`` is used.
    """

    sigma: Callable
    short_rate: Callable
    initial_curve: Callable | None = None

    @classmethod
    def constant(cls, sigma: float, rate: float, initial_curve: Callable | None = None) -> MarketParams:
        return cls(
            sigma=lambda t, T: np.full(np.broadcast_shapes(np.shape(t), np.shape(T)), float(sigma)),
            short_rate=lambda t: np.full(np.shape(t), float(rate)),
            initial_curve=initial_curve,
        )

    def sigma_grid(self, grid: GridSpec) -> np.ndarray:
        s = np.asarray(self.sigma(grid.time_nodes[:, None], grid.maturity_nodes[None, :]), dtype=float)
        s = np.broadcast_to(s, (grid.n_time + 1, grid.n_maturity + 1))
        if not np.all(np.isfinite(s)):
            raise ValueError("sigma is not finite on the grid")
        return s

    def rate_grid(self, grid: GridSpec) -> np.ndarray:
        r = np.broadcast_to(np.asarray(self.short_rate(grid.time_nodes), dtype=float), (grid.n_time + 1,))
        if not np.all(np.isfinite(r)):
            raise ValueError("short rate is not finite on the grid")
        return r

    def initial_prices(self, grid: GridSpec) -> np.ndarray:
        T = grid.maturity_nodes
        if self.initial_curve is None:
            p0 = np.exp(-self.rate_grid(grid)[0] * T)
        else:
            p0 = np.broadcast_to(np.asarray(self.initial_curve(T), dtype=float), T.shape)
        if np.any(~(p0 > 0)) or np.any(p0 > 1):
            raise ValueError("initial curve must lie in (0, 1] at every maturity node")
        return p0


@dataclass(frozen=True)
class BondSurface:
    """``log_prices[p, i, j] = log P(t_i, u_j)``; ``log_discount[i] = -sum_{k<i} r(t_k) dt``."""

    log_prices: np.ndarray
    log_discount: np.ndarray
    initial: np.ndarray

    @property
    def prices(self) -> np.ndarray:
        return np.exp(self.log_prices)


def simulate_bonds(params: MarketParams, lam: MprSurface, field: FieldPath, grid: GridSpec) -> BondSurface:
    """Log-Euler integration in ``t`` of every maturity column."""
    z = field.values
    dz = np.diff(z, axis=-2)
    if not np.all(np.isfinite(dz)):
        p, i, j = np.argwhere(~np.isfinite(dz))[0]
        raise ValueError(f"non-finite field increment on path {p} at time row {i}, maturity {j}")
    sigma = params.sigma_grid(grid)[:-1]
    r = params.rate_grid(grid)
    p0 = params.initial_prices(grid)
    drift = (r[:-1, None] + lam.values[..., :-1, :] * sigma - 0.5 * sigma**2) * grid.dt
    steps = drift + sigma * dz
    logp = np.empty(z.shape)
    logp[:, 0, :] = np.log(p0)
    np.cumsum(steps, axis=-2, out=logp[:, 1:, :])
    logp[:, 1:, :] += logp[:, :1, :]
    log_discount = np.zeros(grid.n_time + 1)
    np.cumsum(-r[:-1] * grid.dt, out=log_discount[1:])
    return BondSurface(log_prices=logp, log_discount=log_discount, initial=p0)


def discounted_surface(bonds: BondSurface) -> np.ndarray:
    """``D(t_i, u_j) = exp(-sum_{k<i} r(t_k) dt) P(t_i, u_j)``."""
    return np.exp(bonds.log_prices + bonds.log_discount[:, None])


def expected_drift_factor(params: MarketParams, lam: MprSurface, grid: GridSpec) -> np.ndarray:
    """``exp(sum_{k<i} lambda sigma dt)``: growth of the discounted price under the physical measure."""
    s = params.sigma_grid(grid)
    out = np.zeros(lam.values.shape)
    np.cumsum(lam.values[..., :-1, :] * s[:-1] * grid.dt, axis=-2, out=out[..., 1:, :])
    return np.exp(out)


def accumulate_discounted(acc: dict, bonds: BondSurface, weights: PathWeight | None, checkpoints, maturities,
                          grid: GridSpec) -> dict:
    """One accumulator per checkpoint; ``D(t, T)`` for every maturity weighted by the density at ``t``."""
    cols = [grid.maturity_index(T) for T in maturities]
    for t in checkpoints:
        i = grid.time_index(t)
        d = np.exp(bonds.log_prices[:, i, cols] + bonds.log_discount[i])
        a = acc.setdefault(i, WeightedAccumulator(len(cols)))
        a.add(d, None if weights is None else weights.at(i))
    return acc


@dataclass
class MartingaleReport:
    rows: list[dict]
    passed: bool
    underpowered: bool


def summarize_martingale(acc: dict, initial: np.ndarray, checkpoints, maturities, grid: GridSpec,
                         expected_ratio=None, z_bound: float = 3.0, tolerance: float = 0.0,
                         min_effective_fraction: float = 0.01) -> MartingaleReport:
    """Ratio of the estimated discounted price to ``P(0, T)`` at every (checkpoint, maturity).

    A row passes when ``|ratio - expected| <= z_bound * SE + tolerance``;
    ``expected`` defaults to 1 (the martingale target).
    """
    rows = []
    underpowered = False
    for t in checkpoints:
        i = grid.time_index(t)
        ests = acc[i].weighted()
        for est, T in zip(ests, maturities):
            j = grid.maturity_index(T)
            target = 1.0 if expected_ratio is None else float(expected_ratio[i, j])
            ratio = est.mean / initial[j]
            se = est.std_error / initial[j]
            z = (ratio - target) / se if se > 0 else (0.0 if ratio == target else np.inf)
            low = est.effective_n < min_effective_fraction * est.n
            underpowered |= low
            rows.append({
                "t_years": t, "maturity_years": T, "estimate": est.mean, "std_error": est.std_error,
                "ratio": ratio, "expected_ratio": target, "z_score": float(z),
                "effective_n": est.effective_n, "n": est.n,
                "passed": bool(abs(ratio - target) <= z_bound * se + tolerance),
            })
    return MartingaleReport(rows, all(r["passed"] for r in rows) and not underpowered, underpowered)


def risk_neutral_check(bonds: BondSurface, weights: PathWeight | None, checkpoints, maturities, grid: GridSpec,
                       z_bound: float = 3.0, tolerance: float = 0.0,
                       min_effective_fraction: float = 0.01) -> MartingaleReport:
    """Reweighted mean of ``D(t, T)`` against ``P(0, T)``; ``weights=None`` gives the unweighted control."""
    acc = accumulate_discounted({}, bonds, weights, checkpoints, maturities, grid)
    return summarize_martingale(acc, bonds.initial, checkpoints, maturities, grid,
                                z_bound=z_bound, tolerance=tolerance,
                                min_effective_fraction=min_effective_fraction)


BOND_CSV_HEADER = ["measure", "t_years", "maturity_years", "estimate", "std_error", "ratio",
                   "expected_ratio", "z_score", "effective_n", "n"]


def write_bond_csv(sections: dict, path) -> None:
    """``sections`` maps a measure label to martingale rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BOND_CSV_HEADER)
        for measure, rows in sections.items():
            for r in rows:
                writer.writerow([measure] + [_cell(r[k]) for k in BOND_CSV_HEADER[1:]])


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v
