"""Market price of risk built from a maturity density, the change-of-measure kernel
and the integrability conditions that guarantee no arbitrage.

Node-wise arrays have shape ``(n_time + 1, n_maturity + 1)`` for deterministic
densities and ``(n_paths, n_time + 1, n_maturity + 1)`` for grid-adapted ones.
A node value is read as constant on the cell ``[t_i, t_{i+1}) x [u_j, u_{j+1})``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .grid_noise import FieldKind, GridSpec, SheetPath, Warp
from .verify import Estimate, weighted_moments

# sub-intervals per maturity cell when integrating h'^2 towards the horizon
TAIL_REFINE = 16


@dataclass(frozen=True)
class EtaSpec:
    """Density ``eta(t, u)`` whose maturity integral is the market price of risk."""

    kind: str
    value: float = 0.0
    time_factor: Callable | None = None
    maturity_factor: Callable | None = None
    table: np.ndarray | None = None
    rule: Callable | None = None

    @classmethod
    def zero(cls) -> EtaSpec:
        return cls("zero")

    @classmethod
    def constant(cls, c: float) -> EtaSpec:
        return cls("constant", value=float(c))

    @classmethod
    def separable(cls, time_factor: Callable, maturity_factor: Callable) -> EtaSpec:
        return cls("separable", time_factor=time_factor, maturity_factor=maturity_factor)

    @classmethod
    def piecewise_constant(cls, table) -> EtaSpec:
        """Blocks of constant value; a table of shape ``(a, b)`` splits the square into a x b blocks."""
        table = np.atleast_2d(np.asarray(table, dtype=float))
        if table.ndim != 2 or not np.all(np.isfinite(table)):
            raise ValueError("piecewise-constant eta needs a finite 2-D table")
        return cls("piecewise", table=table)

    @classmethod
    def grid_adapted(cls, rule: Callable) -> EtaSpec:
        """``rule(sheet_rows, i, grid)`` returns row ``i`` of eta for every path.

        ``sheet_rows`` holds ``W(t_k, u_j)`` for ``k <= i`` only, shape
        ``(n_paths, i + 1, n_maturity + 1)``.
        """
        return cls("adapted", rule=rule)

    @property
    def deterministic(self) -> bool:
        return self.kind != "adapted"

    def realize(self, grid: GridSpec, sheet: SheetPath | None = None) -> np.ndarray:
        shape = (grid.n_time + 1, grid.n_maturity + 1)
        if self.kind == "zero":
            return np.zeros(shape)
        if self.kind == "constant":
            return np.full(shape, self.value)
        if self.kind == "separable":
            f = np.asarray(self.time_factor(grid.time_nodes), dtype=float)
            k = np.asarray(self.maturity_factor(grid.maturity_nodes), dtype=float)
            return np.broadcast_to(f[:, None] * k[None, :], shape).copy()
        if self.kind == "piecewise":
            a, b = self.table.shape
            rows = np.minimum(np.arange(grid.n_time + 1) * a // grid.n_time, a - 1)
            cols = np.minimum(np.arange(grid.n_maturity + 1) * b // grid.n_maturity, b - 1)
            return self.table[np.ix_(rows, cols)].copy()
        if self.kind == "adapted":
            if sheet is None:
                raise ValueError("grid-adapted eta needs a sampled sheet")
            out = np.empty(sheet.sheet.shape)
            for i in range(grid.n_time + 1):
                out[:, i, :] = self.rule(sheet.sheet[:, : i + 1, :], i, grid)
            return out
        raise ValueError(f"unknown eta kind {self.kind!r}")


def realize_eta(eta, grid: GridSpec, sheet: SheetPath | None = None) -> np.ndarray:
    if isinstance(eta, EtaSpec):
        return eta.realize(grid, sheet)
    return np.asarray(eta, dtype=float)


@dataclass(frozen=True)
class MprSurface:
    """Market price of risk ``lambda(t_i, u_j)`` on grid nodes."""

    values: np.ndarray

    @classmethod
    def constant_in_maturity(cls, lam_t, grid: GridSpec) -> MprSurface:
        """Classical one-factor market price of risk, the same for every maturity."""
        lam_t = np.broadcast_to(np.asarray(lam_t, dtype=float), (grid.n_time + 1,))
        return cls(np.repeat(lam_t[:, None], grid.n_maturity + 1, axis=1))


@dataclass(frozen=True)
class KernelGrid:
    """Change-of-measure kernel ``g(t_i, u_j)`` plus the drift carried by the strip below ``u_min``.

    ``strip_drift[..., i]`` is ``scale(u_min) * lambda(t_i, u_min)``, the
    integral of ``g`` over ``[0, u_min]`` with the density frozen at its
    value on the first node.
    """

    g: np.ndarray
    strip_drift: np.ndarray
    kind: FieldKind

    scaled_lambda: np.ndarray | None = None

    def cell_drift(self, grid: GridSpec, rule: str = "cell") -> np.ndarray:
        """Integral of the kernel over the strip and over each maturity cell; rows ``0 .. n_time - 1``.

        ``rule="cell"`` uses increments of ``scale(u) * lambda`` so the
        cell masses sum exactly to ``scale(T) * lambda(T)``; ``rule="node"``
        uses the node value ``g(u_j) * du``.
        """
        rows = slice(0, grid.n_time)
        strip = self.strip_drift[..., rows, None]
        if rule == "cell":
            cells = np.diff(self.scaled_lambda[..., rows, :], axis=-1)
        elif rule == "node":
            cells = self.g[..., rows, :-1] * grid.du
        else:
            raise ValueError(f"unknown kernel rule {rule!r}")
        return np.concatenate([strip, cells], axis=-1)

    def density_coefficients(self, grid: GridSpec, rule: str = "cell") -> np.ndarray:
        """Cell drift divided by the cell width in the sheet coordinate, strip first."""
        strip_width, widths = self.kind.cell_widths(grid)
        return self.cell_drift(grid, rule) / np.concatenate([[strip_width], widths])


def lambda_from_eta(eta, grid: GridSpec, sheet: SheetPath | None = None) -> MprSurface:
    """Left-endpoint running integral in maturity, anchored at ``eta(u_min) * u_min``."""
    e = realize_eta(eta, grid, sheet)
    lam = np.empty_like(e)
    lam[..., 0] = e[..., 0] * grid.u_min
    lam[..., 1:] = lam[..., :1] + np.cumsum(e[..., :-1] * grid.du, axis=-1)
    return MprSurface(lam)


def girsanov_kernel(eta, lam: MprSurface, kind: FieldKind, grid: GridSpec,
                    sheet: SheetPath | None = None) -> KernelGrid:
    e = realize_eta(eta, grid, sheet)
    u = grid.maturity_nodes
    kind.validate(grid)
    if kind.is_normalized:
        root = np.sqrt(u)
        g = lam.values / (2.0 * root) + root * e
    else:
        hp = kind.scale_prime(u)
        g = hp * lam.values + kind.scale(u) * e
    scaled = kind.scale(u) * lam.values
    return KernelGrid(g=g, strip_drift=scaled[..., 0], kind=kind, scaled_lambda=scaled)


def check_drift_identity(kernel: KernelGrid, lam: MprSurface, kind: FieldKind, grid: GridSpec) -> float:
    """Max over time rows and maturities of ``|int_0^T g du - scale(T) lambda(T)|``.

    Both sides use the left-endpoint rule the kernel was built with.
    """
    rows = slice(0, grid.n_time)
    g = kernel.g[..., rows, :]
    integral = np.empty_like(g)
    integral[..., 0] = kernel.strip_drift[..., rows]
    integral[..., 1:] = integral[..., :1] + np.cumsum(g[..., :-1] * grid.du, axis=-1)
    target = kind.scale(grid.maturity_nodes) * lam.values[..., rows, :]
    return float(np.max(np.abs(integral - target)))


def maturity_weights(grid: GridSpec) -> np.ndarray:
    """Trapezoid weights on ``[u_min, T0]`` with the strip ``[0, u_min]`` lumped on the first node."""
    w = np.full(grid.n_maturity + 1, grid.du)
    w[0] = w[-1] = 0.5 * grid.du
    w[0] += grid.u_min
    return w


def _integrate(f: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Double integral over the square: left rule in time (cell-constant), trapezoid in maturity."""
    return grid.dt * np.sum(f[..., :-1, :] @ maturity_weights(grid), axis=-1)


def _warp_tail(kind: FieldKind, grid: GridSpec) -> np.ndarray:
    """``int_u^T0 h'(tau)^2 dtau`` at every maturity node (``h = sqrt`` for the normalized field)."""
    warp = kind.warp or Warp.sqrt()
    fine = grid.u_min + (grid.du / TAIL_REFINE) * np.arange(grid.n_maturity * TAIL_REFINE + 1)
    hp2 = np.asarray(warp.h_prime(fine), dtype=float) ** 2
    pieces = 0.5 * (hp2[1:] + hp2[:-1]) * (grid.du / TAIL_REFINE)
    tail = np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]])
    return tail[::TAIL_REFINE]


@dataclass
class ConditionReport:
    c1_integral: float
    c2_integral: float
    thm2_integral: float
    half_g_norm_sq: float
    term1_norm_sq: float
    term2_norm_sq: float
    kind: str = "normalized"
    grid: dict = field(default_factory=dict)
    estimate: bool = False
    exp_moments: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        if self.estimate:
            out["exp_moments"] = {
                k: {"mean": e.mean, "std_error": e.std_error, "n": e.n} for k, e in self.exp_moments.items()
            }
        else:
            out.pop("exp_moments")
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def condition_integrals(eta, grid: GridSpec, kind: FieldKind, sheet: SheetPath | None = None) -> dict:
    """Every condition integral; scalars for deterministic eta, per-path arrays otherwise."""
    e = realize_eta(eta, grid, sheet)
    lam = lambda_from_eta(e, grid).values
    kernel = girsanov_kernel(e, MprSurface(lam), kind, grid)
    u = grid.maturity_nodes
    T0 = grid.t0_horizon
    log_ratio = np.log(T0 / u)
    eta_sq = _integrate(e**2, grid)
    if kind.is_normalized:
        term1 = _integrate((lam / (2.0 * np.sqrt(u))) ** 2, grid)
    else:
        term1 = _integrate((kind.scale_prime(u) * lam) ** 2, grid)
    h = kind.scale(u)
    return {
        "c1_integral": _integrate(log_ratio * e * lam / 2.0 + u * e**2, grid),
        "c2_integral": 1.25 * T0 * eta_sq,
        "thm2_integral": _integrate(e * lam * _warp_tail(kind, grid) / 2.0 + h**2 * e**2, grid),
        "half_g_norm_sq": 0.5 * _integrate(kernel.g**2, grid),
        "term1_norm_sq": term1,
        "term2_norm_sq": _integrate((h * e) ** 2, grid),
    }


def evaluate_conditions(eta, grid: GridSpec, kind: FieldKind | None = None,
                        sheet: SheetPath | None = None) -> ConditionReport:
    """Condition integrals for ``eta``.

    For grid-adapted ``eta`` a sheet ensemble is required; the report then
    holds ensemble means of each integral and Monte Carlo estimates of the
    exponential moments, and is flagged as an estimate.
    """
    kind = kind or FieldKind.normalized()
    stochastic = isinstance(eta, EtaSpec) and not eta.deterministic
    if stochastic and sheet is None:
        raise ValueError("grid-adapted eta needs a sheet ensemble to evaluate conditions")
    vals = condition_integrals(eta, grid, kind, sheet if stochastic else None)
    if not stochastic:
        return ConditionReport(**{k: float(v) for k, v in vals.items()}, kind=kind.name, grid=grid.metadata())
    moments = {}
    for name in ("c1_integral", "c2_integral", "thm2_integral", "half_g_norm_sq"):
        moments[name] = weighted_moments(np.exp(vals[name]))
    return ConditionReport(
        **{k: float(np.mean(v)) for k, v in vals.items()},
        kind=kind.name, grid=grid.metadata(), estimate=True, exp_moments=moments,
    )


def l2_identity_sides(eta, grid: GridSpec) -> tuple[float, float]:
    """``int int lambda^2/(4u)`` and ``(1/2) int int eta lambda log(T0/u)`` by the same quadrature."""
    e = realize_eta(eta, grid)
    lam = lambda_from_eta(e, grid).values
    u = grid.maturity_nodes
    lhs = _integrate(lam**2 / (4.0 * u), grid)
    rhs = 0.5 * _integrate(e * lam * np.log(grid.t0_horizon / u), grid)
    return float(lhs), float(rhs)


def check_l2_identity(eta, grid: GridSpec) -> float:
    lhs, rhs = l2_identity_sides(eta, grid)
    return abs(lhs - rhs)


def check_c2_bound(eta, grid: GridSpec) -> float:
    """Slack ``(5 T0 / 2) ||eta||^2 - ||g||^2`` for the normalized kernel; negative means violated."""
    e = realize_eta(eta, grid)
    lam = lambda_from_eta(e, grid)
    g = girsanov_kernel(e, lam, FieldKind.normalized(), grid).g
    return float(2.5 * grid.t0_horizon * _integrate(e**2, grid) - _integrate(g**2, grid))


def g_norm_sq(kernel: KernelGrid, grid: GridSpec) -> np.ndarray | float:
    return _integrate(kernel.g**2, grid)
