"""Space-time white noise on a maturity grid, Brownian sheets and the bond-driving fields.

The sheet is materialized on nodes ``(t_i, u_j)``.  Maturities start at
``u_min > 0``; the strip ``[0, u_min]`` below the first node is carried as one
extra noise column so that ``W(t_i, u_j)`` has its exact law
``Var = t_i * u_j`` on every node.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import PchipInterpolator

NODE_TOL = 1e-9


@dataclass(frozen=True)
class GridSpec:
    """Uniform time grid on ``[0, T0]`` and maturity grid on ``[u_min, T0]``."""

    t0_horizon: float
    n_time: int
    n_maturity: int
    u_min: float | None = None

    def __post_init__(self):
        if not (self.t0_horizon > 0 and math.isfinite(self.t0_horizon)):
            raise ValueError(f"t0_horizon must be positive and finite, got {self.t0_horizon}")
        if int(self.n_time) != self.n_time or self.n_time < 1:
            raise ValueError(f"n_time must be an integer >= 1, got {self.n_time}")
        if int(self.n_maturity) != self.n_maturity or self.n_maturity < 1:
            raise ValueError(f"n_maturity must be an integer >= 1, got {self.n_maturity}")
        if self.u_min is None:
            object.__setattr__(self, "u_min", self.t0_horizon / self.n_maturity)
        if not (0 < self.u_min <= self.t0_horizon):
            raise ValueError(f"u_min must lie in (0, t0_horizon], got {self.u_min}")

    @property
    def dt(self) -> float:
        return self.t0_horizon / self.n_time

    @property
    def du(self) -> float:
        return (self.t0_horizon - self.u_min) / self.n_maturity

    @property
    def time_nodes(self) -> np.ndarray:
        return self.dt * np.arange(self.n_time + 1)

    @property
    def maturity_nodes(self) -> np.ndarray:
        return self.u_min + self.du * np.arange(self.n_maturity + 1)

    def time_index(self, t: float) -> int:
        return _node_index(self.time_nodes, t, "time")

    def maturity_index(self, u: float) -> int:
        return _node_index(self.maturity_nodes, u, "maturity")

    def metadata(self) -> dict:
        return {
            "t0_horizon": self.t0_horizon,
            "n_time": self.n_time,
            "n_maturity": self.n_maturity,
            "u_min": self.u_min,
            "dt": self.dt,
            "du": self.du,
        }


def _node_index(nodes: np.ndarray, x: float, axis: str) -> int:
    j = int(np.argmin(np.abs(nodes - x)))
    if abs(nodes[j] - x) > NODE_TOL * max(1.0, abs(x)):
        raise ValueError(f"{axis} {x} is not a grid node (nearest is {nodes[j]})")
    return j


@dataclass(frozen=True)
class Warp:
    """Maturity warp ``h`` of a scaled field ``Z = W(t, h(T)^2) / h(T)``."""

    name: str
    h: Callable[[np.ndarray], np.ndarray]
    h_prime: Callable[[np.ndarray], np.ndarray]

    @classmethod
    def sqrt(cls) -> Warp:
        return cls("sqrt", np.sqrt, lambda u: 0.5 / np.sqrt(u))

    @classmethod
    def linear(cls) -> Warp:
        return cls("linear", lambda u: np.asarray(u, dtype=float) * 1.0, np.ones_like)

    @classmethod
    def power(cls, p: float) -> Warp:
        if p <= 0:
            raise ValueError(f"power warp needs p > 0, got {p}")
        return cls(
            f"power({p:g})",
            lambda u: np.power(u, p),
            lambda u: p * np.power(u, p - 1.0),
        )

    @classmethod
    def table(cls, nodes, values) -> Warp:
        """Monotone cubic interpolation of a tabulated warp."""
        nodes = np.asarray(nodes, dtype=float)
        values = np.asarray(values, dtype=float)
        if nodes.ndim != 1 or nodes.shape != values.shape or nodes.size < 2:
            raise ValueError("warp table needs two equal-length 1-D arrays with >= 2 entries")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("warp table nodes must be strictly increasing")
        interp = PchipInterpolator(nodes, values, extrapolate=False)
        deriv = interp.derivative()
        return cls("table", lambda u: interp(u), lambda u: deriv(u))


@dataclass(frozen=True)
class FieldKind:
    """Normalized sheet field (``warp is None``) or a scaled field with warp ``h``."""

    warp: Warp | None = None

    @classmethod
    def normalized(cls) -> FieldKind:
        return cls(None)

    @classmethod
    def scaled(cls, warp: Warp) -> FieldKind:
        return cls(warp)

    @property
    def is_normalized(self) -> bool:
        return self.warp is None

    @property
    def name(self) -> str:
        return "normalized" if self.warp is None else f"scaled:{self.warp.name}"

    def scale(self, u) -> np.ndarray:
        """``sqrt(u)`` for the normalized field, ``h(u)`` otherwise."""
        u = np.asarray(u, dtype=float)
        return np.sqrt(u) if self.warp is None else np.asarray(self.warp.h(u), dtype=float)

    def scale_prime(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.warp is None:
            return 0.5 / np.sqrt(u)
        return np.asarray(self.warp.h_prime(u), dtype=float)

    def noise_coords(self, u) -> np.ndarray:
        """Second sheet coordinate attached to maturity ``u``: ``u`` or ``h(u)^2``."""
        u = np.asarray(u, dtype=float)
        return u if self.warp is None else self.scale(u) ** 2

    def cell_widths(self, grid: GridSpec) -> tuple[float, np.ndarray]:
        """Widths in the sheet coordinate of the strip ``[0, u_min]`` and of every maturity cell."""
        if self.warp is None:
            return grid.u_min, np.full(grid.n_maturity, grid.du)
        self.validate(grid)
        v = self.noise_coords(grid.maturity_nodes)
        return float(v[0]), np.diff(v)

    def validate(self, grid: GridSpec) -> None:
        if self.warp is None:
            return
        u = grid.maturity_nodes
        h = self.scale(u)
        if not np.all(np.isfinite(h)):
            bad = int(np.flatnonzero(~np.isfinite(h))[0])
            raise ValueError(f"warp {self.warp.name}: h not finite at maturity node {bad} (u={u[bad]:g})")
        if h[0] <= 0:
            raise ValueError(f"warp {self.warp.name}: h(u_min) = {h[0]:g} must be positive")
        v = h**2
        steps = np.diff(v)
        if np.any(steps <= 0):
            j = int(np.flatnonzero(steps <= 0)[0])
            raise ValueError(
                f"warp {self.warp.name}: h^2 not strictly increasing on maturity cell {j} "
                f"[{u[j]:g}, {u[j + 1]:g}] (h^2 = {v[j]:g} -> {v[j + 1]:g})"
            )
        hp = self.scale_prime(u)
        if not np.all(np.isfinite(hp)):
            bad = int(np.flatnonzero(~np.isfinite(hp))[0])
            raise ValueError(f"warp {self.warp.name}: h' unavailable at maturity node {bad} (u={u[bad]:g})")

    def field_covariance(self, t1, T1, t2, T2) -> float:
        """Covariance of ``Z(t1, T1)`` and ``Z(t2, T2)``."""
        lo, hi = min(T1, T2), max(T1, T2)
        return min(t1, t2) * float(self.scale(lo) / self.scale(hi))


@dataclass(frozen=True)
class SheetPath:
    """Rectangle increments and the cumulated sheet for a batch of paths.

    ``increments[p, i, j]`` is the white-noise mass of cell
    ``[t_i, t_{i+1}] x [u_j, u_{j+1}]``, ``strip[p, i]`` that of
    ``[t_i, t_{i+1}] x [0, u_min]``; for warped sheets the maturity edges are
    replaced by ``h(u)^2``.  ``sheet[p, i, j] = W(t_i, coords[j])``.
    """

    increments: np.ndarray
    strip: np.ndarray
    sheet: np.ndarray
    coords: np.ndarray
    kind: FieldKind = field(default_factory=FieldKind)

    @property
    def n_paths(self) -> int:
        return self.sheet.shape[0]

    def noise(self) -> np.ndarray:
        """All increments with the strip as column 0, shape ``(n_paths, n_time, n_maturity + 1)``."""
        return np.concatenate([self.strip[..., None], self.increments], axis=-1)


@dataclass(frozen=True)
class FieldPath:
    values: np.ndarray
    kind: FieldKind | None


def block_rng(seed: int, block: int = 0) -> np.random.Generator:
    """Counter-based stream for one block of paths, keyed by ``(seed, block)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


def draw_standard_noise(grid: GridSpec, rng: np.random.Generator, n_paths: int = 1) -> np.ndarray:
    """Unit normals, one per strip/cell, laid out path-major."""
    return rng.standard_normal((n_paths, grid.n_time, grid.n_maturity + 1))


def sheet_from_normals(grid: GridSpec, normals: np.ndarray, kind: FieldKind | None = None) -> SheetPath:
    """Scale unit normals to rectangle masses and cumulate them into a sheet."""
    kind = kind or FieldKind.normalized()
    strip_width, widths = kind.cell_widths(grid)
    normals = np.asarray(normals, dtype=float)
    if normals.ndim == 2:
        normals = normals[None]
    expected = (grid.n_time, grid.n_maturity + 1)
    if normals.shape[1:] != expected:
        raise ValueError(f"normals have shape {normals.shape[1:]}, grid needs {expected}")
    sd = np.sqrt(grid.dt * np.concatenate([[strip_width], widths]))
    noise = normals * sd
    sheet = np.zeros((normals.shape[0], grid.n_time + 1, grid.n_maturity + 1))
    np.cumsum(np.cumsum(noise, axis=2), axis=1, out=sheet[:, 1:, :])
    return SheetPath(
        increments=noise[..., 1:],
        strip=noise[..., 0],
        sheet=sheet,
        coords=kind.noise_coords(grid.maturity_nodes),
        kind=kind,
    )


def sample_sheet(grid: GridSpec, rng: np.random.Generator, n_paths: int = 1) -> SheetPath:
    return sheet_from_normals(grid, draw_standard_noise(grid, rng, n_paths))


def sample_sheet_on_warped_grid(
    grid: GridSpec, h: Warp, rng: np.random.Generator, n_paths: int = 1
) -> SheetPath:
    """Sheet sampled directly at second coordinates ``h(u_j)^2``."""
    kind = FieldKind.scaled(h)
    kind.validate(grid)
    return sheet_from_normals(grid, draw_standard_noise(grid, rng, n_paths), kind)


def build_field(sheet: SheetPath, kind: FieldKind, grid: GridSpec) -> FieldPath:
    """``Z(t, u) = W(t, u) / sqrt(u)`` or ``W(t, h(u)^2) / h(u)``."""
    if sheet.kind.is_normalized != kind.is_normalized or (
        not kind.is_normalized and sheet.kind.warp.name != kind.warp.name
    ):
        raise ValueError(f"sheet was sampled for {sheet.kind.name}, field requested {kind.name}")
    scale = kind.scale(grid.maturity_nodes)
    return FieldPath(values=sheet.sheet / scale, kind=kind)


def brownian_field(grid: GridSpec, rng: np.random.Generator, n_paths: int = 1) -> FieldPath:
    """One-factor field: a single Brownian motion shared by every maturity."""
    dB = rng.standard_normal((n_paths, grid.n_time)) * math.sqrt(grid.dt)
    B = np.zeros((n_paths, grid.n_time + 1))
    np.cumsum(dB, axis=1, out=B[:, 1:])
    values = np.repeat(B[:, :, None], grid.n_maturity + 1, axis=2)
    return FieldPath(values=values, kind=None)


def dump_sheet_csv(sheet: SheetPath, path, index: int = 0) -> None:
    """Debug dump of one path: row = time index, column = maturity index."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_index"] + [f"u{j}" for j in range(sheet.sheet.shape[2])])
        for i, row in enumerate(sheet.sheet[index]):
            writer.writerow([i] + [repr(float(x)) for x in row])
