"""Ensemble orchestration.

Paths are split into fixed-size blocks that do not depend on the worker
count.  Block ``b`` draws from the stream keyed by ``(seed, b)``, and block
statistics are merged in block order, so outputs are identical for any
number of workers.
"""

from __future__ import annotations

import functools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import bonds as bd
from .grid_noise import block_rng, build_field, draw_standard_noise, sheet_from_normals
from .measure import accumulate_probes, log_rn_density, shift_field, summarize_probes
from .mpr import girsanov_kernel, lambda_from_eta
from .scenario import Scenario, build_scenario
from .verify import Check, VerificationReport, WeightedAccumulator, battery_summary


def block_sizes(n_paths: int, block_paths: int) -> list[int]:
    full, rest = divmod(n_paths, block_paths)
    return [block_paths] * full + ([rest] if rest else [])


@functools.lru_cache(maxsize=4)
def _scenario_from_json(blob: str) -> tuple[Scenario, object, object]:
    sc = build_scenario(json.loads(blob))
    lam = lambda_from_eta(sc.eta, sc.grid)
    kernel = girsanov_kernel(sc.eta, lam, sc.kind, sc.grid)
    return sc, lam, kernel


def covariance_block(blob: str, block: int, n: int) -> dict:
    sc, _, _ = _scenario_from_json(blob)
    sheet = sheet_from_normals(sc.grid, draw_standard_noise(sc.grid, block_rng(sc.seed, block), n), sc.kind)
    field = build_field(sheet, sc.kind, sc.grid)
    return {"field": accumulate_probes({}, field, None, sc.probes, sc.grid)}


def ensemble_block(blob: str, block: int, n: int) -> dict:
    """Full pipeline for one block of paths; returns mergeable statistics only."""
    sc, lam, kernel = _scenario_from_json(blob)
    grid = sc.grid
    sheet = sheet_from_normals(grid, draw_standard_noise(grid, block_rng(sc.seed, block), n), sc.kind)
    weights = log_rn_density(kernel, sheet, grid, sc.density_kernel)
    field = build_field(sheet, sc.kind, grid)
    shifted = shift_field(field, lam, grid)
    surface = bd.simulate_bonds(sc.market, lam, field, grid)
    del sheet

    cols = [grid.maturity_index(T) for T in sc.maturities]
    density, drift = {}, {}
    for t in sc.checkpoints:
        i = grid.time_index(t)
        density.setdefault(i, WeightedAccumulator(1)).add(np.ones(n), weights.at(i))
        drift.setdefault(i, WeightedAccumulator(len(cols))).add(shifted.values[:, i, cols], weights.at(i))
    return {
        "density": density,
        "drift": drift,
        "sheet": accumulate_probes({}, shifted, weights, sc.probes, grid),
        "bonds_q": bd.accumulate_discounted({}, surface, weights, sc.checkpoints, sc.maturities, grid),
        "bonds_p": bd.accumulate_discounted({}, surface, None, sc.checkpoints, sc.maturities, grid),
    }


def _merge(total: dict | None, part: dict) -> dict:
    if total is None:
        return part
    for group, accs in part.items():
        dest = total[group]
        for key, acc in accs.items():
            dest[key] = dest[key].merge(acc)
    return total


def run_blocks(fn, sc: Scenario, workers: int = 1) -> dict:
    blob = json.dumps(sc.config, sort_keys=True)
    sizes = block_sizes(sc.n_paths, sc.block_paths)
    blocks = range(len(sizes))
    if workers <= 1:
        parts = (fn(blob, b, n) for b, n in zip(blocks, sizes))
        total = None
        for part in parts:
            total = _merge(total, part)
        return total
    with ProcessPoolExecutor(max_workers=workers) as pool:
        total = None
        # map yields in submission order, keeping the merge order fixed
        for part in pool.map(fn, [blob] * len(sizes), blocks, sizes):
            total = _merge(total, part)
    return total


@dataclass
class EnsembleResult:
    scenario: Scenario
    stats: dict
    initial: np.ndarray
    drift_factor: np.ndarray

    def martingale(self, weighted: bool = True, expected=None, tolerance: float | None = None):
        sc = self.scenario
        return bd.summarize_martingale(
            self.stats["bonds_q" if weighted else "bonds_p"], self.initial, sc.checkpoints, sc.maturities,
            sc.grid, expected_ratio=expected, z_bound=sc.z_bound,
            tolerance=sc.martingale_allowance if tolerance is None else tolerance,
            min_effective_fraction=sc.min_effective_fraction,
        )

    def density_rows(self) -> list[dict]:
        rows = []
        for t in self.scenario.checkpoints:
            est = self.stats["density"][self.scenario.grid.time_index(t)].plain()[0]
            rows.append({"label": f"density t={t:g}", "t_years": t, "estimate": est.mean,
                         "std_error": est.std_error, "expected": 1.0, "z_score": est.z_score(1.0),
                         "effective_n": est.effective_n, "n": est.n})
        return rows

    def drift_rows(self) -> list[dict]:
        sc = self.scenario
        rows = []
        for t in sc.checkpoints:
            ests = self.stats["drift"][sc.grid.time_index(t)].weighted()
            for est, T in zip(ests, sc.maturities):
                rows.append({"label": f"shifted mean t={t:g} T={T:g}", "estimate": est.mean,
                             "std_error": est.std_error, "expected": 0.0, "z_score": est.z_score(0.0),
                             "effective_n": est.effective_n, "n": est.n})
        return rows

    def sheet_report(self):
        sc = self.scenario
        return summarize_probes(self.stats["sheet"], sc.probes, sc.kind, sc.z_bound, sc.min_effective_fraction)


def run_ensemble(sc: Scenario, workers: int = 1) -> EnsembleResult:
    stats = run_blocks(ensemble_block, sc, workers)
    lam = lambda_from_eta(sc.eta, sc.grid)
    return EnsembleResult(
        scenario=sc, stats=stats,
        initial=sc.market.initial_prices(sc.grid),
        drift_factor=bd.expected_drift_factor(sc.market, lam, sc.grid),
    )


def run_covariance(sc: Scenario, workers: int = 1):
    stats = run_blocks(covariance_block, sc, workers)
    return summarize_probes(stats["field"], sc.probes, sc.kind, sc.z_bound, sc.min_effective_fraction)


def _battery_check(name: str, rows: list[dict], z_bound: float) -> Check:
    summary = battery_summary([r["z_score"] for r in rows], z_bound)
    return Check(name, summary["n_exceeding"] == 0, details=summary, rows=rows)


def verification_report(result: EnsembleResult, negative_control: bool = False) -> VerificationReport:
    sc = result.scenario
    report = VerificationReport(metadata={"seed": sc.seed, "n_paths": sc.n_paths, "grid": sc.grid.metadata(),
                                          "field": sc.kind.name, "z_bound": sc.z_bound})
    report.add(_battery_check("density_mean_one", result.density_rows(), sc.z_bound))

    sheet = result.sheet_report()
    check = Check("shifted_sheet_law", sheet.passed, details=dict(sheet.summary), rows=sheet.rows)
    check.details["underpowered"] = sheet.underpowered
    if sheet.underpowered:
        check.status = "underpowered"
    report.add(check)

    report.add(_battery_check("shifted_drift_zero", result.drift_rows(), sc.z_bound))

    mart = result.martingale(weighted=True)
    worst = max(abs(r["ratio"] - 1.0) for r in mart.rows)
    report.add(Check("reweighted_martingale", mart.passed,
                     status="underpowered" if mart.underpowered else "",
                     details={"max_abs_ratio_dev": worst, "allowance": sc.martingale_allowance,
                              "max_abs_z": max(abs(r["z_score"]) for r in mart.rows)},
                     rows=mart.rows))

    if negative_control:
        report.add(negative_control_check(result))
    return report


def negative_control_check(result: EnsembleResult) -> Check:
    """Unweighted discounted prices should drift by ``exp(sum lambda sigma dt)`` and miss the target."""
    sc = result.scenario
    plain = result.martingale(weighted=False, tolerance=0.0)
    drift = result.martingale(weighted=False, expected=result.drift_factor, tolerance=0.0)
    worst = max(abs(r["ratio"] - 1.0) for r in plain.rows)
    detected = worst > sc.negative_control_threshold
    consistent = drift.passed
    status = "expected-fail-detected" if detected else "expected-fail-not-detected"
    return Check("unweighted_negative_control", detected and consistent, status=status,
                 details={"max_abs_ratio_dev": worst, "threshold": sc.negative_control_threshold,
                          "matches_physical_drift": consistent},
                 rows=drift.rows)
