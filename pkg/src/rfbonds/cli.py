"""Command line: ``rfbonds {simulate,verify,conditions,covariance} --config FILE``.

Exit codes: 0 all checks pass, 1 statistical failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .bonds import write_bond_csv
from .measure import write_ensemble_csv
from .mpr import evaluate_conditions
from .runner import run_covariance, run_ensemble, verification_report
from .scenario import ConfigError, Scenario, load_scenario
from .verify import Check, VerificationReport

log = logging.getLogger("rfbonds")


def _manifest(sc: Scenario, command: str, workers: int, outputs: list[str]) -> dict:
    return {
        "command": command,
        "config_hash": sc.config_hash(),
        "config": sc.config,
        "seed": sc.seed,
        "n_paths": sc.n_paths,
        "workers": workers,
        "outputs": outputs,
        "versions": {"rfbonds": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
    }


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_simulate(sc: Scenario, args) -> int:
    result = run_ensemble(sc, args.workers)
    out = Path(args.out_dir)
    write_bond_csv({"physical": result.martingale(weighted=False).rows,
                    "reweighted": result.martingale(weighted=True).rows}, out / "bonds.csv")
    _write_json(out / "manifest.json", _manifest(sc, "simulate", args.workers, ["bonds.csv"]))
    print(f"wrote {out / 'bonds.csv'} ({sc.n_paths} paths)")
    return 0


def cmd_verify(sc: Scenario, args) -> int:
    result = run_ensemble(sc, args.workers)
    report = verification_report(result, negative_control=args.negative_control)
    out = Path(args.out_dir)
    write_bond_csv({"physical": result.martingale(weighted=False).rows,
                    "reweighted": result.martingale(weighted=True).rows}, out / "bonds.csv")
    sheet = result.sheet_report()
    write_ensemble_csv(result.density_rows() + sheet.rows + result.drift_rows(), out / "ensemble.csv")
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.txt").write_text(report.to_text() + "\n")
    _write_json(out / "manifest.json", _manifest(sc, "verify", args.workers,
                                                  ["bonds.csv", "ensemble.csv", "report.json", "report.txt"]))
    print(report.to_text())
    return 0 if report.passed else 1


def cmd_conditions(sc: Scenario, args) -> int:
    report = evaluate_conditions(sc.eta, sc.grid, sc.kind)
    out = Path(args.out_dir)
    (out / "conditions.json").write_text(report.to_json() + "\n")
    _write_json(out / "manifest.json", _manifest(sc, "conditions", args.workers, ["conditions.json"]))
    print(report.to_json())
    return 0


def cmd_covariance(sc: Scenario, args) -> int:
    rep = run_covariance(sc, args.workers)
    out = Path(args.out_dir)
    write_ensemble_csv(rep.rows, out / "covariance.csv")
    report = VerificationReport(metadata={"seed": sc.seed, "n_paths": sc.n_paths, "field": sc.kind.name})
    report.add(Check("field_covariance", rep.passed, details=rep.summary, rows=rep.rows))
    (out / "report.json").write_text(report.to_json() + "\n")
    _write_json(out / "manifest.json", _manifest(sc, "covariance", args.workers, ["covariance.csv", "report.json"]))
    print(report.to_text())
    return 0 if report.passed else 1


COMMANDS = {"simulate": cmd_simulate, "verify": cmd_verify, "conditions": cmd_conditions,
            "covariance": cmd_covariance}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rfbonds", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="scenario INI file")
    parser.add_argument("--seed", type=int, help="override simulation.seed")
    parser.add_argument("--paths", type=int, help="override simulation.n_paths")
    parser.add_argument("--out-dir", default=".", help="directory for CSV/JSON outputs")
    parser.add_argument("--workers", type=int, default=1, help="worker processes")
    parser.add_argument("--negative-control", action="store_true",
                        help="also run the unweighted control that must detect the physical drift")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.workers < 1:
            raise ConfigError("--workers", "must be >= 1")
        sc = load_scenario(args.config, seed=args.seed, n_paths=args.paths)
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    log.info("scenario %s: %d paths, seed %d", sc.config_hash()[:12], sc.n_paths, sc.seed)
    return COMMANDS[args.command](sc, args)


if __name__ == "__main__":
    sys.exit(main())
