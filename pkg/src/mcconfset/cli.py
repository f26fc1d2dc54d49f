"""Command-line front end.

Subcommands:
  demo       one end-to-end pipeline run on a small instance
  coverage   Monte Carlo grid run, CSV + JSON reports, CI coverage gate
  calibrate  derive the rate constant C and calibrated z, write a constants file

Exit codes: 0 success, 1 usage/config error, 2 coverage gate failure,
3 numerical failure. The default output directory comes from the
MCCONFSET_OUT environment variable; --out wins over it.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from . import defaults
from .confset import ConfSetConstants, build_confset
from .estimator import EstimatorConfig, NumericalError, estimate
from .harness import (
    CalibrationError,
    ExperimentGrid,
    calibrate_C,
    calibrate_z,
    default_grid,
    report_csv,
    report_json,
    run_grid,
    simulate_grid,
    trials_csv,
)
from .model import ModelParams, NoiseSpec, gen_low_rank, sample_observation
from .selection import select_rank

OUT_ENV_VAR = "MCCONFSET_OUT"
CONFIG_SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_GATE = 2
EXIT_NUMERICAL = 3


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Resolved parameters of one coverage run."""

    grid: ExperimentGrid
    output_dir: Path
    mode: str
    dump_trials: bool = False
    threads: int = 1
    C: float = defaults.DEFAULT_C
    z_cal: float = defaults.DEFAULT_Z_CAL
    coverage_margin: float | None = None


def _f9(x: float) -> str:
    return format(float(x), ".9g")


def _resolve_out(args: argparse.Namespace) -> Path:
    out = args.out or os.environ.get(OUT_ENV_VAR) or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _threads(args: argparse.Namespace) -> int:
    if args.threads == "auto":
        return os.cpu_count() or 1
    try:
        t = int(args.threads)
    except ValueError:
        raise ConfigError(f"--threads must be an integer or 'auto', got {args.threads!r}")
    if t < 1:
        raise ConfigError(f"--threads must be at least 1, got {t}")
    return t


def _require(cfg: dict[str, Any], key: str) -> Any:
    if key not in cfg:
        raise ConfigError(f"config is missing required field {key!r}")
    return cfg[key]


def load_config(path: str) -> dict[str, Any]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: line {exc.lineno}, column {exc.colno}: {exc.msg}")
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    version = _require(cfg, "schema_version")
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema_version {version}, expected {CONFIG_SCHEMA_VERSION}")
    return cfg


def grid_from_config(cfg: dict[str, Any], mode_override: str | None = None) -> ExperimentGrid:
    try:
        noises = tuple(
            NoiseSpec(kind=_require(nz, "kind"), sigma=_require(nz, "sigma"))
            for nz in _require(cfg, "noise")
        )
        return ExperimentGrid(
            shapes=tuple((int(s[0]), int(s[1])) for s in _require(cfg, "shapes")),
            ranks=tuple(int(k) for k in _require(cfg, "ranks")),
            budgets=tuple(float(b) for b in _require(cfg, "budgets")),
            noises=noises,
            a=float(cfg.get("a", 1.0)),
            alpha=float(cfg.get("alpha", 0.1)),
            trials=int(_require(cfg, "trials")),
            mode=mode_override or cfg.get("mode", "calibrated"),
            base_seed=int(cfg.get("base_seed", 1729)),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError, IndexError) as exc:
        raise ConfigError(f"invalid grid configuration: {exc}")


def _load_constants(cfg: dict[str, Any]) -> tuple[float, float]:
    """(C, z_cal) from the config, a referenced constants file, or defaults."""
    if "constants_file" in cfg:
        consts = load_config(str(cfg["constants_file"]))
        return float(_require(consts, "C")), float(_require(consts, "z_cal"))
    block = cfg.get("constants", {})
    return float(block.get("C", defaults.DEFAULT_C)), float(block.get("z_cal", defaults.DEFAULT_Z_CAL))


# ---------------------------------------------------------------------------


def cmd_demo(args: argparse.Namespace) -> int:
    m1 = m2 = 40
    k0 = 2
    a = 1.0
    p = args.p
    if not 0.0 < p <= 1.0:
        raise ConfigError(f"--p must lie in (0, 1], got {p}")
    n = int(round(p * m1 * m2))
    noise = NoiseSpec("rademacher", args.sigma)
    params = ModelParams.from_noise(m1, m2, n, a, noise)

    truth = gen_low_rank(m1, m2, k0, a, [args.seed, 0])
    obs = sample_observation(truth, params, noise, [args.seed, 1])
    # noiseless full observation needs no shrinkage; anything else uses the pilot rule
    lam = 0.0 if args.sigma == 0.0 and p == 1.0 else defaults.default_lambda(params)
    est = estimate(obs, params, EstimatorConfig(lam=lam))
    risk = float(np.sum((est.matrix - truth.matrix) ** 2)) / (m1 * m2)
    sel = select_rank(est, params, args.C)
    consts = ConfSetConstants(alpha=args.alpha, mode=args.mode, z_cal=args.z_cal)
    cs = build_confset(obs, sel, params, consts)

    print(f"shape: {m1}x{m2}  k0: {k0}  p: {_f9(p)}  sigma: {_f9(args.sigma)}  mode: {args.mode}")
    print(f"estimator risk: {_f9(risk)} ({est.iters_used} iters, converged: {str(est.converged).lower()})")
    print(f"k_star: {cs.k_star}")
    print(f"r_hat: {_f9(cs.r_hat)}")
    print(f"radius_sq: {_f9(cs.rho_sq)}")
    print(f"contained: {str(cs.contains(truth.matrix)).lower()}")
    return EXIT_OK


def cmd_coverage(args: argparse.Namespace) -> int:
    if args.config:
        cfg = load_config(args.config)
        grid = grid_from_config(cfg, mode_override=args.mode)
        C, z_cal = _load_constants(cfg)
        margin = cfg.get("coverage_margin")
    else:
        grid = default_grid(mode=args.mode or "calibrated", base_seed=args.seed)
        C, z_cal = defaults.DEFAULT_C, defaults.DEFAULT_Z_CAL
        margin = None
    run = RunConfig(
        grid=grid, output_dir=_resolve_out(args), mode=grid.mode,
        dump_trials=args.dump_trials, threads=_threads(args),
        C=C, z_cal=z_cal, coverage_margin=margin,
    )
    margin = run.coverage_margin
    if margin is None:
        margin = 3.0 * math.sqrt(grid.alpha * (1.0 - grid.alpha) / grid.trials)

    consts = ConfSetConstants(alpha=grid.alpha, mode=run.mode, z_cal=run.z_cal)
    records = simulate_grid(grid, run.C, threads=run.threads)
    report = run_grid(grid, run.C, consts=consts, records=records)

    csv_path = run.output_dir / "coverage_report.csv"
    json_path = run.output_dir / "coverage_report.json"
    csv_path.write_text(report_csv(report))
    json_path.write_text(report_json(report))
    print(f"wrote {csv_path} and {json_path}")
    if run.dump_trials:
        dump_path = run.output_dir / "trials.csv"
        dump_path.write_text(trials_csv(grid, records, consts))
        print(f"wrote {dump_path}")

    worst = min(report.cells, key=lambda rec: rec.coverage)
    print(f"worst cell coverage: {_f9(worst.coverage)} (cell {worst.cell.index})")
    if run.mode == "calibrated" and worst.coverage < 1.0 - grid.alpha - margin:
        print(
            f"coverage gate FAILED: {_f9(worst.coverage)} < "
            f"{_f9(1.0 - grid.alpha - margin)}", file=sys.stderr,
        )
        return EXIT_GATE
    return EXIT_OK


def cmd_calibrate(args: argparse.Namespace) -> int:
    if args.config:
        cfg = load_config(args.config)
        grid = grid_from_config(cfg)
    else:
        grid = default_grid(base_seed=args.seed)
    threads = _threads(args)
    out = _resolve_out(args)

    C = calibrate_C(grid, threads=threads)
    records = simulate_grid(grid, C, threads=threads)
    z_cal = calibrate_z(grid, C, records=records)
    z_paper = ConfSetConstants.z_floor(c_star=2.0)

    payload = {
        "schema_version": CONFIG_SCHEMA_VERSION,
        "C": C,
        "z_cal": z_cal,
        "z_paper": z_paper,
        "c_star": 2.0,
        "alpha": grid.alpha,
        "grid": grid.to_dict(),
    }
    path = out / "constants.json"
    path.write_text(json.dumps(payload, indent=2))
    print(f"wrote {path}")
    print(f"C: {_f9(C)}")
    print(f"z_cal: {_f9(z_cal)} (paper z: {_f9(z_paper)})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcconfset",
        description="Adaptive confidence sets for noisy matrix completion: demo and Monte Carlo experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    demo = sub.add_parser("demo", help="run one end-to-end pipeline on a 40x40 rank-2 instance")
    demo.add_argument("--seed", type=int, default=7)
    demo.add_argument("--sigma", type=float, default=0.1)
    demo.add_argument("--p", type=float, default=0.5, help="observation probability")
    demo.add_argument("--alpha", type=float, default=0.1)
    demo.add_argument("--mode", choices=("paper", "calibrated"), default="calibrated")
    demo.add_argument("--C", type=float, default=defaults.DEFAULT_C, help="rate constant for rank selection")
    demo.add_argument("--z-cal", type=float, default=defaults.DEFAULT_Z_CAL, dest="z_cal")
    demo.set_defaults(func=cmd_demo)

    cov = sub.add_parser("coverage", help="run the experiment grid and write CSV/JSON reports")
    cov.add_argument("--config", help="JSON config file; omit for the default grid")
    cov.add_argument("--mode", choices=("paper", "calibrated"), default=None)
    cov.add_argument("--seed", type=int, default=1729, help="base seed when no config is given")
    cov.add_argument("--out", help=f"output directory (default: ${OUT_ENV_VAR} or '.')")
    cov.add_argument("--threads", default="auto")
    cov.add_argument("--dump-trials", action="store_true", dest="dump_trials")
    cov.set_defaults(func=cmd_coverage)

    cal = sub.add_parser("calibrate", help="calibrate C and z_cal on a grid, write constants.json")
    cal.add_argument("--config", help="JSON config file; omit for the default grid")
    cal.add_argument("--seed", type=int, default=1729, help="base seed when no config is given")
    cal.add_argument("--out", help=f"output directory (default: ${OUT_ENV_VAR} or '.')")
    cal.add_argument("--threads", default="auto")
    cal.set_defaults(func=cmd_calibrate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"parameter error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_GATE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
