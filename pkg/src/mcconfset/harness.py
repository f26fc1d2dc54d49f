"""Monte Carlo harness: grid simulation, calibration, and coverage reports.

A grid is a cross product of shapes, true ranks, sample budgets, and noise
specs. Each cell runs independent trials of the full pipeline (generate,
observe, estimate, select, build the confidence set) on RNG streams keyed
by (base_seed, cell_index, trial_index), so results never depend on worker
scheduling.
"""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import defaults
from .confset import CSTAR_MIN, ConfSetConstants, radius_sq
from .estimator import EstimatorConfig, NumericalError, estimate
from .model import ModelParams, NoiseSpec, gen_low_rank, minimax_rate, sample_observation
from .selection import select_rank

#: A cell may lose at most this fraction of trials to numerical failures.
MAX_FAILED_FRACTION = 0.01

REPORT_SCHEMA_VERSION = 1

#: Column order of the per-cell CSV report.
CSV_COLUMNS = (
    "cell_index", "m1", "m2", "k0", "n", "p", "sigma", "U", "noise", "in_regime",
    "trials", "failed", "coverage", "mean_diameter_sq", "median_diameter_sq",
    "mean_k_star", "frac_k_le_k0", "mean_risk", "mean_r_hat",
    "mode", "alpha", "C", "z", "z_cal",
)

#: Column order of the optional per-trial dump.
TRIAL_CSV_COLUMNS = ("cell_index", "trial", "failed", "contained", "diameter_sq", "k_star", "risk")


class CalibrationError(RuntimeError):
    """No constant on the sweep achieved the required coverage."""


@dataclass(frozen=True)
class GridCell:
    """One grid configuration; index is its position in grid order."""

    index: int
    m1: int
    m2: int
    k0: int
    n: int
    noise: NoiseSpec
    a: float

    def params(self) -> ModelParams:
        return ModelParams.from_noise(self.m1, self.m2, self.n, self.a, self.noise)

    @property
    def in_regime(self) -> bool:
        # coverage guarantees assume d > 16 and n >= m * log(d); cells
        # outside that regime still run but are flagged in reports
        d = self.m1 + self.m2
        return d > 16 and self.n >= min(self.m1, self.m2) * math.log(d)


@dataclass(frozen=True)
class ExperimentGrid:
    """Cross product of experimental factors.

    Budgets may be given as absolute expected counts (values > 1) or as
    fractions of m1*m2 (values in (0, 1]), so one grid can express
    proportional budgets across shapes.
    """

    shapes: tuple[tuple[int, int], ...]
    ranks: tuple[int, ...]
    budgets: tuple[float, ...]
    noises: tuple[NoiseSpec, ...]
    a: float = 1.0
    alpha: float = 0.1
    trials: int = 200
    mode: str = "calibrated"
    base_seed: int = 1729

    def __post_init__(self):
        if not (self.shapes and self.ranks and self.budgets and self.noises):
            raise ValueError("grid needs at least one shape, rank, budget, and noise spec")
        if self.trials < 1:
            raise ValueError(f"trials must be positive, got {self.trials}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.mode not in ("paper", "calibrated"):
            raise ValueError(f"mode must be 'paper' or 'calibrated', got {self.mode!r}")
        for b in self.budgets:
            if b <= 0:
                raise ValueError(f"budgets must be positive, got {b}")

    def cells(self) -> list[GridCell]:
        out = []
        idx = 0
        for m1, m2 in self.shapes:
            for k0 in self.ranks:
                for b in self.budgets:
                    n = int(round(b * m1 * m2)) if b <= 1.0 else int(round(b))
                    for noise in self.noises:
                        out.append(GridCell(index=idx, m1=m1, m2=m2, k0=k0, n=n, noise=noise, a=self.a))
                        idx += 1
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "shapes": [list(s) for s in self.shapes],
            "ranks": list(self.ranks),
            "budgets": list(self.budgets),
            "noise": [{"kind": nz.kind, "sigma": nz.sigma} for nz in self.noises],
            "a": self.a,
            "alpha": self.alpha,
            "trials": self.trials,
            "mode": self.mode,
            "base_seed": self.base_seed,
        }


def default_grid(trials: int = 200, mode: str = "calibrated", base_seed: int = 1729) -> ExperimentGrid:
    """Desk-scale default: 3 shapes x 3 ranks x 3 budgets x 2 noise specs."""
    return ExperimentGrid(
        shapes=((40, 40), (60, 60), (80, 80)),
        ranks=(1, 2, 4),
        budgets=(0.3, 0.5, 0.8),
        noises=(NoiseSpec("rademacher", 0.1), NoiseSpec("uniform", 0.2)),
        a=1.0,
        alpha=0.1,
        trials=trials,
        mode=mode,
        base_seed=base_seed,
    )


@dataclass(frozen=True)
class TrialRecord:
    """Raw per-trial quantities; containment at any constants follows from
    (r_hat, k_star, dist_sq) without resimulating."""

    trial: int
    failed: bool
    risk: float = math.nan
    k_star: int = 0
    r_hat: float = math.nan
    dist_sq: float = math.nan  # ||truth - center||_F^2 / (m1*m2)
    sup_violation: float = 0.0


@dataclass(frozen=True)
class CellRecord:
    """Aggregated cell results at one set of confidence-set constants.

    max_sup_violation is the largest entry-bound excess any trial's center
    showed; zero means every projection was the exact rank truncation.
    """

    cell: GridCell
    trials: int
    failed: int
    coverage: float
    mean_diameter_sq: float
    median_diameter_sq: float
    mean_k_star: float
    frac_k_le_k0: float
    mean_risk: float
    mean_r_hat: float
    k_hist: dict[int, int]
    max_sup_violation: float = 0.0


@dataclass(frozen=True)
class CoverageReport:
    grid: ExperimentGrid
    constants: ConfSetConstants
    C: float
    cells: list[CellRecord]
    wall_clock_sec: float


def _estimator_config(params: ModelParams) -> EstimatorConfig:
    return EstimatorConfig(lam=defaults.default_lambda(params), step="auto")


def simulate_trial(cell: GridCell, trial: int, base_seed: int, C: float | None) -> TrialRecord:
    """One pipeline pass. With C = None, stop after the estimator (risk only)."""
    params = cell.params()
    try:
        truth = gen_low_rank(cell.m1, cell.m2, cell.k0, cell.a, [base_seed, cell.index, trial, 0])
        obs = sample_observation(truth, params, cell.noise, [base_seed, cell.index, trial, 1])
        est = estimate(obs, params, _estimator_config(params))
        scale = cell.m1 * cell.m2
        risk = float(np.sum((est.matrix - truth.matrix) ** 2)) / scale
        if C is None:
            return TrialRecord(trial=trial, failed=False, risk=risk)
        sel = select_rank(est, params, C)
        diff = truth.matrix - sel.center
        dist_sq = float(np.sum(diff * diff)) / scale
        resid = obs.values - obs.mask * sel.center
        r_hat = float(np.sum(resid * resid)) / params.n - params.sigma ** 2
        sup_violation = max(0.0, float(np.abs(sel.center).max()) - cell.a)
        return TrialRecord(
            trial=trial, failed=False, risk=risk, k_star=sel.k_star,
            r_hat=r_hat, dist_sq=dist_sq, sup_violation=sup_violation,
        )
    except NumericalError:
        return TrialRecord(trial=trial, failed=True)


def _simulate_cell(args: tuple[GridCell, int, int, float | None]) -> list[TrialRecord]:
    cell, trials, base_seed, C = args
    return [simulate_trial(cell, t, base_seed, C) for t in range(trials)]


def simulate_grid(
    grid: ExperimentGrid, C: float | None, threads: int | None = None, trials: int | None = None
) -> dict[int, list[TrialRecord]]:
    """Run every cell's trials; returns records keyed by cell index.

    Cells run on a process pool when threads > 1; per-trial seeding keeps
    the output identical for any worker count.
    """
    cells = grid.cells()
    trials = grid.trials if trials is None else trials
    jobs = [(cell, trials, grid.base_seed, C) for cell in cells]
    if threads is None or threads <= 1 or len(cells) == 1:
        results = [_simulate_cell(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_simulate_cell, jobs, chunksize=1))
    return {cell.index: recs for cell, recs in zip(cells, results)}


def _check_failures(cell: GridCell, recs: list[TrialRecord]) -> list[TrialRecord]:
    ok = [r for r in recs if not r.failed]
    failed = len(recs) - len(ok)
    # failures must stay strictly below the cap or the whole cell is suspect
    if failed > 0 and failed >= MAX_FAILED_FRACTION * len(recs):
        raise NumericalError(
            f"cell {cell.index} lost {failed}/{len(recs)} trials to numerical failures"
        )
    return ok


def evaluate_cell(
    cell: GridCell, recs: list[TrialRecord], consts: ConfSetConstants
) -> CellRecord:
    """Aggregate trial records into coverage and diameter statistics at the
    given constants. Containment is dist_sq <= radius, recomputed from the
    recorded residual statistic and selected rank."""
    ok = _check_failures(cell, recs)
    params = cell.params()
    covered = 0
    diam = np.empty(len(ok))
    for i, r in enumerate(ok):
        rho = radius_sq(r.r_hat, r.k_star, params, consts)
        covered += r.dist_sq <= rho
        diam[i] = 4.0 * rho
    ks = np.array([r.k_star for r in ok])
    hist: dict[int, int] = {}
    for k in ks:
        hist[int(k)] = hist.get(int(k), 0) + 1
    return CellRecord(
        cell=cell,
        trials=len(recs),
        failed=len(recs) - len(ok),
        coverage=covered / len(ok),
        mean_diameter_sq=float(diam.mean()),
        median_diameter_sq=float(np.median(diam)),
        mean_k_star=float(ks.mean()),
        frac_k_le_k0=float((ks <= cell.k0).mean()),
        mean_risk=float(np.mean([r.risk for r in ok])),
        mean_r_hat=float(np.mean([r.r_hat for r in ok])),
        k_hist=dict(sorted(hist.items())),
        max_sup_violation=max(r.sup_violation for r in ok),
    )


def run_cell(
    cell: GridCell,
    trials: int,
    mode: str,
    base_seed: int,
    C: float,
    consts: ConfSetConstants | None = None,
    alpha: float = 0.1,
) -> CellRecord:
    """Simulate one cell and aggregate it at the given mode's constants."""
    if consts is None:
        consts = ConfSetConstants(alpha=alpha, mode=mode, z_cal=defaults.DEFAULT_Z_CAL)
    recs = [simulate_trial(cell, t, base_seed, C) for t in range(trials)]
    return evaluate_cell(cell, recs, consts)


def run_grid(
    grid: ExperimentGrid,
    C: float,
    consts: ConfSetConstants | None = None,
    threads: int | None = None,
    records: dict[int, list[TrialRecord]] | None = None,
) -> CoverageReport:
    """Full grid at one mode; returns the per-cell report."""
    if consts is None:
        consts = ConfSetConstants(alpha=grid.alpha, mode=grid.mode, z_cal=defaults.DEFAULT_Z_CAL)
    t0 = time.perf_counter()
    if records is None:
        records = simulate_grid(grid, C, threads=threads)
    cells = [evaluate_cell(cell, records[cell.index], consts) for cell in grid.cells()]
    return CoverageReport(
        grid=grid, constants=consts, C=C, cells=cells,
        wall_clock_sec=time.perf_counter() - t0,
    )


def _require_grid_coverage(grid: ExperimentGrid) -> None:
    if len(set(grid.ranks)) < 3 or len(set(grid.budgets)) < 3:
        raise ValueError(
            "calibration needs at least 3 distinct ranks and 3 distinct budgets, "
            f"got {len(set(grid.ranks))} and {len(set(grid.budgets))}"
        )


def calibrate_C(
    grid: ExperimentGrid,
    threads: int | None = None,
    records: dict[int, list[TrialRecord]] | None = None,
) -> float:
    """Worst-cell (1 - 8/d)-quantile of risk / ((sigma + a)^2 * d * k0 / n).

    This is the constant the rank-selection thresholds r_k inherit.
    """
    _require_grid_coverage(grid)
    if records is None:
        records = simulate_grid(grid, C=None, threads=threads)
    worst = 0.0
    for cell in grid.cells():
        ok = _check_failures(cell, records[cell.index])
        params = cell.params()
        rate = minimax_rate(cell.k0, params, 1.0)
        q = float(np.quantile([r.risk / rate for r in ok], 1.0 - 8.0 / params.d))
        worst = max(worst, q)
    return worst


def _coverage_at_z(
    grid: ExperimentGrid, records: dict[int, list[TrialRecord]], z: float, alpha: float
) -> tuple[bool, int, float]:
    """Check every cell's empirical coverage at calibrated z; returns
    (all cells pass, worst cell index, worst coverage)."""
    consts = ConfSetConstants(alpha=alpha, mode="calibrated", z_cal=z)
    worst_cov, worst_idx = 2.0, -1
    for cell in grid.cells():
        ok = _check_failures(cell, records[cell.index])
        params = cell.params()
        covered = sum(r.dist_sq <= radius_sq(r.r_hat, r.k_star, params, consts) for r in ok)
        cov = covered / len(ok)
        if cov < worst_cov:
            worst_cov, worst_idx = cov, cell.index
    return worst_cov >= 1.0 - alpha, worst_idx, worst_cov


def calibrate_z(
    grid: ExperimentGrid,
    C: float,
    alpha: float | None = None,
    threads: int | None = None,
    records: dict[int, list[TrialRecord]] | None = None,
    sweep_floor: float = defaults.Z_SWEEP_FLOOR,
) -> float:
    """Smallest z on a logarithmic sweep with every cell's coverage at least
    1 - alpha, refined by bisection to a factor 1.25.

    The sweep runs from sweep_floor up to the paper-mode floor; containment
    at each candidate is recomputed from the trial records, so only one
    simulation pass is needed.
    """
    _require_grid_coverage(grid)
    alpha = grid.alpha if alpha is None else alpha
    if records is None:
        records = simulate_grid(grid, C, threads=threads)

    z_hi = ConfSetConstants.z_floor(CSTAR_MIN)
    sweep = [sweep_floor]
    while sweep[-1] < z_hi:
        sweep.append(min(sweep[-1] * 10.0, z_hi))
    last_fail = None
    first_pass = None
    for z in sweep:
        ok, worst_idx, worst_cov = _coverage_at_z(grid, records, z, alpha)
        if ok:
            first_pass = z
            break
        last_fail = z
    if first_pass is None:
        raise CalibrationError(
            f"no z up to {z_hi:g} reaches coverage {1 - alpha:g}; "
            f"worst cell {worst_idx} at coverage {worst_cov:.4f}"
        )
    if last_fail is None:
        return first_pass  # the sweep floor already covers
    lo, hi = last_fail, first_pass
    while hi / lo > 1.25:
        mid = math.sqrt(lo * hi)
        ok, _, _ = _coverage_at_z(grid, records, mid, alpha)
        if ok:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class ScalingReport:
    """Diameter scaling against the rate, plus log-log exponents.

    rows: (cell, mean_diameter_sq, mean_diameter_sq / r_k0)
    exponents: least-squares coefficients of log mean diameter on
    (log k0, log d, log n); the construction predicts (+1, +1, -1).
    """

    rows: list[tuple[GridCell, float, float]] = field(default_factory=list)
    exponents: dict[str, float] = field(default_factory=dict)


def diameter_scaling_report(
    grid: ExperimentGrid,
    C: float,
    z_cal: float,
    threads: int | None = None,
    records: dict[int, list[TrialRecord]] | None = None,
) -> ScalingReport:
    if records is None:
        records = simulate_grid(grid, C, threads=threads)
    consts = ConfSetConstants(alpha=grid.alpha, mode="calibrated", z_cal=z_cal)
    rows = []
    design, response = [], []
    for cell in grid.cells():
        rec = evaluate_cell(cell, records[cell.index], consts)
        params = cell.params()
        r_k0 = minimax_rate(cell.k0, params, C)
        rows.append((cell, rec.mean_diameter_sq, rec.mean_diameter_sq / r_k0))
        design.append([1.0, math.log(cell.k0), math.log(params.d), math.log(cell.n)])
        response.append(math.log(rec.mean_diameter_sq))
    beta, *_ = np.linalg.lstsq(np.asarray(design), np.asarray(response), rcond=None)
    exponents = {"k0": float(beta[1]), "d": float(beta[2]), "n": float(beta[3])}
    return ScalingReport(rows=rows, exponents=exponents)


# ---------------------------------------------------------------------------
# report serialization

def _fmt(x: Any) -> str:
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, float):
        return format(x, ".9g")
    return str(x)


def report_csv(report: CoverageReport) -> str:
    """One row per cell in CSV_COLUMNS order, floats at 9 significant digits.

    Byte-stable: identical grid and seed produce identical text for any
    worker count.
    """
    lines = [",".join(CSV_COLUMNS)]
    consts = report.constants
    for rec in report.cells:
        cell = rec.cell
        params = cell.params()
        row = {
            "cell_index": cell.index, "m1": cell.m1, "m2": cell.m2, "k0": cell.k0,
            "n": cell.n, "p": params.p, "sigma": cell.noise.sigma, "U": cell.noise.U,
            "noise": cell.noise.kind, "in_regime": cell.in_regime,
            "trials": rec.trials, "failed": rec.failed, "coverage": rec.coverage,
            "mean_diameter_sq": rec.mean_diameter_sq,
            "median_diameter_sq": rec.median_diameter_sq,
            "mean_k_star": rec.mean_k_star, "frac_k_le_k0": rec.frac_k_le_k0,
            "mean_risk": rec.mean_risk, "mean_r_hat": rec.mean_r_hat,
            "mode": consts.mode, "alpha": consts.alpha, "C": report.C,
            "z": consts.z, "z_cal": consts.z_cal,
        }
        lines.append(",".join(_fmt(row[col]) for col in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def report_json(report: CoverageReport) -> str:
    """Full-metadata mirror of the CSV, including wall clock and rank
    histograms (wall clock varies between runs and stays out of the CSV)."""
    payload = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "grid": report.grid.to_dict(),
        "constants": {
            "C": report.C, "mode": report.constants.mode, "alpha": report.constants.alpha,
            "z": report.constants.z, "z_cal": report.constants.z_cal,
            "c_star": report.constants.c_star,
        },
        "wall_clock_sec": report.wall_clock_sec,
        "cells": [
            {
                "cell_index": rec.cell.index, "m1": rec.cell.m1, "m2": rec.cell.m2,
                "k0": rec.cell.k0, "n": rec.cell.n, "p": rec.cell.params().p,
                "noise": {"kind": rec.cell.noise.kind, "sigma": rec.cell.noise.sigma,
                          "U": rec.cell.noise.U},
                "in_regime": rec.cell.in_regime,
                "trials": rec.trials, "failed": rec.failed, "coverage": rec.coverage,
                "mean_diameter_sq": rec.mean_diameter_sq,
                "median_diameter_sq": rec.median_diameter_sq,
                "mean_k_star": rec.mean_k_star, "frac_k_le_k0": rec.frac_k_le_k0,
                "mean_risk": rec.mean_risk, "mean_r_hat": rec.mean_r_hat,
                "max_sup_violation": rec.max_sup_violation,
                "k_hist": {str(k): v for k, v in rec.k_hist.items()},
            }
            for rec in report.cells
        ],
    }
    return json.dumps(payload, indent=2)


def trials_csv(
    grid: ExperimentGrid,
    records: dict[int, list[TrialRecord]],
    consts: ConfSetConstants,
) -> str:
    """Optional per-trial dump in TRIAL_CSV_COLUMNS order."""
    lines = [",".join(TRIAL_CSV_COLUMNS)]
    for cell in grid.cells():
        params = cell.params()
        for r in records[cell.index]:
            if r.failed:
                row = (cell.index, r.trial, True, "", "", "", "")
            else:
                rho = radius_sq(r.r_hat, r.k_star, params, consts)
                row = (cell.index, r.trial, False, r.dist_sq <= rho, 4.0 * rho, r.k_star, r.risk)
            lines.append(",".join(_fmt(x) if x != "" else "" for x in row))
    return "\n".join(lines) + "\n"
