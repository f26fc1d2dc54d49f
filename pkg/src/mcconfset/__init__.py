"""Adaptive Frobenius-norm confidence sets for noisy matrix completion.

Pipeline: observe a low-rank matrix through a Bernoulli mask with bounded
noise, estimate it by singular value thresholding, select a rank by
comparing projection residuals to rate thresholds, and wrap the selected
center in a residual-calibrated Frobenius ball. The harness verifies
coverage and diameter scaling by Monte Carlo.
"""
from .confset import (
    ConfSetConstants,
    ConfidenceSet,
    build_confset,
    contains,
    diameter_sq,
    implicit_membership,
    radius_sq,
    residual_stat,
    xi_alpha,
)
from .estimator import Estimate, EstimatorConfig, NumericalError, auto_lambda, estimate
from .harness import (
    CalibrationError,
    CellRecord,
    CoverageReport,
    ExperimentGrid,
    GridCell,
    TrialRecord,
    calibrate_C,
    calibrate_z,
    default_grid,
    diameter_scaling_report,
    evaluate_cell,
    report_csv,
    report_json,
    run_cell,
    run_grid,
    simulate_grid,
)
from .model import (
    GenerationError,
    GroundTruth,
    ModelParams,
    NoiseSpec,
    Observation,
    gen_low_rank,
    minimax_rate,
    sample_observation,
)
from .selection import RankProjection, Selection, project_rank, select_rank

__version__ = "0.1.0"

__all__ = [
    "CalibrationError",
    "CellRecord",
    "ConfSetConstants",
    "ConfidenceSet",
    "CoverageReport",
    "Estimate",
    "EstimatorConfig",
    "ExperimentGrid",
    "GenerationError",
    "GridCell",
    "GroundTruth",
    "ModelParams",
    "NoiseSpec",
    "NumericalError",
    "Observation",
    "RankProjection",
    "Selection",
    "TrialRecord",
    "auto_lambda",
    "build_confset",
    "calibrate_C",
    "calibrate_z",
    "contains",
    "default_grid",
    "diameter_scaling_report",
    "diameter_sq",
    "estimate",
    "evaluate_cell",
    "gen_low_rank",
    "implicit_membership",
    "minimax_rate",
    "project_rank",
    "radius_sq",
    "report_csv",
    "report_json",
    "residual_stat",
    "run_cell",
    "run_grid",
    "sample_observation",
    "select_rank",
    "simulate_grid",
    "xi_alpha",
]
