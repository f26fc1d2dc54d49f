"""Pilot estimator: projected proximal-gradient singular value thresholding.

Minimizes  0.5 * ||B o (X - Y)||_F^2 / p  +  lam * ||X||_*  subject to
|X_ij| <= a, by iterating

    X  <-  clip( SVT_{lam*step}( X - step * (B o X - Y) / p ), a )

where SVT_t soft-thresholds singular values by t and clip clamps entries
to [-a, a]. The clamp runs every iteration, so the output satisfies the
sup-norm bound unconditionally.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelParams, Observation


class NumericalError(RuntimeError):
    """Iterate became non-finite; usually signals a divergent step size."""


@dataclass(frozen=True)
class EstimatorConfig:
    """Tuning of the thresholding loop.

    lam    nuclear-norm weight, or "auto" for auto_lambda(params)
    step   gradient step on the p-rescaled loss, or "auto" for step = p
           (the largest step with guaranteed descent; the loss gradient is
           (1/p)-Lipschitz, so any fixed step above p can oscillate)
    """

    lam: float | str = "auto"
    step: float | str = "auto"
    max_iters: int = 300
    tol: float = 1e-6
    clip: float | None = None  # None: use params.a

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be at least 1, got {self.max_iters}")
        if self.tol <= 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if isinstance(self.lam, str) and self.lam != "auto":
            raise ValueError(f"lam must be a positive number or 'auto', got {self.lam!r}")
        if isinstance(self.lam, float | int) and self.lam < 0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")
        if isinstance(self.step, str) and self.step != "auto":
            raise ValueError(f"step must be a positive number or 'auto', got {self.step!r}")
        if isinstance(self.step, float | int) and self.step <= 0:
            raise ValueError(f"step must be positive, got {self.step}")


@dataclass(frozen=True)
class Estimate:
    """Output of the thresholding loop. |matrix| <= a entrywise, always."""

    matrix: np.ndarray
    iters_used: int
    converged: bool
    objectives: np.ndarray  # objective after each SVT step, before the clamp


def auto_lambda(params: ModelParams) -> float:
    """Order-of-magnitude tuning 3 * (sigma + a) * sqrt(p * d).

    Scales like the operator norm of the masked noise, which grows as
    sqrt(p * d); exposed so experiments can sweep around it.
    """
    return 3.0 * (params.sigma + params.a) * np.sqrt(params.p * params.d)


def _svt(G: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Soft-threshold singular values by tau; returns matrix and kept values."""
    if not np.isfinite(G).all():
        raise NumericalError("non-finite iterate; step size likely too large")
    try:
        U, s, Vt = np.linalg.svd(G, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD failed during thresholding: {exc}") from exc
    kept = s - tau
    nz = kept > 0
    if not nz.any():
        return np.zeros_like(G), kept[:0]
    return (U[:, nz] * kept[nz]) @ Vt[nz], kept[nz]


def objective(X: np.ndarray, obs: Observation, params: ModelParams, lam: float) -> float:
    """0.5 * ||B o (X - Y)||^2 / p + lam * ||X||_*."""
    resid = obs.mask * X - obs.values
    nuc = np.linalg.svd(X, compute_uv=False).sum()
    return 0.5 * float(np.sum(resid * resid)) / params.p + lam * float(nuc)


def estimate(obs: Observation, params: ModelParams, cfg: EstimatorConfig | None = None) -> Estimate:
    """Run the thresholding loop from X = 0 until the relative Frobenius
    change drops below cfg.tol or cfg.max_iters is reached."""
    cfg = cfg or EstimatorConfig()
    if obs.shape != (params.m1, params.m2):
        raise ValueError(
            f"observation shape {obs.shape} does not match params ({params.m1}, {params.m2})"
        )
    lam = auto_lambda(params) if cfg.lam == "auto" else float(cfg.lam)
    step = params.p if cfg.step == "auto" else float(cfg.step)
    a = params.a if cfg.clip is None else float(cfg.clip)
    grad_scale = step / params.p

    X = np.zeros_like(obs.values)
    objs = []
    converged = False
    iters = 0
    for iters in range(1, cfg.max_iters + 1):
        G = X - grad_scale * (obs.mask * X - obs.values)
        X_new, kept = _svt(G, lam * step)
        # objective before clamping: data term plus lam * sum of kept values
        resid = obs.mask * X_new - obs.values
        objs.append(0.5 * float(np.sum(resid * resid)) / params.p + lam * float(kept.sum()))
        np.clip(X_new, -a, a, out=X_new)
        delta = float(np.linalg.norm(X_new - X))
        scale = max(float(np.linalg.norm(X_new)), np.finfo(float).tiny)
        X = X_new
        if delta <= cfg.tol * scale:
            converged = True
            break
    return Estimate(matrix=X, iters_used=iters, converged=converged, objectives=np.array(objs))
