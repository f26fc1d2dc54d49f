"""Rank-constrained projection of the pilot estimate and rank selection.

The selected rank is the smallest k whose projection residual
||Mhat - Mhat_k||_F^2 / (m1*m2) falls below the rate threshold r_k; the
projection Mhat_k approximates the closest matrix to Mhat with rank at
most k and entries bounded by a.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimator import Estimate, NumericalError
from .model import ModelParams, minimax_rate

# Entries of a projection may exceed the bound a by this relative amount
# (SVD reconstruction noise) and still count as feasible.
SUP_NORM_RTOL = 1e-9


@dataclass(frozen=True)
class RankProjection:
    """Nearest rank-k, sup-norm-bounded matrix to the pilot estimate.

    residual_sq is the squared Frobenius distance ||Mhat - matrix||_F^2,
    not normalized. sup_violation records max(0, ||matrix||_inf - a); it is
    zero whenever plain rank truncation already satisfies the entry bound.
    """

    matrix: np.ndarray
    k: int
    residual_sq: float
    sup_violation: float = 0.0


@dataclass(frozen=True)
class Selection:
    """Outcome of the rank scan.

    k_star      smallest admissible rank
    center      projection at k_star, the confidence-set center
    admissible  ranks that passed the residual test (only ranks up to
                k_star are evaluated; larger ranks pass mathematically
                since the residual only decreases while the threshold grows)
    residuals   tested (k, residual_sq) pairs in scan order
    thresholds  tested (k, r_k) pairs in scan order
    """

    k_star: int
    center: np.ndarray
    admissible: tuple[int, ...]
    residuals: tuple[tuple[int, float], ...]
    thresholds: tuple[tuple[int, float], ...]


def _truncate(U: np.ndarray, s: np.ndarray, Vt: np.ndarray, k: int) -> np.ndarray:
    if k == 0:
        return np.zeros((U.shape[0], Vt.shape[1]))
    return (U[:, :k] * s[:k]) @ Vt[:k]


def project_rank(est: Estimate, k: int, a: float, n_alt: int = 10) -> RankProjection:
    """Project the pilot estimate onto {rank <= k, entries in [-a, a]}.

    Alternates rank-k truncation with entrywise clamping, ending on the
    truncation so the rank bound holds exactly, and returns the feasible
    iterate closest to the estimate. When truncation alone stays inside
    the entry bound (the usual case, since the estimate is clamped) the
    first iterate is already the exact Frobenius-nearest rank-k matrix.
    """
    if k < 0:
        raise ValueError(f"rank must be nonnegative, got {k}")
    if a <= 0:
        raise ValueError(f"entry bound a must be positive, got {a}")
    if n_alt < 1:
        raise ValueError(f"need at least one alternation round, got {n_alt}")
    M = est.matrix
    if k == 0:
        return RankProjection(
            matrix=np.zeros_like(M), k=0, residual_sq=float(np.sum(M * M))
        )
    if k >= min(M.shape):
        return RankProjection(matrix=M.copy(), k=k, residual_sq=0.0)
    try:
        U, s, Vt = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD failed during projection: {exc}") from exc

    tol = SUP_NORM_RTOL * a
    best = None  # (residual_sq, matrix, violation)
    X = _truncate(U, s, Vt, k)
    for _ in range(n_alt):
        violation = max(0.0, float(np.abs(X).max()) - a)
        resid = float(np.sum((M - X) ** 2))
        if violation <= tol and (best is None or resid < best[0]):
            best = (resid, X, violation)
        clipped = np.clip(X, -a, a)
        if violation <= tol:
            break  # fixed point: clamping changes nothing further
        try:
            Uc, sc, Vtc = np.linalg.svd(clipped, full_matrices=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"SVD failed during projection: {exc}") from exc
        X = _truncate(Uc, sc, Vtc, k)
    if best is None:
        # no iterate met the bound within tolerance; report the last one
        best = (float(np.sum((M - X) ** 2)), X, max(0.0, float(np.abs(X).max()) - a))
    return RankProjection(matrix=best[1], k=k, residual_sq=best[0], sup_violation=best[2])


def select_rank(est: Estimate, params: ModelParams, C: float, a: float | None = None) -> Selection:
    """Scan k = 1..m and pick the first rank whose normalized projection
    residual falls below the rate threshold r_k.

    The test compares ||Mhat - Mhat_k||_F^2 / (m1*m2) against r_k, matching
    the normalization of the risk bound the thresholds are calibrated on.
    k = m always passes (zero residual), so the scan always terminates.

    One SVD of the estimate serves every rank: the rank-k truncation is the
    exact projection whenever it already satisfies the entry bound, which
    holds in all but pathological cases because the estimate is clamped.
    """
    a = params.a if a is None else a
    M = est.matrix
    m = params.m
    scale = params.m1 * params.m2
    try:
        U, s, Vt = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD failed during rank selection: {exc}") from exc
    # tail[k] = sum of squared singular values beyond the first k
    tail = np.zeros(m + 1)
    tail[:m] = np.cumsum((s * s)[::-1])[::-1]
    tol = SUP_NORM_RTOL * a

    residuals: list[tuple[int, float]] = []
    thresholds: list[tuple[int, float]] = []
    prev_resid = np.inf
    for k in range(1, m + 1):
        trunc = _truncate(U, s, Vt, k)
        if float(np.abs(trunc).max()) - a <= tol:
            proj = RankProjection(matrix=trunc, k=k, residual_sq=float(tail[k]))
        else:
            proj = project_rank(est, k, a)
        r_k = minimax_rate(k, params, C)
        residuals.append((k, proj.residual_sq))
        thresholds.append((k, r_k))
        if proj.residual_sq > prev_resid * (1 + 1e-9) + 1e-12:
            raise AssertionError(
                f"projection residual increased from rank {k - 1} to {k}: "
                f"{prev_resid} -> {proj.residual_sq}"
            )
        prev_resid = proj.residual_sq
        if proj.residual_sq / scale <= r_k:
            return Selection(
                k_star=k,
                center=proj.matrix,
                admissible=(k,),
                residuals=tuple(residuals),
                thresholds=tuple(thresholds),
            )
    raise AssertionError("rank scan fell through: k = m must always pass")
