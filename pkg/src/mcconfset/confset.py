"""Confidence set: residual statistic, constants, and the Frobenius ball.

The set is a ball around the selected-rank center Mtil. Membership of a
candidate M is defined implicitly by

    ||M - Mtil||_F^2 / (m1*m2)
        <= 128 * ( rhat + (a^2*z*d*kstar + zbar) / n + xi / sqrt(n) )

where zbar = (p/256) * ||M - Mtil||_F^2 + z*(U*Cstar)^2*d*kstar carries a
share of the candidate's own distance. Substituting p/n = 1/(m1*m2) and
moving that share to the left gives the equivalent explicit ball

    ||M - Mtil||_F^2 / (m1*m2)
        <= 256 * ( rhat + z*(a^2 + (U*Cstar)^2)*d*kstar / n + xi / sqrt(n) )

which is what radius_sq computes (floored at zero).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .model import ModelParams, Observation
from .selection import Selection

#: Universal constant lower bound for the masked-noise operator norm.
CSTAR_MIN = 2.0

#: Smallest admissible peeling constant in paper mode.
Z_PAPER_MIN = 6240.0


@dataclass(frozen=True)
class ConfSetConstants:
    """Constants entering the radius.

    mode "paper" uses the conservative universal constant z (validated
    against its theoretical floor); mode "calibrated" substitutes an
    empirically calibrated z_cal of the same functional form, sized so
    desk-scale coverage sits near the nominal level instead of at 1.
    """

    alpha: float
    mode: str = "paper"
    c_star: float = CSTAR_MIN
    z: float | None = None  # paper mode; None picks the smallest valid value
    z_cal: float = 0.0  # calibrated mode substitute for z

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.mode not in ("paper", "calibrated"):
            raise ValueError(f"mode must be 'paper' or 'calibrated', got {self.mode!r}")
        if self.c_star < CSTAR_MIN:
            raise ValueError(f"c_star must be at least {CSTAR_MIN}, got {self.c_star}")
        floor = self.z_floor(self.c_star)
        if self.z is None:
            object.__setattr__(self, "z", floor)
        elif self.z < floor:
            raise ValueError(
                f"paper-mode z must be at least max((27*c_star)^2, {Z_PAPER_MIN:g}) "
                f"= {floor:g}, got {self.z}"
            )
        if self.z_cal < 0:
            raise ValueError(f"z_cal must be nonnegative, got {self.z_cal}")

    @staticmethod
    def z_floor(c_star: float) -> float:
        return max((27.0 * c_star) ** 2, Z_PAPER_MIN)

    @property
    def z_effective(self) -> float:
        return self.z if self.mode == "paper" else self.z_cal


@dataclass(frozen=True)
class ConfidenceSet:
    """Frobenius ball around the rank-selected center.

    rho_sq is the squared radius of ||M - center||_F^2 / (m1*m2); the
    squared diameter is 4 * rho_sq.
    """

    center: np.ndarray
    k_star: int
    rho_sq: float
    constants: ConfSetConstants
    r_hat: float

    def contains(self, M: np.ndarray) -> bool:
        if M.shape != self.center.shape:
            raise ValueError(f"candidate shape {M.shape} does not match center {self.center.shape}")
        diff = M - self.center
        m1, m2 = self.center.shape
        return float(np.sum(diff * diff)) / (m1 * m2) <= self.rho_sq

    def diameter_sq(self) -> float:
        return 4.0 * self.rho_sq

    def to_record(self, include_center: bool = False) -> dict[str, Any]:
        """JSON-ready summary; the center matrix only on request."""
        rec: dict[str, Any] = {
            "k_star": self.k_star,
            "rho_sq": self.rho_sq,
            "r_hat": self.r_hat,
            "diameter_sq": self.diameter_sq(),
            "mode": self.constants.mode,
            "alpha": self.constants.alpha,
            "z": self.constants.z,
            "z_cal": self.constants.z_cal,
            "c_star": self.constants.c_star,
            "shape": list(self.center.shape),
        }
        if include_center:
            rec["center"] = self.center.tolist()
        return rec


def residual_stat(obs: Observation, center: np.ndarray, sigma: float, n: int) -> float:
    """Centered average squared residual on the observed entries.

    (1/n) * sum_ij (Y_ij - B_ij * center_ij)^2 - sigma^2, where the divisor
    is the expected count n, not the realized one. Unbiased for
    ||truth - center||_F^2 / (m1*m2) when the center is independent of the
    observation.
    """
    if center.shape != obs.shape:
        raise ValueError(f"center shape {center.shape} does not match observation {obs.shape}")
    resid = obs.values - obs.mask * center
    return float(np.sum(resid * resid)) / n - sigma * sigma


def xi_alpha(alpha: float, U: float, n: int) -> float:
    """Bernstein tail allowance 2*U^2*sqrt(log(1/alpha)) + 4*U^2*log(1/alpha)/(3*sqrt(n))."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if U < 0:
        raise ValueError(f"noise bound U must be nonnegative, got {U}")
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    log_inv = math.log(1.0 / alpha)
    return 2.0 * U * U * math.sqrt(log_inv) + 4.0 * U * U * log_inv / (3.0 * math.sqrt(n))


def radius_sq(r_hat: float, k_star: int, params: ModelParams, consts: ConfSetConstants) -> float:
    """Squared radius of the explicit ball, floored at zero.

    r_hat may be negative (noise fluctuation); the floor keeps the squared
    radius a squared radius.
    """
    if k_star < 0:
        raise ValueError(f"selected rank must be nonnegative, got {k_star}")
    z = consts.z_effective
    xi = xi_alpha(consts.alpha, params.U, params.n)
    const_term = (
        z * (params.a ** 2 + (params.U * consts.c_star) ** 2) * params.d * k_star / params.n
    )
    return max(0.0, 256.0 * (r_hat + const_term + xi / math.sqrt(params.n)))


def implicit_membership(
    M: np.ndarray,
    center: np.ndarray,
    r_hat: float,
    k_star: int,
    params: ModelParams,
    consts: ConfSetConstants,
) -> bool:
    """Evaluate the defining inequality directly, with the candidate's own
    distance inside the zbar term. Used to cross-check radius_sq."""
    diff = M - center
    dist_sq = float(np.sum(diff * diff))
    z = consts.z_effective
    zbar = params.p / 256.0 * dist_sq + z * (params.U * consts.c_star) ** 2 * params.d * k_star
    xi = xi_alpha(consts.alpha, params.U, params.n)
    rhs = 128.0 * (
        r_hat
        + (params.a ** 2 * z * params.d * k_star + zbar) / params.n
        + xi / math.sqrt(params.n)
    )
    return dist_sq / (params.m1 * params.m2) <= rhs


def build_confset(
    obs: Observation, sel: Selection, params: ModelParams, consts: ConfSetConstants
) -> ConfidenceSet:
    """Assemble the ball: residual statistic against the selected center,
    then the explicit squared radius."""
    r_hat = residual_stat(obs, sel.center, params.sigma, params.n)
    rho = radius_sq(r_hat, sel.k_star, params, consts)
    return ConfidenceSet(
        center=sel.center, k_star=sel.k_star, rho_sq=rho, constants=consts, r_hat=r_hat
    )


def contains(cs: ConfidenceSet, M: np.ndarray) -> bool:
    return cs.contains(M)


def diameter_sq(cs: ConfidenceSet) -> float:
    return cs.diameter_sq()
