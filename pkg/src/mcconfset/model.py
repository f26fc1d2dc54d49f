"""Statistical model: Bernoulli-masked noisy observations of a low-rank matrix.

Every entry of the truth is observed independently with probability
p = n / (m1*m2) and corrupted by centered bounded noise, so an observation
is a pair (mask, values) with values = mask * (truth + noise).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

Seed = int | list[int] | tuple[int, ...]


class GenerationError(RuntimeError):
    """Ground-truth generation produced a degenerate matrix."""


@dataclass(frozen=True)
class ModelParams:
    """Problem dimensions and noise bounds shared by the whole pipeline.

    m1, m2   matrix shape
    n        expected number of observed entries (n <= m1*m2)
    a        entrywise bound on the truth: |M0_ij| <= a
    sigma    noise standard deviation
    U        almost-sure noise bound, U >= sigma
    """

    m1: int
    m2: int
    n: int
    a: float
    sigma: float
    U: float

    def __post_init__(self):
        if self.m1 < 1 or self.m2 < 1:
            raise ValueError(f"matrix shape must be positive, got {self.m1}x{self.m2}")
        if not 1 <= self.n <= self.m1 * self.m2:
            raise ValueError(f"need 1 <= n <= m1*m2, got n={self.n}")
        if self.a <= 0:
            raise ValueError(f"entry bound a must be positive, got {self.a}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")
        if self.U < self.sigma:
            raise ValueError(
                f"noise bound U={self.U} below its standard deviation {self.sigma}: "
                "a bounded centered variable cannot have sd exceeding its bound"
            )

    @property
    def p(self) -> float:
        """Per-entry observation probability, in (0, 1]."""
        return self.n / (self.m1 * self.m2)

    @property
    def d(self) -> int:
        return self.m1 + self.m2

    @property
    def m(self) -> int:
        return min(self.m1, self.m2)

    @classmethod
    def from_noise(cls, m1: int, m2: int, n: int, a: float, noise: "NoiseSpec") -> "ModelParams":
        return cls(m1=m1, m2=m2, n=n, a=a, sigma=noise.sigma, U=noise.U)


@dataclass(frozen=True)
class NoiseSpec:
    """Centered, bounded, homoscedastic noise distribution.

    Two built-in kinds:
      rademacher  +/- sigma with equal probability, bound U = sigma
      uniform     uniform(-sqrt(3)*sigma, sqrt(3)*sigma), bound U = sqrt(3)*sigma
    """

    kind: str
    sigma: float

    KINDS = ("rademacher", "uniform")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}, expected one of {self.KINDS}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")

    @property
    def U(self) -> float:
        if self.kind == "rademacher":
            return self.sigma
        return math.sqrt(3.0) * self.sigma

    def sample(self, rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
        if self.kind == "rademacher":
            return self.sigma * np.where(rng.random(shape) < 0.5, -1.0, 1.0)
        half = math.sqrt(3.0) * self.sigma
        return rng.uniform(-half, half, size=shape)


@dataclass(frozen=True)
class GroundTruth:
    """A matrix from the rank/sup-norm class together with how it was made."""

    matrix: np.ndarray
    k0: int
    a: float

    def __post_init__(self):
        if self.matrix.ndim != 2:
            raise ValueError("ground truth must be a matrix")
        if not np.isfinite(self.matrix).all():
            raise ValueError("ground truth contains non-finite entries")


@dataclass(frozen=True)
class Observation:
    """Bernoulli mask and masked noisy values; values are zero off the mask."""

    mask: np.ndarray
    values: np.ndarray
    n_observed: int = field(default=-1)

    def __post_init__(self):
        if self.mask.shape != self.values.shape:
            raise ValueError("mask and values must share a shape")
        if self.n_observed < 0:
            object.__setattr__(self, "n_observed", int(self.mask.sum()))

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape


def _rng(seed: Seed) -> np.random.Generator:
    # SeedSequence mixing keeps streams independent across structured seeds
    # like (base, cell, trial), so parallel trials never share a stream.
    return np.random.default_rng(np.random.SeedSequence(seed))


def gen_low_rank(m1: int, m2: int, k0: int, a: float, seed: Seed) -> GroundTruth:
    """Draw a rank-k0 truth with entrywise max exactly a.

    The matrix is a product L @ R.T of factors with iid uniform(-1, 1)
    entries, rescaled so that max |entry| = a. Deterministic given seed.
    """
    if not 1 <= k0 <= min(m1, m2):
        raise ValueError(f"need 1 <= k0 <= min(m1, m2)={min(m1, m2)}, got k0={k0}")
    if a <= 0:
        raise ValueError(f"entry bound a must be positive, got {a}")
    rng = _rng(seed)
    L = rng.uniform(-1.0, 1.0, size=(m1, k0))
    R = rng.uniform(-1.0, 1.0, size=(m2, k0))
    M = L @ R.T
    peak = np.abs(M).max()
    if peak == 0.0:
        raise GenerationError("factor product is identically zero")
    M *= a / peak
    return GroundTruth(matrix=M, k0=k0, a=a)


def sample_observation(
    truth: GroundTruth, params: ModelParams, noise: NoiseSpec, seed: Seed
) -> Observation:
    """Observe each entry independently with probability p, plus noise."""
    if truth.matrix.shape != (params.m1, params.m2):
        raise ValueError(
            f"truth shape {truth.matrix.shape} does not match params "
            f"({params.m1}, {params.m2})"
        )
    if noise.sigma != params.sigma:
        raise ValueError(
            f"noise sigma {noise.sigma} disagrees with params.sigma {params.sigma}"
        )
    rng = _rng(seed)
    shape = truth.matrix.shape
    mask = (rng.random(shape) < params.p).astype(float)
    eps = noise.sample(rng, shape)
    values = mask * (truth.matrix + eps)
    return Observation(mask=mask, values=values)


def minimax_rate(k: int, params: ModelParams, C: float) -> float:
    """Rate proxy C * (sigma + a)^2 * d * k / n used as the selection threshold."""
    if k < 0:
        raise ValueError(f"rank must be nonnegative, got {k}")
    if C <= 0:
        raise ValueError(f"rate constant must be positive, got {C}")
    return C * (params.sigma + params.a) ** 2 * params.d * k / params.n
