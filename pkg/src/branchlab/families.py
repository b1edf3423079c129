"""Single-coordinate offspring count distributions.

Each family knows its generating function, low-order moments, a
cancellation-free survival form, a cancellation-free difference form,
and how to draw the sum of ``z`` independent copies in one call.

The survival form ``survival(d) = 1 - pgf(1 - d)`` and the difference
form ``pgf_diff(da, delta) = pgf(a) - pgf(b)`` (with ``a = 1 - da`` and
``b = a - delta``) are the primitives the exact engine is built on:
both stay accurate when their inputs are 1e-300-sized, where the naive
expressions would return zero or noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .numerics import power_diff


@dataclass(frozen=True)
class Geometric:
    """Geometric law on {0, 1, 2, ...} parameterised by its mean.

    pgf(s) = 1 / (1 + mean * (1 - s)); variance = mean * (1 + mean).
    """

    mean: float

    def __post_init__(self):
        if not (self.mean > 0.0 and math.isfinite(self.mean)):
            raise ValueError(f"geometric mean must be positive, got {self.mean}")

    def pgf(self, s: float) -> float:
        return 1.0 / (1.0 + self.mean * (1.0 - s))

    def survival(self, d: float) -> float:
        md = self.mean * d
        return md / (1.0 + md)

    def pgf_diff(self, da: float, delta: float) -> float:
        m = self.mean
        return m * delta / ((1.0 + m * da) * (1.0 + m * (da + delta)))

    @property
    def variance(self) -> float:
        return self.mean * (1.0 + self.mean)

    @property
    def second_factorial_moment(self) -> float:
        return 2.0 * self.mean * self.mean

    def sample_sum(self, z: int, rng) -> int:
        if z == 0:
            return 0
        # sum of z geometrics = negative binomial with z successes
        p = 1.0 / (1.0 + self.mean)
        return int(rng.negative_binomial(z, p))


@dataclass(frozen=True)
class Poisson:
    """Poisson law; pgf(s) = exp(mean * (s - 1))."""

    mean: float

    def __post_init__(self):
        if not (self.mean > 0.0 and math.isfinite(self.mean)):
            raise ValueError(f"poisson mean must be positive, got {self.mean}")

    def pgf(self, s: float) -> float:
        return math.exp(self.mean * (s - 1.0))

    def survival(self, d: float) -> float:
        return -math.expm1(-self.mean * d)

    def pgf_diff(self, da: float, delta: float) -> float:
        # exp(-m*da) - exp(-m*(da+delta)), both exponents <= 0
        return math.exp(-self.mean * da) * -math.expm1(-self.mean * delta)

    @property
    def variance(self) -> float:
        return self.mean

    @property
    def second_factorial_moment(self) -> float:
        return self.mean * self.mean

    def sample_sum(self, z: int, rng) -> int:
        if z == 0:
            return 0
        return int(rng.poisson(self.mean * z))


@dataclass(frozen=True)
class Bernoulli:
    """Bernoulli law on {0, 1}; pgf(s) = 1 - p + p * s."""

    p: float

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0):
            raise ValueError(f"bernoulli parameter must be in [0,1], got {self.p}")

    def pgf(self, s: float) -> float:
        return 1.0 - self.p + self.p * s

    def survival(self, d: float) -> float:
        return self.p * d

    def pgf_diff(self, da: float, delta: float) -> float:
        return self.p * delta

    @property
    def mean(self) -> float:
        return self.p

    @property
    def variance(self) -> float:
        return self.p * (1.0 - self.p)

    @property
    def second_factorial_moment(self) -> float:
        return 0.0

    def sample_sum(self, z: int, rng) -> int:
        if z == 0:
            return 0
        return int(rng.binomial(z, self.p))


@dataclass(frozen=True)
class PointMass:
    """Deterministic count; pgf(s) = s ** k."""

    k: int

    def __post_init__(self):
        if not (isinstance(self.k, int) and self.k >= 0):
            raise ValueError(f"point mass needs a nonnegative integer, got {self.k}")

    def pgf(self, s: float) -> float:
        return s**self.k

    def survival(self, d: float) -> float:
        if self.k == 0:
            return 0.0
        if d >= 1.0:
            return 1.0
        return -math.expm1(self.k * math.log1p(-d))

    def pgf_diff(self, da: float, delta: float) -> float:
        a = 1.0 - da
        return power_diff(a, delta, self.k)

    @property
    def mean(self) -> float:
        return float(self.k)

    @property
    def variance(self) -> float:
        return 0.0

    @property
    def second_factorial_moment(self) -> float:
        return float(self.k * (self.k - 1))

    def sample_sum(self, z: int, rng) -> int:
        return z * self.k


Marginal = Geometric | Poisson | Bernoulli | PointMass

_FAMILY_TAGS = {
    Geometric: "geometric",
    Poisson: "poisson",
    Bernoulli: "bernoulli",
    PointMass: "pointmass",
}


def family_tag(marginal: Marginal) -> str:
    """Short config-file tag for a marginal family."""
    return _FAMILY_TAGS[type(marginal)]


def marginal_from_config(family: str, params: dict) -> Marginal:
    """Build a marginal from its config-file representation."""
    if family == "geometric":
        return Geometric(float(params["mean"]))
    if family == "poisson":
        return Poisson(float(params["mean"]))
    if family == "bernoulli":
        return Bernoulli(float(params["p"]))
    if family == "pointmass":
        return PointMass(int(params["k"]))
    raise ValueError(f"unknown family '{family}'")
