"""Shared domain types, simplex arithmetic, and guarantee comparison.

Every accountant in this package works with the types defined here:
(eps, delta) guarantees, points on the probability simplex, grids of
Renyi orders, and mechanism hyperparameter records.

Infinite privacy values (a fully non-private model) are represented by
``math.inf``.  Weighted mixtures must respect the convention
``0 * inf == 0`` so that zero-weight non-private models drop out; use
:func:`scale_eps` instead of a bare multiplication.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence, Union

import numpy as np

SIMPLEX_TOL = 1e-12

INF = math.inf


# ---------------------------------------------------------------------------
# Errors shared across modules.
# ---------------------------------------------------------------------------


class DpMergeError(Exception):
    """Base class for all errors raised by this package."""


class NegativeWeight(DpMergeError, ValueError):
    """A merge weight was negative."""


class ZeroMass(DpMergeError, ValueError):
    """All merge weights were zero."""


class GridMismatch(DpMergeError, ValueError):
    """Curves do not share a common order grid."""


class AllInfinite(DpMergeError, ArithmeticError):
    """Every Renyi value is infinite; no finite conversion exists."""


class SpacingMismatch(DpMergeError, ValueError):
    """Loss distributions do not share a common grid spacing."""


class Unreachable(DpMergeError, ArithmeticError):
    """No finite epsilon attains the requested delta."""


class CorrelatedInputs(DpMergeError, ValueError):
    """Linear-combination accounting requires independent noise; it does
    not apply to checkpoints recycled from a single run."""


class DegenerateNoise(DpMergeError, ValueError):
    """A step mixes a positive shift with zero noise."""


class EnumerationCapExceeded(DpMergeError, RuntimeError):
    """The composition enumeration would exceed the configured cap."""

    def __init__(self, required: int, cap: int, alpha: int, n_models: int):
        self.required = required
        self.cap = cap
        self.alpha = alpha
        self.n_models = n_models
        super().__init__(
            f"enumeration needs |N_alpha| = {required} terms at alpha={alpha}, "
            f"N={n_models}; cap is {cap}"
        )


class DimensionMismatch(DpMergeError, ValueError):
    """Parameter vectors have incompatible shapes."""


class DeltaTooLarge(DpMergeError, ValueError):
    """Advanced composition requires a per-release delta below 1/2."""


class QuadratureFailure(DpMergeError, ArithmeticError):
    """Numerical quadrature could not reach the requested accuracy."""


class ConfigError(DpMergeError, ValueError):
    """A run configuration failed schema validation."""


# ---------------------------------------------------------------------------
# Guarantees and weights.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DpGuarantee:
    """An (eps, delta) differential-privacy guarantee."""

    eps: float
    delta: float

    def __post_init__(self):
        if not self.eps >= 0:
            raise ValueError(f"eps must be >= 0, got {self.eps}")
        if not 0 <= self.delta <= 1:
            raise ValueError(f"delta must be in [0, 1], got {self.delta}")


def dominates(a: DpGuarantee, b: DpGuarantee) -> bool:
    """True iff guarantee ``a`` is at least as strong as ``b`` in both
    parameters."""
    return a.eps <= b.eps and a.delta <= b.delta


@dataclass(frozen=True)
class MergeWeights:
    """A point on the probability simplex (mixing weights over N models)."""

    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) < 1:
            raise ValueError("weights must be nonempty")
        if any(v < 0 for v in self.values):
            raise NegativeWeight(f"negative entry in {self.values}")
        if abs(sum(self.values) - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"weights must sum to 1, got {sum(self.values)}")

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i: int) -> float:
        return self.values[i]

    def __iter__(self):
        return iter(self.values)


def validate_weights(raw: Sequence[float]) -> MergeWeights:
    """Normalize a nonnegative vector onto the simplex.

    Raises NegativeWeight on any negative entry and ZeroMass when the
    vector sums to zero.
    """
    if len(raw) == 0:
        raise ValueError("weights must be nonempty")
    raw = [float(v) for v in raw]
    if any(v < 0 for v in raw):
        raise NegativeWeight(f"negative entry in {raw}")
    total = math.fsum(raw)
    if total == 0.0:
        raise ZeroMass("weights sum to zero")
    if abs(total - 1.0) <= SIMPLEX_TOL:
        # Already on the simplex: keep entries bit-exact so repeated
        # validation is a fixed point.
        return MergeWeights(tuple(raw))
    return MergeWeights(tuple(v / total for v in raw))


# ---------------------------------------------------------------------------
# Order grids.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OrderGrid:
    """A strictly increasing grid of Renyi orders, all > 1."""

    orders: tuple[float, ...]
    integer_only: bool = False

    def __post_init__(self):
        if len(self.orders) == 0:
            raise ValueError("order grid must be nonempty")
        if any(a <= 1 for a in self.orders):
            raise ValueError("all orders must exceed 1")
        if any(b <= a for a, b in zip(self.orders, self.orders[1:])):
            raise ValueError("orders must be strictly increasing")
        if self.integer_only and any(
            a != int(a) or a < 2 for a in self.orders
        ):
            raise ValueError("integer grid requires integer orders >= 2")

    def __len__(self) -> int:
        return len(self.orders)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.orders, dtype=float)


def default_order_grid() -> OrderGrid:
    """Fractional orders plus integers 2..64; suits pure-Gaussian curves."""
    return OrderGrid((1.25, 1.5, 1.75) + tuple(float(a) for a in range(2, 65)))


def integer_order_grid(max_order: int = 64) -> OrderGrid:
    """Integers 2..max_order; required by per-step mixture accounting."""
    return OrderGrid(
        tuple(float(a) for a in range(2, max_order + 1)), integer_only=True
    )


# ---------------------------------------------------------------------------
# Mechanism hyperparameters.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianMechanism:
    """One Gaussian release: N(f(D), noise_std^2) with l2 sensitivity."""

    sensitivity: float
    noise_std: float

    def __post_init__(self):
        if self.sensitivity < 0:
            raise ValueError("sensitivity must be >= 0")
        if self.noise_std <= 0:
            raise ValueError("noise_std must be > 0")


@dataclass(frozen=True)
class DpSgdMechanism:
    """A DP-SGD run: per-step Poisson rate, clip norm, noise multiplier,
    and learning rate, plus a flag recording whether the noise draws are
    independent of every other candidate model's."""

    sampling_rates: tuple[float, ...]
    clip_norms: tuple[float, ...]
    noise_multipliers: tuple[float, ...]
    learning_rates: tuple[float, ...]
    independent_noise: bool = True

    def __post_init__(self):
        T = len(self.sampling_rates)
        for name in ("clip_norms", "noise_multipliers", "learning_rates"):
            if len(getattr(self, name)) != T:
                raise ValueError(f"{name} must have length {T}")
        if any(not 0 <= q <= 1 for q in self.sampling_rates):
            raise ValueError("sampling rates must lie in [0, 1]")
        if any(c <= 0 for c in self.clip_norms):
            raise ValueError("clip norms must be > 0")
        if any(s <= 0 for s in self.noise_multipliers):
            raise ValueError("noise multipliers must be > 0")
        if any(e < 0 for e in self.learning_rates):
            raise ValueError("learning rates must be >= 0")

    @property
    def steps(self) -> int:
        return len(self.sampling_rates)

    @classmethod
    def constant(
        cls,
        steps: int,
        sampling_rate: float,
        clip_norm: float,
        noise_multiplier: float,
        learning_rate: float,
        independent_noise: bool = True,
    ) -> "DpSgdMechanism":
        """A run with the same hyperparameters at every step."""
        if steps < 0:
            raise ValueError("steps must be >= 0")
        return cls(
            (sampling_rate,) * steps,
            (clip_norm,) * steps,
            (noise_multiplier,) * steps,
            (learning_rate,) * steps,
            independent_noise,
        )


MechanismSpec = Union[GaussianMechanism, DpSgdMechanism]


# ---------------------------------------------------------------------------
# Infinity-aware arithmetic and simplex enumeration.
# ---------------------------------------------------------------------------


def scale_eps(weight: float, eps: float) -> float:
    """weight * eps under the 0 * inf == 0 convention."""
    if weight == 0.0:
        return 0.0
    return weight * eps


@lru_cache(maxsize=None)
def compositions(total: int, parts: int) -> np.ndarray:
    """All nonnegative integer vectors of length ``parts`` summing to
    ``total``, in ascending lexicographic order.

    Returns an array of shape (C(total+parts-1, parts-1), parts).
    """
    if parts < 1:
        raise ValueError("parts must be >= 1")
    if parts == 1:
        out = np.array([[total]], dtype=np.int64)
    else:
        blocks = []
        for first in range(total + 1):
            rest = compositions(total - first, parts - 1)
            head = np.full((rest.shape[0], 1), first, dtype=np.int64)
            blocks.append(np.hstack([head, rest]))
        out = np.vstack(blocks)
    out.setflags(write=False)
    return out


def simplex_lattice(n: int, resolution: float) -> list[MergeWeights]:
    """The simplex lattice {k/m : k in Z^n, sum k = m} with m = 1/resolution.

    ``resolution`` must divide 1 into an integer number of cells.  Points
    come out in ascending lexicographic order, so sweeps are deterministic.
    """
    if n < 1:
        raise ValueError("need at least one model")
    m = round(1.0 / resolution)
    if m < 1 or abs(m * resolution - 1.0) > 1e-9:
        raise ValueError(f"resolution {resolution} does not divide 1 evenly")
    grid = compositions(m, n)
    return [MergeWeights(tuple(row / m)) for row in grid]
