"""Renyi-DP curves: per-mechanism construction, composition, conversion.

A curve maps each order alpha > 1 on a grid to a privacy value eps_alpha
(possibly +inf).  Gaussian releases have the closed form
``alpha * Delta^2 / (2 sigma^2)``; a Poisson-subsampled Gaussian step at
integer order alpha has the binomial bound

    (1/(alpha-1)) * log( sum_k C(alpha,k) (1-q)^(alpha-k) q^k
                         * exp(k(k-1)/(2 sigma^2)) )

under the add/remove neighboring convention.  Curves compose additively
and convert to (eps, delta) by minimizing
``eps_alpha + log(1/delta)/(alpha-1)`` over the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from .core import (
    INF,
    AllInfinite,
    DpSgdMechanism,
    GaussianMechanism,
    GridMismatch,
    MechanismSpec,
    OrderGrid,
)


@dataclass(frozen=True)
class RdpCurve:
    """Privacy values eps_alpha aligned with an order grid."""

    grid: OrderGrid
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) != len(self.grid):
            raise ValueError("values must align with the order grid")
        if any(v < 0 for v in self.values):
            raise ValueError("Renyi values must be >= 0")

    def __len__(self) -> int:
        return len(self.values)


class DpConversion(NamedTuple):
    eps: float
    alpha: float


def gaussian_rdp_curve(spec: GaussianMechanism, grid: OrderGrid) -> RdpCurve:
    """Closed-form curve of a single Gaussian release."""
    ratio_sq = (spec.sensitivity / spec.noise_std) ** 2
    return RdpCurve(grid, tuple(a * ratio_sq / 2.0 for a in grid.orders))


def _log_binomial_moment(q: float, sigma: float, alpha: int) -> float:
    """log sum_k C(alpha,k) (1-q)^(alpha-k) q^k exp(k(k-1)/(2 sigma^2))."""
    k = np.arange(alpha + 1, dtype=float)
    log_binom = gammaln(alpha + 1) - gammaln(k + 1) - gammaln(alpha - k + 1)
    if q > 0:
        log_q = k * math.log(q)
    else:
        log_q = np.where(k > 0, -np.inf, 0.0)
    if q < 1:
        log_1mq = (alpha - k) * math.log1p(-q)
    else:
        log_1mq = np.where(alpha - k > 0, -np.inf, 0.0)
    log_terms = log_binom + log_q + log_1mq + k * (k - 1) / (2.0 * sigma**2)
    return float(logsumexp(log_terms))


def subsampled_gaussian_rdp_curve(
    q: float, sigma: float, grid: OrderGrid
) -> RdpCurve:
    """Curve of one Poisson-subsampled Gaussian step at integer orders."""
    if not 0 <= q <= 1:
        raise ValueError("sampling rate must lie in [0, 1]")
    if sigma <= 0:
        raise ValueError("noise multiplier must be > 0")
    if any(a != int(a) or a < 2 for a in grid.orders):
        raise ValueError("subsampled accounting requires integer orders >= 2")
    if q == 0:
        return RdpCurve(grid, (0.0,) * len(grid))
    values = tuple(
        max(0.0, _log_binomial_moment(q, sigma, int(a)) / (a - 1.0))
        for a in grid.orders
    )
    return RdpCurve(grid, values)


def compose_rdp(curves: Sequence[RdpCurve]) -> RdpCurve:
    """Pointwise sum of curves on a common grid; +inf absorbs."""
    if len(curves) == 0:
        raise ValueError("need at least one curve")
    grid = curves[0].grid
    for c in curves[1:]:
        if c.grid != grid:
            raise GridMismatch("curves must share one order grid")
    values = tuple(
        math.fsum(c.values[i] for c in curves) for i in range(len(grid))
    )
    return RdpCurve(grid, values)


def zero_curve(grid: OrderGrid) -> RdpCurve:
    return RdpCurve(grid, (0.0,) * len(grid))


def rdp_to_dp(curve: RdpCurve, delta: float) -> DpConversion:
    """Convert a curve to the best (eps, delta) over its grid.

    Returns the minimizing order alongside eps for diagnostics.  Raises
    AllInfinite when no order carries a finite value.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    log_inv = math.log(1.0 / delta)
    best_eps = INF
    best_alpha = None
    for a, v in zip(curve.grid.orders, curve.values):
        if v == INF:
            continue
        cand = v + log_inv / (a - 1.0)
        if cand < best_eps:
            best_eps = cand
            best_alpha = a
    if best_alpha is None:
        raise AllInfinite("every order carries an infinite value")
    return DpConversion(best_eps, best_alpha)


def curve_for_spec(spec: MechanismSpec, grid: OrderGrid) -> RdpCurve:
    """Per-model curve: closed form for Gaussian releases, the composed
    per-step subsampled bound for DP-SGD runs."""
    if isinstance(spec, GaussianMechanism):
        return gaussian_rdp_curve(spec, grid)
    if isinstance(spec, DpSgdMechanism):
        total = np.zeros(len(grid))
        cache: dict[tuple[float, float], np.ndarray] = {}
        for t in range(spec.steps):
            key = (spec.sampling_rates[t], spec.noise_multipliers[t])
            if key not in cache:
                cache[key] = np.asarray(
                    subsampled_gaussian_rdp_curve(key[0], key[1], grid).values
                )
            total = total + cache[key]
        return RdpCurve(grid, tuple(float(v) for v in total))
    raise TypeError(f"unsupported mechanism spec {type(spec)!r}")
