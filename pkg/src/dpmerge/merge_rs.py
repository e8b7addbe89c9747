"""Random-selection merging and its accountants.

Random selection publishes model I with probability pi_I, independent of
the data.  Its Renyi curve is bounded by the log-sum-exp mixture

    eps_alpha(pi) <= (1/(alpha-1)) log( sum_i pi_i e^{(alpha-1) eps_{alpha,i}} )

and its delta(eps) by the convex combinations of the per-model
hockey-stick divergences, direction by direction, taking the max last.
Feasibility sweeps enumerate a simplex lattice and keep the weights whose
certified guarantee meets the target.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .core import (
    INF,
    AllInfinite,
    DpGuarantee,
    DpSgdMechanism,
    GridMismatch,
    MechanismSpec,
    MergeWeights,
    OrderGrid,
    Unreachable,
    default_order_grid,
    integer_order_grid,
    simplex_lattice,
)
from .pld import DEFAULT_SPACING, DEFAULT_TAIL_MASS, PldPair, _delta_minus, _delta_plus, pld_for_spec
from .rdp import RdpCurve, curve_for_spec, rdp_to_dp


class Accountant(Enum):
    RDP = "rdp"
    PLD = "pld"


@dataclass(frozen=True)
class RsCandidate:
    """A certified selection-weight candidate."""

    weights: MergeWeights
    eps: float
    accountant: Accountant

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("certified eps must be >= 0")


def rs_rdp_curve(curves: Sequence[RdpCurve], pi: MergeWeights) -> RdpCurve:
    """Mixture curve over the nonzero-weight models.

    Zero-weight models are dropped before the log-sum-exp, so a
    non-private model with weight zero cannot poison the result.
    """
    if len(curves) != len(pi):
        raise ValueError("one curve per weight")
    grid = curves[0].grid
    for c in curves[1:]:
        if c.grid != grid:
            raise GridMismatch("curves must share one order grid")
    active = [(w, c) for w, c in zip(pi, curves) if w > 0]
    log_pi = np.log([w for w, _ in active])
    values = []
    for j, a in enumerate(grid.orders):
        eps_j = np.array([c.values[j] for _, c in active])
        if np.any(np.isinf(eps_j)):
            values.append(INF)
            continue
        values.append(
            max(0.0, float(logsumexp(log_pi + (a - 1.0) * eps_j)) / (a - 1.0))
        )
    return RdpCurve(grid, tuple(values))


def rs_dp_eps(
    curves: Sequence[RdpCurve], pi: MergeWeights, delta: float
) -> float:
    """Certified eps of the selection at a target delta."""
    return rdp_to_dp(rs_rdp_curve(curves, pi), delta).eps


def rs_pld_delta(
    plds: Sequence[PldPair], pi: MergeWeights, eps: float
) -> float:
    """Certified delta at eps: max over the two hockey-stick directions
    of the weight-convex combination of per-model divergences."""
    if len(plds) != len(pi):
        raise ValueError("one loss distribution per weight")
    plus = 0.0
    minus = 0.0
    for w, pair in zip(pi, plds):
        if w == 0:
            continue
        plus += w * _delta_plus(pair.up, eps)
        minus += w * _delta_minus(pair.down, eps)
    return min(max(max(plus, minus), 0.0), 1.0)


def rs_pld_epsilon(
    plds: Sequence[PldPair], pi: MergeWeights, delta: float, tol: float = 1e-6
) -> float:
    """Smallest eps on a bisection grid with rs_pld_delta <= delta."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if rs_pld_delta(plds, pi, 0.0) <= delta:
        return 0.0
    limit = max(
        math.fsum(w * p.up.atom_pos_inf for w, p in zip(pi, plds) if w > 0),
        math.fsum(w * p.down.atom_neg_inf for w, p in zip(pi, plds) if w > 0),
    )
    if limit > delta:
        raise Unreachable(f"atoms carry mass {limit} > delta = {delta}")
    lo, hi = 0.0, 1.0
    while rs_pld_delta(plds, pi, hi) > delta:
        lo, hi = hi, hi * 2.0
        if hi > 1e9:
            raise Unreachable("no finite eps reaches the target delta")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if rs_pld_delta(plds, pi, mid) <= delta:
            hi = mid
        else:
            lo = mid
    return hi


def _grid_for(models: Sequence[MechanismSpec], grid: OrderGrid | None) -> OrderGrid:
    if grid is not None:
        return grid
    if any(isinstance(m, DpSgdMechanism) for m in models):
        return integer_order_grid()
    return default_order_grid()


def rs_feasible_set(
    models: Sequence[MechanismSpec],
    target: DpGuarantee,
    resolution: float,
    accountant: Accountant,
    grid: OrderGrid | None = None,
    spacing: float = DEFAULT_SPACING,
    tail_mass: float = DEFAULT_TAIL_MASS,
) -> list[MergeWeights]:
    """All lattice weights whose certified guarantee meets the target.

    The lattice is enumerated in ascending lexicographic order, so output
    order is deterministic.  An empty list is a valid result.
    """
    return [c.weights for c in rs_feasible_candidates(
        models, target, resolution, accountant, grid, spacing, tail_mass
    )]


def rs_feasible_candidates(
    models: Sequence[MechanismSpec],
    target: DpGuarantee,
    resolution: float,
    accountant: Accountant,
    grid: OrderGrid | None = None,
    spacing: float = DEFAULT_SPACING,
    tail_mass: float = DEFAULT_TAIL_MASS,
) -> list[RsCandidate]:
    """Like rs_feasible_set but with the certified eps attached."""
    n = len(models)
    if n < 1 or n > 4:
        raise ValueError("random-selection sweeps support 1 to 4 models")
    lattice = simplex_lattice(n, resolution)
    out: list[RsCandidate] = []
    if accountant is Accountant.RDP:
        curves = [curve_for_spec(m, _grid_for(models, grid)) for m in models]
        for pi in lattice:
            try:
                eps = rs_dp_eps(curves, pi, target.delta)
            except AllInfinite:
                continue
            if eps <= target.eps:
                out.append(RsCandidate(pi, eps, accountant))
    else:
        plds = [pld_for_spec(m, spacing, tail_mass) for m in models]
        for pi in lattice:
            delta = rs_pld_delta(plds, pi, target.eps)
            if delta <= target.delta:
                out.append(RsCandidate(pi, target.eps, accountant))
    return out


def rs_sample(pi: MergeWeights, seed: int) -> int:
    """Draw a model index from Cat(pi); deterministic per seed, touches
    no data."""
    u = random.Random(seed).random()
    acc = 0.0
    for i, w in enumerate(pi.values):
        acc += w
        if u < acc:
            return i
    return len(pi) - 1


def best_feasible(
    feasible: Sequence[MergeWeights], utilities: Sequence[float]
) -> MergeWeights:
    """The feasible weight maximizing a linear utility sum_i pi_i u_i.

    Ties resolve to the earliest (lexicographically smallest) weight so
    sweeps stay deterministic.
    """
    if len(feasible) == 0:
        raise ValueError("feasible set is empty")
    best = None
    best_val = -INF
    for pi in feasible:
        if len(pi) != len(utilities):
            raise ValueError("one utility per model")
        val = math.fsum(w * u for w, u in zip(pi, utilities))
        if val > best_val:
            best, best_val = pi, val
    return best


def export_feasible_json(candidates: Sequence[RsCandidate], delta: float) -> str:
    """JSON array of feasible weights with their certified (eps, delta)."""
    payload = [
        {
            "weights": list(c.weights.values),
            "eps": c.eps,
            "delta": delta,
            "accountant": c.accountant.value,
        }
        for c in candidates
    ]
    return json.dumps(payload, indent=2, sort_keys=True)
