"""Discretized privacy-loss distributions.

A loss distribution lives on a uniform grid ``origin + j*h`` and tracks
the law of L = log(dP/dQ) under Q, plus two atoms for mass truncated
beyond the grid.  delta(eps) is recovered as

    delta_plus  = sum_j m_j (e^{L_j} - e^eps)_+  + atom_pos_inf
    delta_minus = sum_j m_j (1 - e^{eps+L_j})_+  + atom_neg_inf
    delta(eps)  = max(delta_plus, delta_minus)

Discretization must never under-report delta, and the two integrands
move in opposite directions: (e^L - e^eps)_+ grows with L, so rounding
losses up over-estimates delta_plus, while (1 - e^{eps+L})_+ shrinks
with L, so rounding losses down over-estimates delta_minus.  Every
mechanism therefore carries a PldPair holding both roundings.

Two bookkeeping subtleties keep the bounds valid in floating point:

* The rounded-up copy carries the projected P-side masses
  p_j = m_j e^{L_j} alongside the Q-side masses.  On the shared grid the
  P-side composes by exactly the same convolution (p of a sum of losses
  factorizes cell by cell), and delta_plus evaluated as
  sum (p_j - e^eps m_j)_+ stays finite even for long compositions where
  e^{L_j} alone overflows or the Q-mass underflows under P's bulk.
* Mass cut above the grid is charged to atom_pos_inf measured under P,
  because a high-loss region contributes at most its P-mass to
  delta_plus (E_Q[e^L 1{L>B}] = P(L>B)); Q-mass there would under-count.
  Mass cut below the grid goes to atom_neg_inf under Q, which covers its
  delta_minus contribution since that integrand is at most 1.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import signal
from scipy.special import log_ndtr, logsumexp, ndtr, ndtri

from .core import GaussianMechanism, SpacingMismatch, Unreachable

DEFAULT_SPACING = 1e-4
DEFAULT_TAIL_MASS = 1e-12

# Masses below this are trimmed off grid ends after each convolution and
# pushed into the atoms (never dropped).
TRUNCATION_BUDGET = 1e-12

# Refuse to build convolution outputs larger than this many cells.
DEFAULT_CELL_CAP = 1 << 26

_EXP_CLIP = 700.0


class Rounding(enum.Enum):
    CEIL = "ceil"
    FLOOR = "floor"


@dataclass(frozen=True, eq=False)
class DiscretePld:
    """Masses of the loss variable under Q on a uniform grid.

    Rounded-up copies also carry ``p_masses``, the P-side projection
    m_j e^{L_j}; see the module docstring.
    """

    origin: float
    spacing: float
    masses: np.ndarray
    atom_neg_inf: float
    atom_pos_inf: float
    rounding: Rounding
    p_masses: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.spacing <= 0:
            raise ValueError("spacing must be > 0")
        masses = np.asarray(self.masses, dtype=float)
        if np.any(masses < 0):
            raise ValueError("masses must be >= 0")
        if not 0 <= self.atom_neg_inf <= 1 or not 0 <= self.atom_pos_inf <= 1:
            raise ValueError("atom masses must lie in [0, 1]")
        total = masses.sum() + self.atom_neg_inf + self.atom_pos_inf
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"total mass {total} deviates from 1")
        masses.setflags(write=False)
        object.__setattr__(self, "masses", masses)
        if self.p_masses is not None:
            p = np.asarray(self.p_masses, dtype=float)
            if p.shape != masses.shape:
                raise ValueError("p_masses must align with masses")
            p.setflags(write=False)
            object.__setattr__(self, "p_masses", p)

    def losses(self) -> np.ndarray:
        return self.origin + self.spacing * np.arange(self.masses.size)


@dataclass(frozen=True)
class PldPair:
    """Rounded-up and rounded-down copies of one loss distribution."""

    up: DiscretePld
    down: DiscretePld

    def __post_init__(self):
        if self.up.rounding is not Rounding.CEIL:
            raise ValueError("up copy must use ceil rounding")
        if self.down.rounding is not Rounding.FLOOR:
            raise ValueError("down copy must use floor rounding")
        if self.up.spacing != self.down.spacing:
            raise SpacingMismatch("pair copies must share spacing")
        if (
            self.up.origin != self.down.origin
            or self.up.masses.size != self.down.masses.size
        ):
            raise ValueError("pair copies must cover the same window")

    @property
    def spacing(self) -> float:
        return self.up.spacing


def _grid_index(origin: float, spacing: float) -> int:
    return round(origin / spacing)


def _projected_p(masses: np.ndarray, losses: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.exp(np.minimum(np.log(masses) + losses, _EXP_CLIP))


def identity_pair(spacing: float = DEFAULT_SPACING) -> PldPair:
    """Point mass at loss 0: the PLD of a data-independent step."""
    one = np.array([1.0])
    return PldPair(
        DiscretePld(0.0, spacing, one, 0.0, 0.0, Rounding.CEIL, one.copy()),
        DiscretePld(0.0, spacing, one.copy(), 0.0, 0.0, Rounding.FLOOR),
    )


# ---------------------------------------------------------------------------
# Construction.
# ---------------------------------------------------------------------------


def gaussian_pld(
    spec: GaussianMechanism,
    spacing: float = DEFAULT_SPACING,
    tail_mass: float = DEFAULT_TAIL_MASS,
) -> PldPair:
    """Loss distribution of N(Delta, sigma^2) against N(0, sigma^2).

    The loss L(y) = Delta*y/sigma^2 - Delta^2/(2 sigma^2) with y ~ Q is
    itself Gaussian, so cell masses are exact interval probabilities.
    """
    _check_discretization(spacing, tail_mass)
    if spec.sensitivity == 0:
        return identity_pair(spacing)
    mu = spec.sensitivity**2 / (2.0 * spec.noise_std**2)
    std = spec.sensitivity / spec.noise_std  # loss std under either side
    k = -float(ndtri(tail_mass))
    # Loss ~ N(-mu, std^2) under Q and N(+mu, std^2) under P.
    lo = -mu - k * std
    hi = mu + k * std
    j_lo = math.floor(lo / spacing)
    j_hi = math.ceil(hi / spacing)
    edges = spacing * np.arange(j_lo - 1, j_hi + 1)

    cdf_q = ndtr((edges + mu) / std)
    interval_q = np.diff(cdf_q)  # Q-mass of ((j-1)h, j*h] for j in j_lo..j_hi
    neg_atom = float(cdf_q[0])
    pos_atom_p = float(ndtr(-(edges[-1] - mu) / std))
    pos_atom_q = float(1.0 - cdf_q[-1])

    origin = j_lo * spacing
    up_losses = origin + spacing * np.arange(interval_q.size)
    up = DiscretePld(
        origin, spacing, interval_q, neg_atom, pos_atom_p, Rounding.CEIL,
        _projected_p(interval_q, up_losses),
    )
    # Floor copy: mass of [j*h, (j+1)h) lands on j*h, which is the same
    # interval masses shifted down one cell; the whole Q upper tail is
    # floored onto the top cell and everything below the first cell joins
    # the negative atom.
    down_masses = np.concatenate([interval_q[1:], [pos_atom_q]])
    down = DiscretePld(
        origin, spacing, down_masses, neg_atom + interval_q[0], 0.0,
        Rounding.FLOOR,
    )
    return PldPair(up, down)


def mixture_step_pld(
    rho: np.ndarray,
    shifts: np.ndarray,
    scale: float,
    spacing: float = DEFAULT_SPACING,
    tail_mass: float = DEFAULT_TAIL_MASS,
) -> PldPair:
    """Loss distribution of sum_J rho_J N(shift_J, s^2) against N(0, s^2).

    The loss is evaluated on a fine grid of the underlying Z ~ N(0, s^2)
    and accumulated onto the loss grid; it is monotone in Z, so taking
    each sub-interval's right endpoint (rounded up) or left endpoint
    (rounded down) keeps both copies pessimistic.
    """
    _check_discretization(spacing, tail_mass)
    rho = np.asarray(rho, dtype=float)
    shifts = np.asarray(shifts, dtype=float)
    if np.any(shifts < 0):
        raise ValueError("shifts must be >= 0")
    keep = rho > 0
    rho, shifts = rho[keep], shifts[keep]
    shift_max = float(shifts.max(initial=0.0))
    if shift_max == 0.0:
        return identity_pair(spacing)
    if scale <= 0:
        raise ValueError("scale must be > 0 when any shift is positive")

    k = -float(ndtri(tail_mass))
    z_lo = -k * scale
    z_hi = shift_max + k * scale
    # Loss slope is at most shift_max / s^2: pick the z step so each
    # sub-interval spans at most one loss cell.
    n_cells = int(math.ceil((z_hi - z_lo) * shift_max / (scale**2 * spacing)))
    n_cells = min(max(n_cells, 1), 1 << 24)
    z = np.linspace(z_lo, z_hi, n_cells + 1)

    log_rho = np.log(rho)
    s2 = scale**2
    # loss(z) = logsumexp_J [log rho_J + (shift_J z - shift_J^2/2) / s^2]
    log_terms = log_rho[None, :] + (
        z[:, None] * shifts[None, :] - shifts[None, :] ** 2 / 2.0
    ) / s2
    loss = logsumexp(log_terms, axis=1)

    q_cdf = ndtr(z / scale)
    cell_q = np.diff(q_cdf)
    neg_atom = float(q_cdf[0])
    pos_atom_q = float(1.0 - q_cdf[-1])
    # P-mass of the upper tail: sum_J rho_J * Phi_c((z_hi - shift_J)/s).
    pos_atom_p = float(
        np.exp(logsumexp(log_rho + log_ndtr(-(z[-1] - shifts) / scale)))
    )

    up_idx = np.ceil(loss[1:] / spacing).astype(np.int64)
    down_idx = np.floor(loss[:-1] / spacing).astype(np.int64)
    j_lo = int(min(up_idx.min(), down_idx.min()))
    j_hi = int(max(up_idx.max(), down_idx.max()))
    size = j_hi - j_lo + 1
    up_masses = np.bincount(up_idx - j_lo, weights=cell_q, minlength=size)
    # P-side of each sub-interval, rounded up with its Q-mass.
    with np.errstate(divide="ignore"):
        cell_p = np.exp(
            np.minimum(np.log(cell_q) + loss[1:], _EXP_CLIP)
        )
    up_p = np.bincount(up_idx - j_lo, weights=cell_p, minlength=size)
    down_masses = np.bincount(down_idx - j_lo, weights=cell_q, minlength=size)

    origin = j_lo * spacing
    up = DiscretePld(
        origin, spacing, up_masses, neg_atom, pos_atom_p, Rounding.CEIL, up_p
    )
    down = DiscretePld(
        origin, spacing, down_masses, neg_atom, pos_atom_q, Rounding.FLOOR
    )
    return PldPair(up, down)


def subsampled_gaussian_step_pld(
    q: float,
    effective_shift: float,
    effective_scale: float,
    spacing: float = DEFAULT_SPACING,
    tail_mass: float = DEFAULT_TAIL_MASS,
) -> PldPair:
    """One Poisson-subsampled Gaussian step:
    (1-q) N(0, s^2) + q N(shift, s^2) against N(0, s^2)."""
    if not 0 <= q <= 1:
        raise ValueError("sampling rate must lie in [0, 1]")
    if effective_shift < 0:
        raise ValueError("shift must be >= 0")
    return mixture_step_pld(
        np.array([1.0 - q, q]),
        np.array([0.0, effective_shift]),
        effective_scale,
        spacing,
        tail_mass,
    )


def _check_discretization(spacing: float, tail_mass: float) -> None:
    if spacing <= 0:
        raise ValueError("spacing must be > 0")
    if not 0 < tail_mass <= 1e-6:
        raise ValueError("tail_mass must lie in (0, 1e-6]")


# ---------------------------------------------------------------------------
# delta(eps) and eps(delta).
# ---------------------------------------------------------------------------


def _delta_plus(pld: DiscretePld, eps: float) -> float:
    """sum m_j (e^{L_j} - e^eps)_+ + atom_pos_inf."""
    losses = pld.losses()
    active = losses > eps
    if not np.any(active):
        return pld.atom_pos_inf
    m = pld.masses[active]
    if pld.p_masses is not None:
        p = pld.p_masses[active]
    else:
        with np.errstate(divide="ignore"):
            p = np.exp(np.minimum(np.log(m) + losses[active], _EXP_CLIP))
    total = float(np.sum(np.maximum(p - math.exp(min(eps, _EXP_CLIP)) * m, 0.0)))
    return total + pld.atom_pos_inf


def _delta_minus(pld: DiscretePld, eps: float) -> float:
    """sum m_j (1 - e^{eps+L_j})_+ + atom_neg_inf."""
    losses = pld.losses()
    active = eps + losses < 0
    if not np.any(active):
        return pld.atom_neg_inf
    m = pld.masses[active]
    L = losses[active]
    total = float(np.sum(m * -np.expm1(eps + L)))
    return total + pld.atom_neg_inf


def pld_delta(pair: PldPair, eps: float) -> float:
    """Tight delta at eps: the larger hockey-stick direction, with the
    rounded-up copy feeding the P-vs-Q direction and the rounded-down
    copy the reverse."""
    d = max(_delta_plus(pair.up, eps), _delta_minus(pair.down, eps))
    return min(max(d, 0.0), 1.0)


def pld_epsilon(pair: PldPair, delta: float, tol: float = 1e-6) -> float:
    """Smallest eps with pld_delta(pair, eps) <= delta, bisected to tol.

    Raises Unreachable when the infinite-loss atoms alone exceed delta.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    floor_delta = max(pair.up.atom_pos_inf, pair.down.atom_neg_inf)
    if floor_delta > delta:
        raise Unreachable(
            f"atoms carry mass {floor_delta} > delta = {delta}"
        )
    if pld_delta(pair, 0.0) <= delta:
        return 0.0
    lo, hi = 0.0, 1.0
    while pld_delta(pair, hi) > delta:
        lo, hi = hi, hi * 2.0
        if hi > 1e9:  # pragma: no cover - guarded by the atom check
            raise Unreachable("no finite eps reaches the target delta")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if pld_delta(pair, mid) <= delta:
            hi = mid
        else:
            lo = mid
    return hi


# ---------------------------------------------------------------------------
# Composition.
# ---------------------------------------------------------------------------


def _convolve_masses(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.size * b.size <= 1 << 20:
        return np.convolve(a, b)
    return np.maximum(signal.fftconvolve(a, b), 0.0)


def _combine_atoms(a: float, b: float) -> float:
    return 1.0 - (1.0 - a) * (1.0 - b)


def convolve(a: PldPair, b: PldPair, cell_cap: int = DEFAULT_CELL_CAP) -> PldPair:
    """Compose two independent steps: cell masses convolve (ceil with
    ceil, floor with floor), infinite atoms combine as 1 - (1-x)(1-y)
    per sign.

    When the support grows, ends holding less than the truncation budget
    are clipped and their mass pushed into the atoms; the rounded-up
    copy's upper clip is charged by P-mass so delta_plus stays an upper
    bound.  Both copies are clipped at the same indices to keep the pair
    on one window.
    """
    if a.spacing != b.spacing:
        raise SpacingMismatch(
            f"spacings differ: {a.spacing} vs {b.spacing}"
        )
    h = a.spacing
    up = _convolve_masses(a.up.masses, b.up.masses)
    if a.up.p_masses is None or b.up.p_masses is None:
        losses_a = a.up.losses()
        losses_b = b.up.losses()
        pa = a.up.p_masses if a.up.p_masses is not None else _projected_p(
            a.up.masses, losses_a
        )
        pb = b.up.p_masses if b.up.p_masses is not None else _projected_p(
            b.up.masses, losses_b
        )
    else:
        pa, pb = a.up.p_masses, b.up.p_masses
    up_p = _convolve_masses(pa, pb)
    down = _convolve_masses(a.down.masses, b.down.masses)
    if up.size > cell_cap:
        raise MemoryError(
            f"convolution output of {up.size} cells exceeds cap {cell_cap}"
        )
    idx = _grid_index(a.up.origin, h) + _grid_index(b.up.origin, h)
    neg_up = _combine_atoms(a.up.atom_neg_inf, b.up.atom_neg_inf)
    pos_up = _combine_atoms(a.up.atom_pos_inf, b.up.atom_pos_inf)
    neg_down = _combine_atoms(a.down.atom_neg_inf, b.down.atom_neg_inf)
    pos_down = _combine_atoms(a.down.atom_pos_inf, b.down.atom_pos_inf)

    if up.size > max(a.up.masses.size, b.up.masses.size):
        budget = TRUNCATION_BUDGET / 2.0
        n_lead = min(
            int(np.searchsorted(np.cumsum(up_p), budget)),
            int(np.searchsorted(np.cumsum(down), budget)),
        )
        n_trail = min(
            int(np.searchsorted(np.cumsum(up_p[::-1]), budget)),
            int(np.searchsorted(np.cumsum(down[::-1]), budget)),
        )
        if n_lead + n_trail < up.size and (n_lead or n_trail):
            end = up.size - n_trail
            neg_up += float(up[:n_lead].sum())
            pos_up += float(up_p[end:].sum())
            neg_down += float(down[:n_lead].sum())
            pos_down += float(down[end:].sum())
            up, up_p, down = up[n_lead:end], up_p[n_lead:end], down[n_lead:end]
            idx += n_lead

    origin = idx * h
    return PldPair(
        DiscretePld(origin, h, up, neg_up, min(pos_up, 1.0), Rounding.CEIL, up_p),
        DiscretePld(origin, h, down, neg_down, pos_down, Rounding.FLOOR),
    )


def self_convolve(
    a: PldPair, t: int, cell_cap: int = DEFAULT_CELL_CAP
) -> PldPair:
    """t-fold composition by repeated squaring."""
    if t < 1:
        raise ValueError("t must be >= 1")
    result: PldPair | None = None
    base = a
    while t:
        if t & 1:
            result = base if result is None else convolve(result, base, cell_cap)
        t >>= 1
        if t:
            base = convolve(base, base, cell_cap)
    assert result is not None
    return result


def pld_for_spec(
    spec,
    spacing: float = DEFAULT_SPACING,
    tail_mass: float = DEFAULT_TAIL_MASS,
    cell_cap: int = DEFAULT_CELL_CAP,
) -> PldPair:
    """Per-model loss distribution: a single Gaussian release, or the
    step-convolved subsampled-Gaussian PLD of a DP-SGD run."""
    from .core import DpSgdMechanism

    if isinstance(spec, GaussianMechanism):
        return gaussian_pld(spec, spacing, tail_mass)
    if isinstance(spec, DpSgdMechanism):
        groups: dict[tuple[float, float], int] = {}
        for t in range(spec.steps):
            key = (spec.sampling_rates[t], spec.noise_multipliers[t])
            groups[key] = groups.get(key, 0) + 1
        composed: PldPair | None = None
        for (q, sigma), count in groups.items():
            step = subsampled_gaussian_step_pld(
                q, 1.0, sigma, spacing, tail_mass
            )
            block = self_convolve(step, count, cell_cap)
            composed = (
                block if composed is None else convolve(composed, block, cell_cap)
            )
        return composed if composed is not None else identity_pair(spacing)
    raise TypeError(f"unsupported mechanism spec {type(spec)!r}")


def write_csv(pld: DiscretePld, path) -> None:
    """Dump one discretized loss distribution for inspection/plotting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["# spacing", repr(pld.spacing)])
        writer.writerow(["# rounding", pld.rounding.value])
        writer.writerow(["# atom_neg_inf", repr(pld.atom_neg_inf)])
        writer.writerow(["# atom_pos_inf", repr(pld.atom_pos_inf)])
        writer.writerow(["loss", "mass"])
        for loss, mass in zip(pld.losses(), pld.masses):
            writer.writerow([repr(float(loss)), repr(float(mass))])
