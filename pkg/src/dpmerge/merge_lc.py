"""Linear-combination merging under DP-SGD structure.

At step t the merged update is a subsampled Gaussian mixture over the
2^N subsets J of models whose mini-batch may contain the differing
record: subset J occurs with probability

    rho_J = prod_{i in J} q_i * prod_{i not in J} (1 - q_i),

shifts the mean by at most Delta_J = sum_{i in J} lambda_i eta_i C_i,
and the mixed noise has scale s^2 = sum_i (lambda_i eta_i sigma_i C_i)^2.

The per-step Renyi bound at integer alpha >= 2 enumerates compositions
gamma of alpha over the subsets:

    (1/(alpha-1)) log( sum_gamma  alpha!/prod_J gamma_J!
                       * B(gamma) * prod_J rho_J^{gamma_J} ),
    B(gamma) = exp( ((sum_J gamma_J d_J)^2 - sum_J gamma_J d_J^2) / 2 ),

with d_J = Delta_J / s.  The per-step loss distribution uses the scalar
surrogate mixture sum_J rho_J N(Delta_J, s^2) against N(0, s^2), which
upper-bounds both hockey-stick directions; steps compose by convolution.

These bounds require fresh independent noise per model.  Checkpoints
recycled from a single run violate that, so correlated inputs are
rejected outright.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from .core import (
    CorrelatedInputs,
    DegenerateNoise,
    DimensionMismatch,
    DpGuarantee,
    DpSgdMechanism,
    EnumerationCapExceeded,
    MergeWeights,
    OrderGrid,
    compositions,
    integer_order_grid,
    simplex_lattice,
)
from .merge_rs import Accountant
from .pld import (
    DEFAULT_CELL_CAP,
    DEFAULT_SPACING,
    DEFAULT_TAIL_MASS,
    PldPair,
    convolve,
    identity_pair,
    mixture_step_pld,
    pld_delta,
    self_convolve,
)
from .rdp import DpConversion, RdpCurve, rdp_to_dp

# Default enumeration budget: alpha <= 64 for N <= 2 needs C(67,3) terms,
# alpha <= 16 for N = 3 needs C(23,7); both stay well under this cap.
DEFAULT_MAX_TERMS = 250_000
DEFAULT_MAX_MODELS = 3


@dataclass(frozen=True)
class LcStepParams:
    """Derived mixture parameters of one merged DP-SGD step.

    Subsets are indexed by bitmask: model i belongs to subset b iff bit i
    of b is set, so rho[0] is the empty subset and shift[0] == 0.
    A step whose shifts are all zero carries no privacy loss and is
    allowed to have noise_scale == 0 (virtual-step padding produces
    these); any positive shift requires positive noise.
    """

    n_models: int
    rho: tuple[float, ...]
    shift: tuple[float, ...]
    noise_scale: float

    def __post_init__(self):
        m = 1 << self.n_models
        if len(self.rho) != m or len(self.shift) != m:
            raise ValueError(f"need {m} subset entries")
        if abs(math.fsum(self.rho) - 1.0) > 1e-12:
            raise ValueError("subset probabilities must sum to 1")
        if any(r < 0 for r in self.rho):
            raise ValueError("subset probabilities must be >= 0")
        if self.shift[0] != 0.0:
            raise ValueError("the empty subset must carry zero shift")
        if any(d < 0 for d in self.shift):
            raise ValueError("shifts must be >= 0")
        if self.noise_scale < 0:
            raise ValueError("noise scale must be >= 0")
        if self.noise_scale == 0.0 and any(
            r > 0 and d > 0 for r, d in zip(self.rho, self.shift)
        ):
            raise DegenerateNoise(
                "a reachable subset shifts the mean but the step has no noise"
            )

    @property
    def is_zero_step(self) -> bool:
        """True when no reachable subset moves the mean: the step leaks
        nothing."""
        return all(r == 0 or d == 0 for r, d in zip(self.rho, self.shift))

    def normalized_shifts(self) -> np.ndarray:
        if self.noise_scale == 0.0:
            return np.zeros(len(self.shift))
        return np.asarray(self.shift) / self.noise_scale


def _check_aligned_independent(specs: Sequence[DpSgdMechanism]) -> int:
    if len(specs) == 0:
        raise ValueError("need at least one mechanism")
    for spec in specs:
        if not isinstance(spec, DpSgdMechanism):
            raise TypeError("linear-combination accounting needs DP-SGD specs")
        if not spec.independent_noise:
            raise CorrelatedInputs(
                "inputs share noise (same-run checkpoints); the "
                "linear-combination bounds do not apply"
            )
    steps = {spec.steps for spec in specs}
    if len(steps) != 1:
        raise ValueError("specs must be aligned to a common step count")
    return steps.pop()


def align_virtual_steps(
    specs: Sequence[DpSgdMechanism],
) -> list[DpSgdMechanism]:
    """Pad shorter runs to the longest with zero-rate, zero-update steps.

    Padding steps have q = 0 and eta = 0 with a positive placeholder
    noise multiplier, so they contribute no privacy loss and no update:
    q = 0 makes the empty subset certain, which is exact rather than a
    large-noise limit.
    """
    if len(specs) == 0:
        raise ValueError("need at least one mechanism")
    T = max(spec.steps for spec in specs)
    out = []
    for spec in specs:
        pad = T - spec.steps
        if pad == 0:
            out.append(spec)
            continue
        out.append(
            DpSgdMechanism(
                spec.sampling_rates + (0.0,) * pad,
                spec.clip_norms + (1.0,) * pad,
                spec.noise_multipliers + (1.0,) * pad,
                spec.learning_rates + (0.0,) * pad,
                spec.independent_noise,
            )
        )
    return out


def derive_step_params(
    specs: Sequence[DpSgdMechanism], lam: MergeWeights, t: int
) -> LcStepParams:
    """Mixture parameters of step t for merge weights lambda."""
    T = _check_aligned_independent(specs)
    if not 0 <= t < T:
        raise ValueError(f"step index {t} out of range for T={T}")
    if len(specs) != len(lam):
        raise ValueError("one weight per mechanism")
    n = len(specs)
    q = [spec.sampling_rates[t] for spec in specs]
    w = [
        lam[i] * specs[i].learning_rates[t] * specs[i].clip_norms[t]
        for i in range(n)
    ]
    s_sq = math.fsum(
        (
            lam[i]
            * specs[i].learning_rates[t]
            * specs[i].noise_multipliers[t]
            * specs[i].clip_norms[t]
        )
        ** 2
        for i in range(n)
    )
    rho = []
    shift = []
    for b in range(1 << n):
        p = 1.0
        d = 0.0
        for i in range(n):
            if b >> i & 1:
                p *= q[i]
                d += w[i]
            else:
                p *= 1.0 - q[i]
        rho.append(p)
        shift.append(d)
    return LcStepParams(n, tuple(rho), tuple(shift), math.sqrt(s_sq))


def enumeration_size(alpha: int, n_models: int) -> int:
    m = 1 << n_models
    return math.comb(alpha + m - 1, m - 1)


def _check_enumeration_cap(
    alpha: int, n_models: int, max_terms: int | None
) -> None:
    required = enumeration_size(alpha, n_models)
    if max_terms is not None:
        if required > max_terms:
            raise EnumerationCapExceeded(required, max_terms, alpha, n_models)
        return
    if n_models <= 2:
        allowed = alpha <= 64
    elif n_models == DEFAULT_MAX_MODELS:
        allowed = alpha <= 16
    else:
        allowed = False
    if not allowed or required > DEFAULT_MAX_TERMS:
        raise EnumerationCapExceeded(
            required, DEFAULT_MAX_TERMS, alpha, n_models
        )


def lc_step_rdp(
    params: LcStepParams, alpha: int, max_terms: int | None = None
) -> float:
    """Exact log-space evaluation of the per-step mixture bound."""
    if alpha != int(alpha) or alpha < 2:
        raise ValueError("alpha must be an integer >= 2")
    alpha = int(alpha)
    if params.is_zero_step:
        return 0.0
    _check_enumeration_cap(alpha, params.n_models, max_terms)
    gamma = compositions(alpha, 1 << params.n_models)  # (terms, subsets)
    rho = np.asarray(params.rho)
    d = params.normalized_shifts()
    with np.errstate(divide="ignore"):
        log_rho = np.where(rho > 0, np.log(np.maximum(rho, 1e-300)), -np.inf)

    log_multinom = gammaln(alpha + 1) - gammaln(gamma + 1).sum(axis=1)
    gf = gamma.astype(float)
    weighted = gf @ np.where(np.isneginf(log_rho), 0.0, log_rho)
    # Terms using a zero-probability subset vanish outright.
    dead = (gamma[:, rho == 0] > 0).any(axis=1)
    log_b = ((gf @ d) ** 2 - gf @ d**2) / 2.0
    log_terms = np.where(dead, -np.inf, log_multinom + weighted + log_b)
    return max(0.0, float(logsumexp(log_terms)) / (alpha - 1.0))


def _step_keys(specs: Sequence[DpSgdMechanism], t: int) -> tuple:
    return tuple(
        (
            spec.sampling_rates[t],
            spec.clip_norms[t],
            spec.noise_multipliers[t],
            spec.learning_rates[t],
        )
        for spec in specs
    )


def lc_rdp_curve(
    specs: Sequence[DpSgdMechanism],
    lam: MergeWeights,
    grid: OrderGrid | None = None,
    max_terms: int | None = None,
    memoize: bool = True,
) -> RdpCurve:
    """Per-step bounds summed over all T steps.

    Identical hyperparameter steps are computed once and reused; the
    reuse cannot change results because the sum still runs step by step
    over the cached values.
    """
    specs = align_virtual_steps(specs)
    T = _check_aligned_independent(specs)
    if grid is None:
        grid = integer_order_grid()
    cache: dict[tuple, np.ndarray] = {}
    total = np.zeros(len(grid))
    for t in range(T):
        key = _step_keys(specs, t)
        if not memoize or key not in cache:
            params = derive_step_params(specs, lam, t)
            vals = np.array(
                [
                    lc_step_rdp(params, int(a), max_terms)
                    for a in grid.orders
                ]
            )
            if not memoize:
                total = total + vals
                continue
            cache[key] = vals
        total = total + cache[key]
    return RdpCurve(grid, tuple(float(v) for v in total))


def lc_dp_eps(
    specs: Sequence[DpSgdMechanism],
    lam: MergeWeights,
    delta: float,
    grid: OrderGrid | None = None,
    max_terms: int | None = None,
) -> float:
    """Certified eps of the combination at a target delta."""
    return rdp_to_dp(lc_rdp_curve(specs, lam, grid, max_terms), delta).eps


def lc_step_surrogate_pld(
    params: LcStepParams,
    spacing: float = DEFAULT_SPACING,
    tail_mass: float = DEFAULT_TAIL_MASS,
) -> PldPair:
    """Loss distribution of the scalar surrogate mixture for one step."""
    if params.is_zero_step:
        return identity_pair(spacing)
    return mixture_step_pld(
        np.asarray(params.rho),
        np.asarray(params.shift),
        params.noise_scale,
        spacing,
        tail_mass,
    )


def lc_pld(
    specs: Sequence[DpSgdMechanism],
    lam: MergeWeights,
    spacing: float = DEFAULT_SPACING,
    tail_mass: float = DEFAULT_TAIL_MASS,
    cell_cap: int = DEFAULT_CELL_CAP,
    memoize: bool = True,
) -> PldPair:
    """Composed surrogate loss distribution over all T steps.

    Steps sharing one hyperparameter tuple compose by repeated squaring;
    with caching off the per-step construction simply reruns for every
    occurrence, which cannot change the (deterministic) result.
    """
    specs = align_virtual_steps(specs)
    T = _check_aligned_independent(specs)
    groups: dict[tuple, list[int]] = {}
    order: list[tuple] = []
    for t in range(T):
        key = _step_keys(specs, t)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(t)
    composed: PldPair | None = None
    for key in order:
        ts = groups[key]
        if memoize:
            pair = lc_step_surrogate_pld(
                derive_step_params(specs, lam, ts[0]), spacing, tail_mass
            )
        else:
            for t in ts:
                pair = lc_step_surrogate_pld(
                    derive_step_params(specs, lam, t), spacing, tail_mass
                )
        block = self_convolve(pair, len(ts), cell_cap)
        composed = (
            block if composed is None else convolve(composed, block, cell_cap)
        )
    assert composed is not None
    return composed


def lc_pld_delta(
    specs: Sequence[DpSgdMechanism],
    lam: MergeWeights,
    eps: float,
    spacing: float = DEFAULT_SPACING,
    tail_mass: float = DEFAULT_TAIL_MASS,
    cell_cap: int = DEFAULT_CELL_CAP,
    memoize: bool = True,
) -> float:
    """Certified delta at eps via the composed surrogate."""
    return pld_delta(
        lc_pld(specs, lam, spacing, tail_mass, cell_cap, memoize), eps
    )


def lc_combine(
    models: Sequence[np.ndarray], lam: MergeWeights
) -> np.ndarray:
    """The merged parameter vector sum_i lambda_i theta_i."""
    if len(models) != len(lam):
        raise ValueError("one model per weight")
    vecs = [np.asarray(m, dtype=float) for m in models]
    shape = vecs[0].shape
    if any(v.shape != shape for v in vecs):
        raise DimensionMismatch("models must share one shape")
    out = np.zeros(shape)
    for w, v in zip(lam, vecs):
        out += w * v
    return out


def lc_feasible_set(
    specs: Sequence[DpSgdMechanism],
    target: DpGuarantee,
    resolution: float,
    accountant: Accountant,
    grid: OrderGrid | None = None,
    max_terms: int | None = None,
    spacing: float = DEFAULT_SPACING,
    tail_mass: float = DEFAULT_TAIL_MASS,
) -> list[MergeWeights]:
    """All lattice weights whose certified guarantee meets the target."""
    specs = align_virtual_steps(specs)
    _check_aligned_independent(specs)
    n = len(specs)
    if n < 1 or n > 4:
        raise ValueError("linear-combination sweeps support 1 to 4 models")
    out: list[MergeWeights] = []
    for lam in simplex_lattice(n, resolution):
        if accountant is Accountant.RDP:
            eps = lc_dp_eps(specs, lam, target.delta, grid, max_terms)
            if eps <= target.eps:
                out.append(lam)
        else:
            delta = lc_pld_delta(specs, lam, target.eps, spacing, tail_mass)
            if delta <= target.delta:
                out.append(lam)
    return out


def lc_accounting_trace(
    specs: Sequence[DpSgdMechanism],
    lam: MergeWeights,
    grid: OrderGrid | None = None,
    max_terms: int | None = None,
) -> list[tuple[int, float, float]]:
    """Per-step audit rows (step, alpha, eps contribution) for export."""
    specs = align_virtual_steps(specs)
    T = _check_aligned_independent(specs)
    if grid is None:
        grid = integer_order_grid()
    rows = []
    cache: dict[tuple, list[float]] = {}
    for t in range(T):
        key = _step_keys(specs, t)
        if key not in cache:
            params = derive_step_params(specs, lam, t)
            cache[key] = [
                lc_step_rdp(params, int(a), max_terms) for a in grid.orders
            ]
        for a, v in zip(grid.orders, cache[key]):
            rows.append((t, float(a), v))
    return rows
