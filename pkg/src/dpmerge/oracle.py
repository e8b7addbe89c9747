"""Independent verification oracles.

Nothing here shares code with the accountants it checks: Renyi
divergences of 1-D Gaussian mixtures come from adaptive quadrature of
``p^alpha q^(1-alpha)``, the Gaussian delta(eps) trade-off curve from its
closed form, and hockey-stick divergences of small mixture instances
from plain Monte Carlo under the exact density ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import integrate
from scipy.special import log_ndtr, logsumexp, ndtr

from .core import QuadratureFailure

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GaussianMixture1D:
    """A finite mixture of 1-D Gaussians: (weight, mean, variance) triples."""

    components: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        if len(self.components) == 0:
            raise ValueError("mixture needs at least one component")
        if any(w < 0 for w, _, _ in self.components):
            raise ValueError("component weights must be >= 0")
        if any(v <= 0 for _, _, v in self.components):
            raise ValueError("component variances must be > 0")
        if abs(sum(w for w, _, _ in self.components) - 1.0) > 1e-12:
            raise ValueError("component weights must sum to 1")

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        parts = np.empty((len(self.components), x.size))
        for i, (w, m, v) in enumerate(self.components):
            log_w = math.log(w) if w > 0 else -np.inf
            parts[i] = log_w - 0.5 * (_LOG_2PI + math.log(v)) - (x - m) ** 2 / (
                2.0 * v
            )
        return logsumexp(parts, axis=0)


def renyi_quadrature(
    p: GaussianMixture1D, q: GaussianMixture1D, alpha: float
) -> float:
    """Exact Renyi divergence D_alpha(p || q) by adaptive quadrature.

    Integrates exp(alpha log p + (1-alpha) log q) in a max-shifted
    representation so the result stays finite even when the divergence is
    large.  The window covers every component's 12-sigma range and is
    widened by alpha times the largest mean gap, which contains the
    exponentially tilted peak of the integrand.
    """
    if alpha <= 1:
        raise ValueError("alpha must exceed 1")

    def log_integrand(x):
        return alpha * p.log_pdf(x) + (1.0 - alpha) * q.log_pdf(x)

    comps = p.components + q.components
    lo = min(m - 12.0 * math.sqrt(v) for _, m, v in comps)
    hi = max(m + 12.0 * math.sqrt(v) for _, m, v in comps)
    means = [m for _, m, _ in comps]
    gap = max(means) - min(means)
    lo -= alpha * gap
    hi += alpha * gap

    scan = np.linspace(lo, hi, 4001)
    log_vals = log_integrand(scan)
    shift = float(np.max(log_vals))
    if not math.isfinite(shift):
        raise QuadratureFailure("integrand is not finite on the window")
    # Restrict to where the shifted integrand is non-negligible.
    keep = np.where(log_vals > shift - 80.0)[0]
    a = scan[max(keep[0] - 1, 0)]
    b = scan[min(keep[-1] + 1, scan.size - 1)]

    integral, err = integrate.quad(
        lambda x: math.exp(min(log_integrand(x)[0] - shift, 700.0)),
        a,
        b,
        epsabs=1e-13,
        epsrel=1e-12,
        limit=400,
    )
    if integral <= 0 or err > 1e-10 * max(integral, 1.0):
        raise QuadratureFailure(
            f"quadrature error {err} too large for integral {integral}"
        )
    return (shift + math.log(integral)) / (alpha - 1.0)


def analytic_gaussian_delta(shift_over_scale: float, eps: float) -> float:
    """delta(eps) of a Gaussian pair with sensitivity/noise ratio r.

    Phi(r/2 - eps/r) - e^eps Phi(-r/2 - eps/r), computed with log CDFs so
    large eps does not overflow, clamped to [0, 1].
    """
    r = shift_over_scale
    if r == 0:
        return 0.0
    if r < 0:
        raise ValueError("ratio must be >= 0")
    first = ndtr(r / 2.0 - eps / r)
    second = math.exp(min(eps + log_ndtr(-r / 2.0 - eps / r), 700.0))
    return min(max(first - second, 0.0), 1.0)


@dataclass(frozen=True)
class ToyLcInstance:
    """A small exact mixture instance for Monte-Carlo verification.

    The output pair is P = sum_J rho_J N(v_J, s^2 I_d) versus
    Q = N(0, s^2 I_d) in dimension d <= 4.  ``shift_bounds`` records the
    per-subset norms the surrogate accountant assumes; each ||v_J|| must
    stay within its bound.
    """

    rho: tuple[float, ...]
    shifts: tuple[tuple[float, ...], ...]
    scale: float
    shift_bounds: tuple[float, ...] | None = None

    def __post_init__(self):
        if abs(sum(self.rho) - 1.0) > 1e-12:
            raise ValueError("subset probabilities must sum to 1")
        if any(r < 0 for r in self.rho):
            raise ValueError("subset probabilities must be >= 0")
        if len(self.shifts) != len(self.rho):
            raise ValueError("one shift vector per subset")
        d = len(self.shifts[0])
        if d > 4:
            raise ValueError("dimension capped at 4")
        if any(len(v) != d for v in self.shifts):
            raise ValueError("shift vectors must share one dimension")
        if self.scale <= 0:
            raise ValueError("scale must be > 0")
        if self.shift_bounds is not None:
            for v, bound in zip(self.shifts, self.shift_bounds):
                if math.sqrt(sum(x * x for x in v)) > bound + 1e-12:
                    raise ValueError("shift norm exceeds its bound")

    @property
    def dim(self) -> int:
        return len(self.shifts[0])


class McEstimate(NamedTuple):
    value: float
    std_error: float


class HockeyStickMc(NamedTuple):
    plus: McEstimate   # H_eps(P, Q)
    minus: McEstimate  # H_eps(Q, P)


def hockey_stick_mc(
    inst: ToyLcInstance, eps: float, n_samples: int, seed: int
) -> HockeyStickMc:
    """Monte-Carlo hockey-stick divergence of a toy instance, both ways.

    Draws Y ~ N(0, s^2 I_d), evaluates the exact log density ratio of the
    mixture against the centered Gaussian, and averages
    (e^L - e^eps)_+ and (1 - e^(eps+L))_+.  Sampling is chunked with
    per-chunk seeds derived from ``seed`` so results do not depend on
    chunk scheduling.
    """
    if n_samples < 10**5:
        raise ValueError("use at least 1e5 samples")
    s2 = inst.scale**2
    shifts = np.asarray(inst.shifts, dtype=float)
    norms_sq = np.sum(shifts**2, axis=1)
    log_rho = np.where(
        np.asarray(inst.rho) > 0,
        np.log(np.maximum(inst.rho, 1e-300)),
        -np.inf,
    )

    chunk = 10**6
    sums = np.zeros(2)
    sums_sq = np.zeros(2)
    done = 0
    idx = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        rng = np.random.default_rng([seed, idx])
        y = rng.normal(0.0, inst.scale, size=(m, inst.dim))
        # log ratio: logsumexp_J [log rho_J + (<y, v_J> - ||v_J||^2 / 2) / s^2]
        proj = y @ shifts.T
        log_terms = log_rho[None, :] + (proj - norms_sq[None, :] / 2.0) / s2
        loss = logsumexp(log_terms, axis=1)
        plus = np.maximum(np.exp(loss) - math.exp(eps), 0.0)
        with np.errstate(over="ignore"):
            minus = np.maximum(1.0 - np.exp(eps + loss), 0.0)
        sums += [plus.sum(), minus.sum()]
        sums_sq += [np.sum(plus**2), np.sum(minus**2)]
        done += m
        idx += 1

    means = sums / n_samples
    variances = np.maximum(sums_sq / n_samples - means**2, 0.0)
    stderr = np.sqrt(variances / n_samples)
    return HockeyStickMc(
        McEstimate(float(means[0]), float(stderr[0])),
        McEstimate(float(means[1]), float(stderr[1])),
    )
