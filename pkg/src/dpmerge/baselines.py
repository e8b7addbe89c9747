"""Comparison accountants: joint-release worst cases and classic
(eps, delta) advanced composition.

Joint release is the privacy cost of publishing all N models at once;
any merge is post-processing of it, so its Renyi curve (pointwise sum)
and loss distribution (full convolution) upper-bound every structured
bound in this package.  The advanced-composition route instead composes
N identical Gaussian releases purely through their (eps, delta)
parameters:

    per release   eps = t^2/2 + t sqrt(2 log(1/delta)),  t = Delta/sigma
    composed      eps_com = eps sqrt(2 N log(1/delta0)) + N eps (e^eps - 1)
                  delta'  = N delta + delta0

against which the joint Renyi route

    eps_rdp = N t^2/2 + t sqrt(2 N log(1/delta'))

is never worse for delta < 1/2.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

from .core import DeltaTooLarge
from .pld import DEFAULT_CELL_CAP, PldPair, convolve
from .rdp import RdpCurve, compose_rdp


@dataclass(frozen=True)
class CompositionReport:
    """Both sides of the Renyi-vs-advanced-composition comparison."""

    eps_rdp: float
    eps_com: float
    delta_prime: float
    n_releases: int
    ratio: float
    per_release_delta: float
    slack_delta: float

    def __post_init__(self):
        expected = self.n_releases * self.per_release_delta + self.slack_delta
        if abs(self.delta_prime - expected) > 1e-15:
            raise ValueError("delta_prime must equal N*delta + delta0")

    @property
    def holds(self) -> bool:
        return self.eps_rdp <= self.eps_com

    def to_json(self) -> str:
        return json.dumps(
            {
                "eps_rdp": self.eps_rdp,
                "eps_com": self.eps_com,
                "delta_prime": self.delta_prime,
                "n_releases": self.n_releases,
                "ratio": self.ratio,
                "per_release_delta": self.per_release_delta,
                "slack_delta": self.slack_delta,
                "rdp_le_com": self.holds,
            },
            indent=2,
            sort_keys=True,
        )


def joint_rdp_bound(curves: Sequence[RdpCurve]) -> RdpCurve:
    """Worst-case curve of any combination: the joint release's sum."""
    return compose_rdp(curves)


def joint_pld_bound(
    plds: Sequence[PldPair], cell_cap: int = DEFAULT_CELL_CAP
) -> PldPair:
    """Worst-case loss distribution: convolution across all models."""
    if len(plds) == 0:
        raise ValueError("need at least one loss distribution")
    out = plds[0]
    for p in plds[1:]:
        out = convolve(out, p, cell_cap)
    return out


def _check_inputs(delta: float, n: int, delta0: float) -> None:
    if delta >= 0.5 or delta <= 0:
        raise DeltaTooLarge("per-release delta must lie in (0, 1/2)")
    if not 0 < delta0 < 1:
        raise ValueError("slack delta0 must lie in (0, 1)")
    if n < 1:
        raise ValueError("need at least one release")


def advanced_composition(
    eps: float, delta: float, n: int, delta0: float
) -> CompositionReport:
    """Compose N (eps, delta)-DP Gaussian releases both ways.

    The implied sensitivity/noise ratio t is recovered from the
    per-release eps (the unique nonnegative root of t^2/2 + t s = eps),
    so the Renyi side of the report is comparable.
    """
    _check_inputs(delta, n, delta0)
    if eps <= 0:
        raise ValueError("per-release eps must be > 0")
    s = math.sqrt(2.0 * math.log(1.0 / delta))
    t = math.sqrt(s * s + 2.0 * eps) - s
    return _report(t, eps, delta, n, delta0)


def compare_prop10(
    ratio: float, delta: float, n: int, delta0: float
) -> CompositionReport:
    """Evaluate both sides from the ratio t = Delta/sigma and check that
    the Renyi route never loses; returns the full report."""
    _check_inputs(delta, n, delta0)
    if ratio < 0:
        raise ValueError("ratio must be >= 0")
    s = math.sqrt(2.0 * math.log(1.0 / delta))
    eps = ratio * ratio / 2.0 + ratio * s
    report = _report(ratio, eps, delta, n, delta0)
    if not report.holds:
        raise AssertionError(
            f"composition comparison failed: eps_rdp={report.eps_rdp} > "
            f"eps_com={report.eps_com}"
        )
    return report


def _report(
    t: float, eps: float, delta: float, n: int, delta0: float
) -> CompositionReport:
    delta_prime = n * delta + delta0
    eps_com = eps * math.sqrt(2.0 * n * math.log(1.0 / delta0)) + n * eps * (
        math.exp(eps) - 1.0
    )
    if delta_prime >= 1.0:
        # The composed failure probability is vacuous, so any eps >= 0
        # certifies it; the Renyi route reports the trivial 0.
        eps_rdp = 0.0
    else:
        eps_rdp = n * t * t / 2.0 + t * math.sqrt(
            2.0 * n * math.log(1.0 / delta_prime)
        )
    return CompositionReport(eps_rdp, eps_com, delta_prime, n, t, delta, delta0)
