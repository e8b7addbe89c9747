"""Desk-scale experiments: mean-estimation frontiers and a synthetic
DP-SGD pipeline.

The mean-estimation task draws n standard normal samples clipped to
[-1, 1] and privatizes the empirical mean with one of two Gaussian
mechanisms.  Merging the two models by selection (variance
pi s1^2 + (1-pi) s2^2) or combination (variance
lambda^2 s1^2 + (1-lambda)^2 s2^2) traces a privacy/utility frontier;
combination can match any selection variance with a weaker certificate,
so its frontier dominates.

The DP-SGD simulator trains logistic regression on two Gaussian blobs
with Poisson sampling, per-example clipping, and Gaussian noise, exactly
matching the preconditions the accountants assume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .core import (
    DimensionMismatch,
    DpSgdMechanism,
    GaussianMechanism,
    MergeWeights,
    default_order_grid,
    validate_weights,
)
from .merge_rs import rs_dp_eps, rs_pld_epsilon
from .pld import DEFAULT_SPACING, DEFAULT_TAIL_MASS, gaussian_pld, pld_epsilon, pld_for_spec
from .rdp import gaussian_rdp_curve, rdp_to_dp


class Method(Enum):
    RS_RDP = "RS-RDP"
    RS_PLD = "RS-PLD"
    LC_RDP = "LC-RDP"
    LC_PLD = "LC-PLD"


@dataclass(frozen=True)
class MeanEstConfig:
    """Settings of the mean-estimation experiment."""

    n: int = 100
    clip_range: tuple[float, float] = (-1.0, 1.0)
    sensitivity: float = 0.02  # replace-one on a width-2 domain: 2/n
    noise_stds: tuple[float, float] = (0.1, 0.02)  # (5*Delta, Delta)
    target_delta: float = 1e-5
    resolution: float = 0.02
    trials: int = 10_000
    seed: int = 42
    pld_spacing: float = DEFAULT_SPACING

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.clip_range[0] > self.clip_range[1]:
            raise ValueError("clip range must be ordered")
        if self.sensitivity <= 0:
            raise ValueError("sensitivity must be > 0")
        if self.noise_stds[0] == self.noise_stds[1]:
            raise ValueError("equal noise levels give a degenerate frontier")
        if not 0 < self.target_delta < 1:
            raise ValueError("target delta must lie in (0, 1)")


@dataclass(frozen=True)
class FrontierPoint:
    method: Method
    weights: tuple[float, ...]
    eps: float
    delta: float
    utility: float
    utility_stderr: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.eps) or not math.isfinite(self.utility):
            raise ValueError("frontier points must be finite")


def gen_mean_data(config: MeanEstConfig, seed: int | None = None) -> np.ndarray:
    """n i.i.d. standard normal draws clipped to the configured range."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    lo, hi = config.clip_range
    return np.clip(rng.standard_normal(config.n), lo, hi)


@lru_cache(maxsize=None)
def _sampling_variance(
    n: int, clip: tuple[float, float], trials: int = 10**6, seed: int = 20_240_801
) -> float:
    """Monte-Carlo E[(clipped empirical mean - 0)^2], cached per config.

    Measured once with a fixed seed rather than derived in closed form;
    it cancels in every selection-vs-combination comparison.
    """
    rng = np.random.default_rng(seed)
    total = 0.0
    done = 0
    while done < trials:
        m = min(10_000, trials - done)
        draws = np.clip(rng.standard_normal((m, n)), clip[0], clip[1])
        total += float(np.sum(draws.mean(axis=1) ** 2))
        done += m
    return total / trials


def mean_est_analytic_mse(
    method: Method, weight: float, config: MeanEstConfig
) -> float:
    """Mechanism variance plus the (cached) sampling variance."""
    if not 0 <= weight <= 1:
        raise ValueError("weight must lie in [0, 1]")
    s1, s2 = (v**2 for v in config.noise_stds)
    if method in (Method.RS_RDP, Method.RS_PLD):
        mech = weight * s1 + (1.0 - weight) * s2
    else:
        mech = weight**2 * s1 + (1.0 - weight) ** 2 * s2
    return mech + _sampling_variance(config.n, config.clip_range)


def _rs_variance(weight: float, config: MeanEstConfig) -> float:
    s1, s2 = (v**2 for v in config.noise_stds)
    return weight * s1 + (1.0 - weight) * s2


def _lc_variance(weight: float, config: MeanEstConfig) -> float:
    s1, s2 = (v**2 for v in config.noise_stds)
    return weight**2 * s1 + (1.0 - weight) ** 2 * s2


def _weight_lattice(resolution: float) -> list[float]:
    m = round(1.0 / resolution)
    if m < 1 or abs(m * resolution - 1.0) > 1e-9:
        raise ValueError(f"resolution {resolution} does not divide 1 evenly")
    return [j / m for j in range(m + 1)]


def mean_est_frontier(config: MeanEstConfig) -> list[FrontierPoint]:
    """Certified (eps, MSE) of every lattice weight under all four
    method/accountant pairs.

    Selection uses the mixture accountants over the two input curves or
    loss distributions; combination uses the exact Gaussian closed form
    at its mixed noise level.  Use pareto_extract per method for the
    non-dominated subsets.
    """
    delta = config.target_delta
    grid = default_order_grid()
    mechs = [
        GaussianMechanism(config.sensitivity, config.noise_stds[0]),
        GaussianMechanism(config.sensitivity, config.noise_stds[1]),
    ]
    curves = [gaussian_rdp_curve(m, grid) for m in mechs]
    plds = [gaussian_pld(m, config.pld_spacing, DEFAULT_TAIL_MASS) for m in mechs]

    points: list[FrontierPoint] = []
    for w in _weight_lattice(config.resolution):
        pi = validate_weights([w, 1.0 - w])
        rs_mse = mean_est_analytic_mse(Method.RS_RDP, w, config)
        lc_mse = mean_est_analytic_mse(Method.LC_RDP, w, config)

        eps = rs_dp_eps(curves, pi, delta)
        points.append(FrontierPoint(Method.RS_RDP, pi.values, eps, delta, rs_mse))

        eps = rs_pld_epsilon(plds, pi, delta)
        points.append(FrontierPoint(Method.RS_PLD, pi.values, eps, delta, rs_mse))

        sigma_lc = math.sqrt(_lc_variance(w, config))
        if sigma_lc == 0.0:
            raise ValueError("combination noise vanished; bad config")
        lc_curve = gaussian_rdp_curve(
            GaussianMechanism(config.sensitivity, sigma_lc), grid
        )
        eps = rdp_to_dp(lc_curve, delta).eps
        points.append(FrontierPoint(Method.LC_RDP, pi.values, eps, delta, lc_mse))

        lc_pair = gaussian_pld(
            GaussianMechanism(config.sensitivity, sigma_lc),
            config.pld_spacing,
            DEFAULT_TAIL_MASS,
        )
        eps = pld_epsilon(lc_pair, delta)
        points.append(FrontierPoint(Method.LC_PLD, pi.values, eps, delta, lc_mse))
    return points


def mean_est_empirical(
    config: MeanEstConfig,
) -> list[FrontierPoint]:
    """Monte-Carlo MSE per weight for both merge rules.

    Each trial draws fresh data, forms the clipped empirical mean, and
    adds the merged mechanism's noise; selection draws its model index
    per trial.  Certified eps is not recomputed here (utility only);
    points carry eps = 0 and the standard error of the MSE estimate.
    """
    if config.trials < 10_000:
        raise ValueError("use at least 1e4 trials")
    rng = np.random.default_rng([config.seed, 0])
    lo, hi = config.clip_range
    data = np.clip(
        rng.standard_normal((config.trials, config.n)), lo, hi
    )
    mu_hat = data.mean(axis=1)
    out: list[FrontierPoint] = []
    s1, s2 = config.noise_stds
    for w in _weight_lattice(config.resolution):
        noise_rng = np.random.default_rng([config.seed, 1, round(w * 1e9)])
        # Selection: per-trial model index, then that model's noise.
        pick_1 = noise_rng.random(config.trials) < w
        std = np.where(pick_1, s1, s2)
        theta = mu_hat + noise_rng.standard_normal(config.trials) * std
        sq = theta**2
        mse = float(sq.mean())
        stderr = float(sq.std(ddof=1) / math.sqrt(config.trials))
        out.append(
            FrontierPoint(Method.RS_RDP, (w, 1.0 - w), 0.0, config.target_delta, mse, stderr)
        )
        # Combination: deterministic mix of both models' noises.
        sigma_lc = math.sqrt(_lc_variance(w, config))
        theta = mu_hat + noise_rng.standard_normal(config.trials) * sigma_lc
        sq = theta**2
        mse = float(sq.mean())
        stderr = float(sq.std(ddof=1) / math.sqrt(config.trials))
        out.append(
            FrontierPoint(Method.LC_RDP, (w, 1.0 - w), 0.0, config.target_delta, mse, stderr)
        )
    return out


def pareto_extract(
    points: Sequence[FrontierPoint], higher_utility_is_better: bool = True
) -> list[FrontierPoint]:
    """Non-dominated subset under (minimize eps, optimize utility).

    Stable order by eps; exact ties in both coordinates are kept.
    """
    if len(points) == 0:
        raise ValueError("need at least one point")
    sign = 1.0 if higher_utility_is_better else -1.0
    out = []
    for cand in points:
        dominated = False
        for other in points:
            if other is cand:
                continue
            better_eps = other.eps <= cand.eps
            better_util = sign * other.utility >= sign * cand.utility
            strictly = other.eps < cand.eps or sign * other.utility > sign * cand.utility
            if better_eps and better_util and strictly:
                dominated = True
                break
        if not dominated:
            out.append(cand)
    return sorted(out, key=lambda p: (p.eps, -sign * p.utility))


# ---------------------------------------------------------------------------
# Synthetic DP-SGD.
# ---------------------------------------------------------------------------


def gen_blobs(
    n: int, dim: int, separation: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Two Gaussian blobs with +-1 labels, the classic separable toy."""
    if dim > 16 or n > 5000:
        raise ValueError("keep the toy problem small")
    rng = np.random.default_rng(seed)
    labels = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    center = np.zeros(dim)
    center[0] = separation / 2.0
    x = rng.standard_normal((n, dim)) + labels[:, None] * center[None, :]
    return x, labels


def _logistic_grads(theta, x, y):
    from scipy.special import expit

    # d/dtheta log(1 + exp(-y <x, theta>)) per example
    margins = y * (x @ theta)
    return -(y * expit(-margins))[:, None] * x


def dpsgd_train(
    spec: DpSgdMechanism,
    data: tuple[np.ndarray, np.ndarray],
    seed: int,
) -> np.ndarray:
    """DP-SGD on logistic loss; returns all checkpoints, theta0 first.

    At each step a Poisson mini-batch is drawn at the configured rate,
    per-example gradients are clipped to the step's norm bound, summed,
    and perturbed with N(0, (sigma C)^2 I); the update is plain SGD on
    the noisy sum.  Accounting never touches the data: two seeds give
    different trajectories with identical certificates.
    """
    x, y = data
    rng = np.random.default_rng(seed)
    theta = np.zeros(x.shape[1])
    out = [theta.copy()]
    for t in range(spec.steps):
        q = spec.sampling_rates[t]
        clip = spec.clip_norms[t]
        sigma = spec.noise_multipliers[t]
        eta = spec.learning_rates[t]
        mask = rng.random(x.shape[0]) < q
        if mask.any():
            grads = _logistic_grads(theta, x[mask], y[mask])
            norms = np.linalg.norm(grads, axis=1)
            scale = np.minimum(1.0, clip / np.maximum(norms, 1e-300))
            total = (grads * scale[:, None]).sum(axis=0)
        else:
            total = np.zeros_like(theta)
        noise = rng.standard_normal(theta.size) * (sigma * clip)
        theta = theta - eta * (total + noise)
        out.append(theta.copy())
    return np.asarray(out)


def holdout_accuracy(theta: np.ndarray, holdout) -> float:
    x, y = holdout
    return float(np.mean(np.sign(x @ theta) * y > 0))


def merged_eval(
    models: Sequence[np.ndarray],
    weights: MergeWeights,
    method: str,
    holdout,
    sample_seed: int | None = None,
) -> float:
    """Holdout utility of a merge.

    Combination scores the mixed parameter vector; selection reports the
    exact expected accuracy sum_i pi_i acc_i, or a single seeded draw
    when ``sample_seed`` is given.
    """
    from .merge_lc import lc_combine
    from .merge_rs import rs_sample

    vecs = [np.asarray(m, dtype=float) for m in models]
    if any(v.shape != vecs[0].shape for v in vecs):
        raise DimensionMismatch("models must share one shape")
    if method == "lc":
        return holdout_accuracy(lc_combine(vecs, weights), holdout)
    if method == "rs":
        if sample_seed is not None:
            return holdout_accuracy(vecs[rs_sample(weights, sample_seed)], holdout)
        return float(
            math.fsum(
                w * holdout_accuracy(v, holdout) for w, v in zip(weights, vecs)
            )
        )
    raise ValueError(f"unknown merge method {method!r}")
