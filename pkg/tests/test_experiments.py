import collections
import math

import numpy as np
import pytest

from dpmerge.core import DpSgdMechanism, validate_weights
from dpmerge.experiments import (
    FrontierPoint,
    MeanEstConfig,
    Method,
    dpsgd_train,
    gen_blobs,
    gen_mean_data,
    holdout_accuracy,
    mean_est_analytic_mse,
    mean_est_empirical,
    mean_est_frontier,
    merged_eval,
    pareto_extract,
    _sampling_variance,
)


CFG = MeanEstConfig()


def frontier_by_method(points):
    by = collections.defaultdict(list)
    for p in points:
        by[p.method].append(p)
    return by


class TestGenMeanData:
    def test_reproducible_single_value(self):
        cfg = MeanEstConfig(n=1)
        a = gen_mean_data(cfg)
        b = gen_mean_data(cfg)
        assert a.shape == (1,)
        assert a[0] == b[0]
        assert -1.0 <= a[0] <= 1.0

    def test_large_sample_mean_near_zero(self):
        cfg = MeanEstConfig(n=10**5)
        x = gen_mean_data(cfg)
        assert abs(x.mean()) < 4.0 / math.sqrt(cfg.n)

    def test_degenerate_clip(self):
        cfg = MeanEstConfig(clip_range=(0.0, 0.0))
        assert (gen_mean_data(cfg) == 0.0).all()


class TestAnalyticMse:
    def test_vertex(self):
        sampling = _sampling_variance(CFG.n, CFG.clip_range)
        got = mean_est_analytic_mse(Method.RS_RDP, 1.0, CFG)
        assert got == pytest.approx(CFG.noise_stds[0] ** 2 + sampling, abs=1e-15)

    def test_rs_arithmetic(self):
        cfg = MeanEstConfig(noise_stds=(1.0, 2.0))
        sampling = _sampling_variance(cfg.n, cfg.clip_range)
        got = mean_est_analytic_mse(Method.RS_PLD, 0.5, cfg)
        assert got == pytest.approx(2.5 + sampling, abs=1e-12)

    def test_lc_optimum_matches_calculus(self):
        s1, s2 = (v**2 for v in CFG.noise_stds)
        best_w = s2 / (s1 + s2)
        best = mean_est_analytic_mse(Method.LC_RDP, best_w, CFG)
        scan = min(
            mean_est_analytic_mse(Method.LC_RDP, w, CFG)
            for w in np.linspace(0, 1, 2001)
        )
        sampling = _sampling_variance(CFG.n, CFG.clip_range)
        assert best == pytest.approx(s1 * s2 / (s1 + s2) + sampling, abs=1e-12)
        assert best <= scan + 1e-12


@pytest.fixture(scope="module")
def points():
    return mean_est_frontier(CFG)


class TestFrontier:

    def test_vertices_coincide_across_methods(self, points):
        by = frontier_by_method(points)
        for vertex in ((1.0, 0.0), (0.0, 1.0)):
            rdp_eps = {
                m: next(p.eps for p in by[m] if p.weights == vertex)
                for m in (Method.RS_RDP, Method.LC_RDP)
            }
            pld_eps = {
                m: next(p.eps for p in by[m] if p.weights == vertex)
                for m in (Method.RS_PLD, Method.LC_PLD)
            }
            assert rdp_eps[Method.RS_RDP] == pytest.approx(
                rdp_eps[Method.LC_RDP], abs=1e-9
            )
            assert pld_eps[Method.RS_PLD] == pytest.approx(
                pld_eps[Method.LC_PLD], abs=2e-6
            )
            mses = {
                m: next(p.utility for p in by[m] if p.weights == vertex)
                for m in Method
            }
            assert len(set(round(v, 15) for v in mses.values())) == 1

    def test_lc_dominates_rs_on_matched_targets(self, points):
        by = frontier_by_method(points)
        eps_all = [p.eps for p in by[Method.RS_RDP]] + [
            p.eps for p in by[Method.LC_RDP]
        ]
        for target in np.linspace(min(eps_all), max(eps_all), 50):
            rs_best = min(
                (p.utility for p in by[Method.RS_RDP] if p.eps <= target),
                default=math.inf,
            )
            lc_best = min(
                (p.utility for p in by[Method.LC_RDP] if p.eps <= target),
                default=math.inf,
            )
            assert lc_best <= rs_best + 1e-9

    def test_pld_tighter_than_rdp_at_every_weight(self, points):
        by = frontier_by_method(points)
        for rdp_m, pld_m in (
            (Method.RS_RDP, Method.RS_PLD),
            (Method.LC_RDP, Method.LC_PLD),
        ):
            for p_rdp, p_pld in zip(by[rdp_m], by[pld_m]):
                assert p_pld.weights == p_rdp.weights
                assert p_pld.eps <= p_rdp.eps + 1e-9

    def test_frontiers_are_monotone_tradeoffs(self, points):
        by = frontier_by_method(points)
        for m in Method:
            front = pareto_extract(by[m], higher_utility_is_better=False)
            eps = [p.eps for p in front]
            mse = [p.utility for p in front]
            assert eps == sorted(eps)
            assert all(a >= b - 1e-15 for a, b in zip(mse, mse[1:]))


class TestEmpirical:
    def test_matches_analytic_within_four_stderr(self):
        points = mean_est_empirical(CFG)
        for p in points:
            method = (
                Method.RS_RDP if p.method is Method.RS_RDP else Method.LC_RDP
            )
            want = mean_est_analytic_mse(method, p.weights[0], CFG)
            assert abs(p.utility - want) <= 4 * p.utility_stderr

    def test_zero_noise_gives_sampling_variance(self):
        # degenerate config is rejected; assert the guard instead
        with pytest.raises(ValueError):
            MeanEstConfig(noise_stds=(0.0, 0.0))


class TestPareto:
    def test_single_point(self):
        p = FrontierPoint(Method.RS_RDP, (1.0,), 1.0, 1e-5, 0.9)
        assert pareto_extract([p]) == [p]

    def test_dominated_point_removed(self):
        a = FrontierPoint(Method.RS_RDP, (1.0,), 1.0, 1e-5, 0.9)
        b = FrontierPoint(Method.RS_RDP, (1.0,), 2.0, 1e-5, 0.8)
        assert pareto_extract([a, b]) == [a]

    def test_proper_tradeoff_kept(self):
        pts = [
            FrontierPoint(Method.RS_RDP, (1.0,), e, 1e-5, u)
            for e, u in ((1.0, 0.5), (2.0, 0.7), (3.0, 0.9))
        ]
        assert pareto_extract(pts) == pts

    def test_ties_kept(self):
        a = FrontierPoint(Method.RS_RDP, (1.0,), 1.0, 1e-5, 0.9)
        b = FrontierPoint(Method.RS_RDP, (0.0,), 1.0, 1e-5, 0.9)
        assert len(pareto_extract([a, b])) == 2

    def test_idempotent(self, rng):
        pts = [
            FrontierPoint(
                Method.RS_RDP,
                (1.0,),
                float(rng.uniform(0, 5)),
                1e-5,
                float(rng.uniform(0, 1)),
            )
            for _ in range(40)
        ]
        once = pareto_extract(pts)
        assert pareto_extract(once) == once


class TestDpSgdTrain:
    def test_noiseless_full_batch_matches_gd(self):
        x, y = gen_blobs(200, 4, 3.0, seed=1)
        # clip far above any gradient norm, noise std sigma*C ~ 1e-13
        spec = DpSgdMechanism.constant(10, 1.0, 1e9, 1e-22, 0.1)
        traj = dpsgd_train(spec, (x, y), seed=2)

        from scipy.special import expit

        theta = np.zeros(4)
        for _ in range(10):
            margins = y * (x @ theta)
            grad = (-(y * expit(-margins))[:, None] * x).sum(axis=0)
            theta = theta - 0.1 * grad
        np.testing.assert_allclose(traj[-1], theta, atol=1e-7)

    def test_clip_contract(self):
        x, y = gen_blobs(100, 4, 3.0, seed=1)
        clip = 0.05

        from dpmerge.experiments import _logistic_grads

        theta = np.zeros(4)
        grads = _logistic_grads(theta, x, y)
        norms = np.linalg.norm(grads, axis=1)
        scale = np.minimum(1.0, clip / np.maximum(norms, 1e-300))
        assert (np.linalg.norm(grads * scale[:, None], axis=1) <= clip + 1e-12).all()

    def test_seeds_change_trajectory_not_accounting(self):
        x, y = gen_blobs(100, 4, 3.0, seed=1)
        spec = DpSgdMechanism.constant(5, 0.5, 1.0, 1.0, 0.1)
        a = dpsgd_train(spec, (x, y), seed=1)
        b = dpsgd_train(spec, (x, y), seed=2)
        assert not np.allclose(a[-1], b[-1])
        # accounting depends only on the spec, not on data or seed
        from dpmerge.core import integer_order_grid
        from dpmerge.rdp import curve_for_spec

        assert curve_for_spec(spec, integer_order_grid(16)).values == (
            curve_for_spec(spec, integer_order_grid(16)).values
        )

    def test_trajectory_shape(self):
        x, y = gen_blobs(50, 3, 2.0, seed=0)
        spec = DpSgdMechanism.constant(4, 0.2, 1.0, 1.0, 0.1)
        traj = dpsgd_train(spec, (x, y), seed=0)
        assert traj.shape == (5, 3)
        assert (traj[0] == 0).all()


class TestMergedEval:
    def test_vertex_weights(self):
        x, y = gen_blobs(400, 3, 3.0, seed=3)
        models = [np.array([1.0, 0.0, 0.0]), np.array([-1.0, 0.0, 0.0])]
        acc0 = holdout_accuracy(models[0], (x, y))
        got = merged_eval(models, validate_weights([1, 0]), "rs", (x, y))
        assert got == pytest.approx(acc0, abs=1e-12)
        got = merged_eval(models, validate_weights([1, 0]), "lc", (x, y))
        assert got == pytest.approx(acc0, abs=1e-12)

    def test_rs_expected_utility_linear(self):
        x, y = gen_blobs(400, 3, 3.0, seed=3)
        models = [np.array([1.0, 0.0, 0.0]), np.array([-1.0, 0.0, 0.0])]
        accs = [holdout_accuracy(m, (x, y)) for m in models]
        for w in (0.0, 0.3, 0.7):
            got = merged_eval(models, validate_weights([w, 1 - w]), "rs", (x, y))
            assert got == pytest.approx(w * accs[0] + (1 - w) * accs[1], abs=1e-12)

    def test_lc_identical_models(self):
        x, y = gen_blobs(400, 3, 3.0, seed=3)
        m = np.array([0.5, -0.2, 0.1])
        got = merged_eval([m, m], validate_weights([0.4, 0.6]), "lc", (x, y))
        assert got == pytest.approx(holdout_accuracy(m, (x, y)), abs=1e-12)

    def test_sampled_realization_flag(self):
        x, y = gen_blobs(400, 3, 3.0, seed=3)
        models = [np.array([1.0, 0.0, 0.0]), np.array([-1.0, 0.0, 0.0])]
        got = merged_eval(
            models, validate_weights([1, 0]), "rs", (x, y), sample_seed=0
        )
        assert got == holdout_accuracy(models[0], (x, y))
