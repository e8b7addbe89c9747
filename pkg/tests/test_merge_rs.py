import itertools
import json
import math

import numpy as np
import pytest

from dpmerge.core import (
    DpGuarantee,
    GaussianMechanism,
    GridMismatch,
    integer_order_grid,
    validate_weights,
)
from dpmerge.merge_rs import (
    Accountant,
    best_feasible,
    export_feasible_json,
    rs_dp_eps,
    rs_feasible_candidates,
    rs_feasible_set,
    rs_pld_delta,
    rs_pld_epsilon,
    rs_rdp_curve,
    rs_sample,
)
from dpmerge.oracle import GaussianMixture1D, analytic_gaussian_delta, renyi_quadrature
from dpmerge.pld import gaussian_pld, pld_delta
from dpmerge.rdp import RdpCurve, gaussian_rdp_curve, rdp_to_dp

from conftest import random_monotone_curve, random_weights

GRID = integer_order_grid(32)


def curves_for(sigmas, grid=GRID, sensitivity=1.0):
    return [
        gaussian_rdp_curve(GaussianMechanism(sensitivity, s), grid)
        for s in sigmas
    ]


class TestRsRdpCurve:
    def test_degenerate_mixture_is_exact(self):
        c1, c2 = curves_for([1.0, 2.0])
        out = rs_rdp_curve([c1, c2], validate_weights([1, 0]))
        assert out.values == c1.values

    def test_equal_inputs(self):
        c = RdpCurve(GRID, (0.7,) * len(GRID))
        out = rs_rdp_curve([c, c], validate_weights([0.3, 0.7]))
        for v in out.values:
            assert v == pytest.approx(0.7, abs=1e-12)

    def test_hand_value_and_oracle_direction(self):
        # alpha=2 with eps 0.5 and 2.0 at equal weights
        c1 = RdpCurve(GRID, tuple(0.5 for _ in GRID.orders))
        c2 = RdpCurve(GRID, tuple(2.0 for _ in GRID.orders))
        out = rs_rdp_curve([c1, c2], validate_weights([0.5, 0.5]))
        expected = math.log(0.5 * math.e**0.5 + 0.5 * math.e**2)
        assert out.values[0] == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(1.5083, abs=1e-4)
        # the bound dominates the true divergence of the matching mixture:
        # models N(0,1) vs N(1,1) scaled so D_2 = 0.5 and 2.0
        sig1 = math.sqrt(2 / (2 * 0.5))  # D_2 = 2/(2 sig^2)
        sig2 = math.sqrt(2 / (2 * 2.0))
        p = GaussianMixture1D(((0.5, 1.0, sig1**2), (0.5, 1.0, sig2**2)))
        q = GaussianMixture1D(((0.5, 0.0, sig1**2), (0.5, 0.0, sig2**2)))
        assert out.values[0] >= renyi_quadrature(p, q, 2.0) - 1e-9

    def test_zero_weight_infinite_model_harmless(self):
        c1 = curves_for([1.0])[0]
        inf_curve = RdpCurve(GRID, (math.inf,) * len(GRID))
        out = rs_rdp_curve([c1, inf_curve], validate_weights([1, 0]))
        assert out.values == c1.values

    def test_nonzero_weight_infinite_model_absorbs(self):
        c1 = curves_for([1.0])[0]
        inf_curve = RdpCurve(GRID, (math.inf,) * len(GRID))
        out = rs_rdp_curve([c1, inf_curve], validate_weights([0.5, 0.5]))
        assert all(v == math.inf for v in out.values)

    def test_grid_mismatch(self):
        c1 = curves_for([1.0])[0]
        c2 = curves_for([1.0], grid=integer_order_grid(16))[0]
        with pytest.raises(GridMismatch):
            rs_rdp_curve([c1, c2], validate_weights([0.5, 0.5]))


class TestRsDpEps:
    def test_vertex_consistency(self):
        curves = curves_for([1.0, 2.0])
        for i, pi in enumerate(([1, 0], [0, 1])):
            got = rs_dp_eps(curves, validate_weights(pi), 1e-5)
            want = rdp_to_dp(curves[i], 1e-5).eps
            assert got == pytest.approx(want, abs=1e-12)

    def test_identical_models_any_weight(self):
        curves = curves_for([1.0, 1.0])
        single = rdp_to_dp(curves[0], 1e-5).eps
        for w in (0.0, 0.3, 0.8):
            got = rs_dp_eps(curves, validate_weights([w, 1 - w]), 1e-5)
            assert got == pytest.approx(single, abs=1e-12)

    def test_mixture_strictly_between_vertices(self):
        curves = curves_for([1.0, 2.0])
        lo = rdp_to_dp(curves[1], 1e-5).eps  # sigma=2 is more private
        hi = rdp_to_dp(curves[0], 1e-5).eps
        mid = rs_dp_eps(curves, validate_weights([0.5, 0.5]), 1e-5)
        assert lo < mid < hi


class TestRsPldDelta:
    def test_vertex(self):
        plds = [gaussian_pld(GaussianMechanism(1, s)) for s in (1.0, 2.0)]
        got = rs_pld_delta(plds, validate_weights([0, 1]), 1.0)
        assert got == pytest.approx(pld_delta(plds[1], 1.0), abs=1e-15)

    def test_identical_models(self):
        plds = [gaussian_pld(GaussianMechanism(1, 1))] * 2
        single = pld_delta(plds[0], 1.0)
        for w in (0.2, 0.5, 0.9):
            got = rs_pld_delta(plds, validate_weights([w, 1 - w]), 1.0)
            assert got == pytest.approx(single, abs=1e-15)

    def test_convex_combination_against_analytic(self):
        plds = [gaussian_pld(GaussianMechanism(1, s)) for s in (1.0, 2.0)]
        got = rs_pld_delta(plds, validate_weights([0.3, 0.7]), 1.0)
        want = 0.3 * analytic_gaussian_delta(1.0, 1.0) + 0.7 * analytic_gaussian_delta(0.5, 1.0)
        assert got == pytest.approx(want, abs=2e-4)
        assert got >= want - 1e-12  # certified side stays above the oracle


class TestFeasibleSet:
    def test_loose_target_keeps_everything(self):
        models = [GaussianMechanism(1, 1), GaussianMechanism(1, 2)]
        feas = rs_feasible_set(
            models, DpGuarantee(50.0, 1e-5), 0.1, Accountant.RDP
        )
        assert len(feas) == 11

    def test_tight_target_empty(self):
        models = [GaussianMechanism(1, 1), GaussianMechanism(1, 2)]
        feas = rs_feasible_set(
            models, DpGuarantee(0.01, 1e-5), 0.1, Accountant.RDP
        )
        assert feas == []

    def test_boundary_monotone_toward_private_model(self):
        # sigma 1.0 vs 0.5: model 0 is more private; midway target splits
        # the lattice at a single boundary in the weight on model 0
        models = [GaussianMechanism(1, 1.0), GaussianMechanism(1, 0.5)]
        eps0 = rdp_to_dp(
            gaussian_rdp_curve(models[0], GRID), 1e-5
        ).eps
        eps1 = rdp_to_dp(
            gaussian_rdp_curve(models[1], GRID), 1e-5
        ).eps
        target = DpGuarantee(0.5 * (eps0 + eps1), 1e-5)
        feas = rs_feasible_set(models, target, 0.02, Accountant.RDP, grid=GRID)
        weights_on_private = sorted(pi.values[0] for pi in feas)
        assert weights_on_private, "midway target should be reachable"
        assert (1.0, 0.0) in {pi.values for pi in feas}
        assert (0.0, 1.0) not in {pi.values for pi in feas}
        # passing set is an upper segment: all weights above the boundary pass
        lattice = [j / 50 for j in range(51)]
        boundary = min(weights_on_private)
        assert weights_on_private == [w for w in lattice if w >= boundary]

    def test_pld_accountant_agrees_with_direct_check(self):
        models = [GaussianMechanism(1, 1.0), GaussianMechanism(1, 2.0)]
        target = DpGuarantee(1.0, 1e-5)
        feas = rs_feasible_set(models, target, 0.25, Accountant.PLD)
        plds = [gaussian_pld(m) for m in models]
        expected = [
            pi
            for pi in (validate_weights([j / 4, 1 - j / 4]) for j in range(5))
            if rs_pld_delta(plds, pi, 1.0) <= 1e-5
        ]
        assert [tuple(p) for p in feas] == [tuple(p.values) for p in expected]

    def test_candidates_export(self):
        models = [GaussianMechanism(1, 1), GaussianMechanism(1, 2)]
        cands = rs_feasible_candidates(
            models, DpGuarantee(10.0, 1e-5), 0.5, Accountant.RDP
        )
        payload = json.loads(export_feasible_json(cands, 1e-5))
        assert len(payload) == 3
        assert set(payload[0]) == {"weights", "eps", "delta", "accountant"}


class TestRsSample:
    def test_vertices(self):
        assert rs_sample(validate_weights([1, 0]), seed=0) == 0
        assert rs_sample(validate_weights([0, 0, 1]), seed=1) == 2

    def test_deterministic(self):
        pi = validate_weights([0.4, 0.6])
        draws = [rs_sample(pi, seed=7) for _ in range(5)]
        assert len(set(draws)) == 1

    def test_frequencies(self):
        pi = validate_weights([0.5, 0.5])
        n = 10**6
        counts = sum(rs_sample(pi, seed=s) == 0 for s in range(n))
        # binomial 4-sigma band around 1/2
        assert abs(counts / n - 0.5) < 0.002


class TestInvariants:
    def test_battery(self, rng):
        for trial in range(200):
            n = int(rng.integers(2, 5))
            curves = [random_monotone_curve(rng, GRID) for _ in range(n)]
            pi = random_weights(rng, n)
            mixed = rs_rdp_curve(curves, pi)
            arr = np.array([c.values for c in curves])
            active = np.array(pi.values) > 0
            for j, alpha in enumerate(GRID.orders):
                vals = arr[active, j]
                v = mixed.values[j]
                assert vals.min() - 1e-10 <= v <= vals.max() + 1e-10
                jensen = sum(
                    w * x for w, x in zip(pi.values, arr[:, j]) if w > 0
                )
                assert v >= jensen - 1e-10

    def test_permutation_equivariance(self, rng):
        curves = [random_monotone_curve(rng, GRID) for _ in range(3)]
        plds = [
            gaussian_pld(GaussianMechanism(1, s)) for s in (0.8, 1.0, 1.6)
        ]
        pi = validate_weights([0.2, 0.3, 0.5])
        base_eps = rs_dp_eps(curves, pi, 1e-5)
        base_delta = rs_pld_delta(plds, pi, 1.0)
        for perm in itertools.permutations(range(3)):
            pperm = validate_weights([pi.values[i] for i in perm])
            assert rs_dp_eps(
                [curves[i] for i in perm], pperm, 1e-5
            ) == pytest.approx(base_eps, abs=1e-12)
            assert rs_pld_delta(
                [plds[i] for i in perm], pperm, 1.0
            ) == pytest.approx(base_delta, abs=1e-15)

    def test_pld_eps_tighter_than_rdp(self):
        sigmas = (1.0, 2.0)
        curves = curves_for(sigmas)
        plds = [gaussian_pld(GaussianMechanism(1, s)) for s in sigmas]
        for w in (0.0, 0.25, 0.5, 0.75, 1.0):
            pi = validate_weights([w, 1 - w])
            eps_rdp = rs_dp_eps(curves, pi, 1e-5)
            eps_pld = rs_pld_epsilon(plds, pi, 1e-5)
            assert eps_pld <= eps_rdp


def test_best_feasible_linear_utility():
    feas = [validate_weights([w, 1 - w]) for w in (0.0, 0.5, 1.0)]
    assert best_feasible(feas, [1.0, 0.0]).values == (1.0, 0.0)
    assert best_feasible(feas, [0.0, 1.0]).values == (0.0, 1.0)
    # ties resolve to the first feasible entry
    assert best_feasible(feas, [1.0, 1.0]).values == (0.0, 1.0)
    with pytest.raises(ValueError):
        best_feasible([], [1.0])
