import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dpmerge.core import (
    DpGuarantee,
    DpSgdMechanism,
    GaussianMechanism,
    MergeWeights,
    NegativeWeight,
    OrderGrid,
    ZeroMass,
    compositions,
    default_order_grid,
    dominates,
    integer_order_grid,
    scale_eps,
    simplex_lattice,
    validate_weights,
)


class TestValidateWeights:
    def test_degenerate_vertex(self):
        assert validate_weights([1, 0]).values == (1.0, 0.0)

    def test_normalization(self):
        assert validate_weights([2, 2]).values == (0.5, 0.5)

    def test_negative_rejected(self):
        with pytest.raises(NegativeWeight):
            validate_weights([1, -1])

    def test_zero_mass(self):
        with pytest.raises(ZeroMass):
            validate_weights([0.0, 0.0])

    def test_empty(self):
        with pytest.raises(ValueError):
            validate_weights([])

    @given(
        st.lists(
            st.floats(min_value=0.0, max_value=1e6, allow_nan=False),
            min_size=1,
            max_size=6,
        ).filter(lambda xs: sum(xs) > 0)
    )
    def test_idempotent(self, raw):
        once = validate_weights(raw)
        twice = validate_weights(once.values)
        assert once.values == twice.values
        assert abs(sum(once.values) - 1.0) <= 1e-12


class TestDominates:
    def test_examples(self):
        assert dominates(DpGuarantee(1, 1e-5), DpGuarantee(2, 1e-5))
        assert dominates(DpGuarantee(1, 1e-5), DpGuarantee(1, 1e-5))
        assert not dominates(DpGuarantee(2, 1e-6), DpGuarantee(1, 1e-5))

    @given(
        st.floats(0, 10),
        st.floats(0, 1),
        st.floats(0, 10),
        st.floats(0, 1),
        st.floats(0, 10),
        st.floats(0, 1),
    )
    def test_reflexive_transitive(self, e1, d1, e2, d2, e3, d3):
        a, b, c = DpGuarantee(e1, d1), DpGuarantee(e2, d2), DpGuarantee(e3, d3)
        assert dominates(a, a)
        if dominates(a, b) and dominates(b, c):
            assert dominates(a, c)

    def test_validation(self):
        with pytest.raises(ValueError):
            DpGuarantee(-1.0, 1e-5)
        with pytest.raises(ValueError):
            DpGuarantee(1.0, 1.5)


class TestOrderGrid:
    def test_defaults(self):
        g = default_order_grid()
        assert g.orders[0] == 1.25
        assert g.orders[-1] == 64.0
        gi = integer_order_grid()
        assert gi.integer_only and gi.orders[0] == 2.0

    def test_rejects_bad_grids(self):
        with pytest.raises(ValueError):
            OrderGrid((1.0, 2.0))
        with pytest.raises(ValueError):
            OrderGrid((3.0, 2.0))
        with pytest.raises(ValueError):
            OrderGrid((2.5, 3.0), integer_only=True)


class TestMechanisms:
    def test_gaussian_validation(self):
        with pytest.raises(ValueError):
            GaussianMechanism(1.0, 0.0)
        with pytest.raises(ValueError):
            GaussianMechanism(-1.0, 1.0)

    def test_dpsgd_lengths(self):
        with pytest.raises(ValueError):
            DpSgdMechanism((0.1, 0.1), (1.0,), (1.0, 1.0), (0.1, 0.1))
        spec = DpSgdMechanism.constant(5, 0.01, 1.0, 1.0, 0.1)
        assert spec.steps == 5
        assert spec.independent_noise

    def test_dpsgd_ranges(self):
        with pytest.raises(ValueError):
            DpSgdMechanism.constant(2, 1.5, 1.0, 1.0, 0.1)
        with pytest.raises(ValueError):
            DpSgdMechanism.constant(2, 0.5, 0.0, 1.0, 0.1)


class TestInfinityRules:
    def test_scale(self):
        assert scale_eps(0.0, math.inf) == 0.0
        assert scale_eps(0.5, math.inf) == math.inf
        assert math.inf + 1.0 == math.inf


class TestSimplex:
    def test_composition_counts(self):
        assert compositions(2, 4).shape == (10, 4)
        for total, parts in ((3, 2), (5, 3), (4, 8)):
            rows = compositions(total, parts)
            assert rows.shape[0] == math.comb(total + parts - 1, parts - 1)
            assert (rows.sum(axis=1) == total).all()

    def test_lattice_lexicographic(self):
        pts = simplex_lattice(2, 0.5)
        assert [p.values for p in pts] == [(0.0, 1.0), (0.5, 0.5), (1.0, 0.0)]

    def test_lattice_resolution_must_divide(self):
        with pytest.raises(ValueError):
            simplex_lattice(2, 0.3)

    def test_merge_weights_invariants(self):
        with pytest.raises(ValueError):
            MergeWeights((0.5, 0.6))
        with pytest.raises(NegativeWeight):
            MergeWeights((-0.1, 1.1))
