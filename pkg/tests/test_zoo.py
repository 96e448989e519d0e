import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from permanence import fixtures as F
from permanence.dynamics import simulate
from permanence.model import IRREDUCIBLE, StructuralError, validate, lattice
from permanence.zoo import (
    AnnualPlantSpec,
    LotkaVolterraSpec,
    MetacommunitySpec,
    SirSpec,
    build_annual,
    build_lv,
    build_meta,
    build_sir,
)


class TestLotkaVolterra:
    def test_box(self, symmetric):
        np.testing.assert_allclose(symmetric.box_upper, [1.0, 1.0])

    def test_growth_factor(self, symmetric):
        A = symmetric.matrices(np.array([0.2, 0.4]))
        assert A[0][0, 0] == pytest.approx(math.exp(1.0 - 0.2 - 0.2))
        assert A[1][0, 0] == pytest.approx(math.exp(1.0 - 0.1 - 0.4))

    def test_nonnegative_diagonal_needs_box(self):
        with pytest.raises(StructuralError):
            build_lv(LotkaVolterraSpec(B=[[0.0]], c=[1.0]))
        assert build_lv(LotkaVolterraSpec(B=[[0.0]], c=[1.0]), box=[5.0]).box_upper[0] == 5.0

    def test_shape_mismatch(self):
        with pytest.raises(StructuralError):
            LotkaVolterraSpec(B=[[-1.0, 0.0]], c=[1.0])


class TestAnnual:
    def test_full_germination_without_seed_bank_is_lv(self):
        # g = 1, s = 0 and Y = 1 give exp(1 - C x), the LV map with B = -C and c = 1
        spec = AnnualPlantSpec(g=[1.0, 1.0], Y=[1.0, 1.0], s=[0.0, 0.0], C=[[1.0, 0.5], [0.5, 1.0]])
        plant = build_annual(spec)
        lv = build_lv(LotkaVolterraSpec(B=[[-1.0, -0.5], [-0.5, -1.0]], c=[1.0, 1.0]))
        a = simulate(plant, [0.3, 0.6], 1000, 0).states
        b = simulate(lv, [0.3, 0.6], 1000, 0).states
        np.testing.assert_allclose(a, b, rtol=1e-13, atol=0)

    def test_box(self):
        assert F.annual().box_upper[0] == pytest.approx(1.0 / 0.9)

    @pytest.mark.parametrize("field,value", [("g", [0.0, 0.5]), ("s", [1.0, 0.5]), ("Y", [0.0, 1.0])])
    def test_parameter_ranges(self, field, value):
        kw = dict(g=[0.5, 0.5], Y=[1.0, 1.0], s=[0.5, 0.5], C=[[1.0, 1.0], [1.0, 1.0]])
        kw[field] = value
        with pytest.raises(ValueError):
            AnnualPlantSpec(**kw)


class TestMetacommunity:
    def test_single_patch_is_lv(self):
        spec = MetacommunitySpec(B=[[[1.0, 0.5], [0.5, 1.0]]], c=[[1.0, 1.0]], D=[[[1.0]], [[1.0]]])
        meta = build_meta(spec)
        lv = F.symmetric_lv()
        a = simulate(meta, [0.3, 0.6], 500, 0).states
        b = simulate(lv, [0.3, 0.6], 500, 0).states
        np.testing.assert_array_equal(a, b)

    def test_identity_dispersal_needs_irreducible_mode(self):
        eye = np.stack([np.eye(2), np.eye(2)])
        spec = MetacommunitySpec(B=F.mirrored_meta_spec().B, c=F.mirrored_meta_spec().c, D=eye)
        with pytest.raises(StructuralError):
            build_meta(spec)
        model = build_meta(spec, mode=IRREDUCIBLE)
        assert model.mode == IRREDUCIBLE

    def test_column_stochastic(self):
        D = np.array([[0.9, 0.2], [0.1, 0.9]])  # second column sums to 1.1
        with pytest.raises(StructuralError):
            MetacommunitySpec(B=F.mirrored_meta_spec().B, c=F.mirrored_meta_spec().c, D=[D, D])

    def test_block_structure(self, meta):
        x = np.array([0.5, 0.2, 0.1, 0.7])
        A0 = meta.matrices(x)[0]
        spec = F.mirrored_meta_spec()
        f = np.exp(spec.c[:, 0] - spec.B[:, 0, 0] * x[:2] - spec.B[:, 0, 1] * x[2:])
        np.testing.assert_allclose(A0, np.diag(f) @ spec.D[0], rtol=1e-14)

    def test_dispersal_conserves_offspring(self, meta):
        # column-stochastic D moves offspring between patches without loss
        x = np.array([0.3, 0.1, 0.0, 0.0])
        A0 = meta.matrices(x)[0]
        row = x[:2] @ A0
        f = np.exp(F.mirrored_meta_spec().c[:, 0] - x[:2])
        assert row.sum() == pytest.approx((x[:2] * f).sum(), rel=1e-14)


class TestSir:
    def test_u_limit_and_series(self):
        spec = F.SIR_ENDEMIC
        assert spec.u(0.0) == spec.beta
        for y in (1e-12, 1e-8, 3e-6, 1e-3, 0.5):
            exact = -math.expm1(-spec.beta * y) / y
            assert spec.u(y) == pytest.approx(exact, rel=1e-12)

    @given(st.floats(0.0, 50.0))
    def test_u_bounds(self, y):
        spec = F.SIR_ENDEMIC
        u = float(spec.u(y))
        assert 0.0 < u <= spec.beta
        assert u * y <= 1.0 + 1e-15

    def test_matrices_at_disease_free_state(self, sir):
        q = math.exp(-0.2)
        A1, A2 = sir.matrices(np.array([2.0, 0.0, 0.0]))
        assert A1[0, 0] == pytest.approx(1.0 / 3.0 + q)
        np.testing.assert_allclose(A2, [[q * 2.0 * 3.0, q], [0.0, q]], rtol=1e-15)

    def test_disease_free_equilibrium_is_fixed(self):
        for spec in (F.SIR_ENDEMIC, F.SIR_DISEASE_FREE):
            n = spec.disease_free_equilibrium()
            assert n * (1.0 / (1.0 + spec.c * n) + math.exp(-spec.m)) == pytest.approx(n, rel=1e-14)

    def test_needs_irreducible_mode(self, sir):
        grid = lattice(np.zeros(3), sir.box_upper, 5, interior=True)
        grid = grid[grid[:, 0] > grid[:, 1] + grid[:, 2]]
        assert validate(sir, grid, mode=IRREDUCIBLE).passed
        assert not validate(sir, grid, mode="primitive").passed

    def test_population_constraint_preserved(self, sir, rng):
        n = rng.uniform(0, sir.box_upper[0], 5000)
        split = rng.dirichlet([1, 1, 1], 5000)
        x = np.column_stack([n, n * split[:, 1], n * split[:, 2]])
        y = sir.apply(x)
        assert np.all(y[:, 0] >= y[:, 1] + y[:, 2] - 1e-12 * y[:, 0])

    def test_general_recruitment(self):
        spec = SirSpec(m=0.5, beta=2.0, f=lambda n: 0.2 * np.exp(-n))
        model = build_sir(spec, box=[20.0, 20.0, 20.0])
        assert model.kernel is None
        traj = simulate(model, [1.0, 0.1, 0.0], 200, 0)
        assert traj.error is None

    def test_general_recruitment_tail_checked(self):
        with pytest.raises(ValueError):
            SirSpec(m=0.1, beta=2.0, f=lambda n: np.full_like(np.asarray(n, float), 0.5))

    def test_general_recruitment_needs_box(self):
        with pytest.raises(StructuralError):
            build_sir(SirSpec(m=0.5, beta=2.0, f=lambda n: 0.2 * np.exp(-n)))
