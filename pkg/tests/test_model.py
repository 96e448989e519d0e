import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from permanence import fixtures as F
from permanence.model import (
    IRREDUCIBLE,
    PRIMITIVE,
    DomainError,
    ExtinctionFace,
    NumericOverflowError,
    SignPattern,
    StructuralError,
    StructuredModel,
    StructuredState,
    irreducible_components,
    lattice,
    proper_faces,
    step,
    validate,
)
from permanence.zoo import LotkaVolterraSpec, build_lv


def scalar_model(fn, box=(10.0,), mode=PRIMITIVE):
    def evaluator(x):
        return [np.asarray(fn(x))[..., None, None]]
    return StructuredModel(dims=(1,), evaluator=evaluator, patterns=(SignPattern([[1]]),),
                           box_upper=np.array(box), mode=mode)


class TestState:
    def test_blocks_and_norms(self):
        s = StructuredState.from_blocks([[1.0], [0.5, 0.25]])
        assert s.dims == (1, 2)
        np.testing.assert_array_equal(s.norms(), [1.0, 0.75])
        assert [b.tolist() for b in s.blocks] == [[1.0], [0.5, 0.25]]

    def test_rejects_negative_and_nonfinite(self):
        with pytest.raises(ValueError):
            StructuredState([-1.0, 1.0], (1, 1))
        with pytest.raises(ValueError):
            StructuredState([np.inf, 1.0], (1, 1))

    def test_rejects_wrong_dims(self):
        with pytest.raises(StructuralError):
            StructuredState([1.0, 1.0, 1.0], (1, 1))

    def test_immutable(self):
        s = StructuredState([1.0, 2.0], (1, 1))
        with pytest.raises(ValueError):
            s.values[0] = 3.0

    def test_face(self):
        s = StructuredState([1.0, 0.0, 1e-16], (1, 1, 1))
        assert s.face() == ExtinctionFace(frozenset({0}), 3)
        assert not s.face().is_interior
        assert StructuredState([1.0, 1.0], (1, 1)).face().is_interior


def test_proper_faces_exclude_interior():
    faces = proper_faces(3)
    assert len(faces) == 7
    assert faces[0] == ExtinctionFace(frozenset(), 3)
    assert all(not f.is_interior for f in faces)


class TestStep:
    def test_fixed_point(self, ricker):
        assert step(ricker, [1.0]).values[0] == 1.0

    def test_zero_is_invariant(self, symmetric):
        np.testing.assert_array_equal(step(symmetric, [0.0, 0.0]).values, [0.0, 0.0])

    def test_hand_value(self, ricker):
        assert step(ricker, [2.0]).values[0] == pytest.approx(2.0 * math.exp(-1.0), rel=1e-15)
        assert step(ricker, [2.0]).values[0] == pytest.approx(0.73576, abs=1e-5)

    def test_dimension_mismatch(self, symmetric):
        with pytest.raises(StructuralError):
            step(symmetric, [1.0])

    def test_overflow_names_species(self):
        model = build_lv(LotkaVolterraSpec(B=[[-1.0, 0.0], [0.0, 1.0]], c=[0.0, 800.0]), box=[1.0, 1.0])
        with pytest.raises(NumericOverflowError) as err:
            step(model, [0.5, 1.0])
        assert err.value.species == 1

    def test_sir_domain(self, sir):
        with pytest.raises(DomainError):
            step(sir, [1.0, 0.8, 0.5])


class TestValidate:
    def test_lv_box_passes(self, symmetric):
        grid = lattice(np.zeros(2), symmetric.box_upper, 9)
        assert validate(symmetric, grid).passed

    def test_negative_entry_is_h1(self):
        model = scalar_model(lambda x: 1.0 - x[..., 0])
        rep = validate(model, [[0.5], [2.0]])
        assert rep.h1 and rep.h1[0]["state"] == [2.0]

    def test_sir_reducible_block(self, sir):
        grid = lattice(np.zeros(3), sir.box_upper, 6, interior=True)
        grid = grid[grid[:, 0] > grid[:, 1] + grid[:, 2]]
        primitive = validate(sir, grid, mode=PRIMITIVE)
        assert any("not primitive" in v.get("structure", "") for v in primitive.h2)
        assert validate(sir, grid, mode=IRREDUCIBLE).passed

    def test_escape_is_h3(self):
        model = scalar_model(lambda x: np.full(x.shape[:-1], 2.0), box=(1.0,))
        rep = validate(model, [[0.9]])
        assert rep.h3 and rep.h3[0]["kind"] == "escape"

    def test_entry_from_outside(self, ricker):
        rep = validate(ricker, [[3.0], [0.5]])
        assert rep.passed

    def test_empty_grid(self, ricker):
        with pytest.raises(ValueError):
            validate(ricker, np.zeros((0, 1)))


class TestComponents:
    def test_sir_second_block(self):
        assert irreducible_components(SignPattern([[1, 1], [0, 1]])) == [(0,), (1,)]

    def test_primitive_is_one_component(self):
        assert irreducible_components(SignPattern([[1, 1], [1, 0]])) == [(0, 1)]

    def test_diagonal(self):
        assert sorted(irreducible_components(SignPattern(np.eye(3)))) == [(0,), (1,), (2,)]

    def test_primitivity(self):
        assert SignPattern([[0, 1], [1, 1]]).is_primitive()
        assert not SignPattern([[0, 1], [1, 0]]).is_primitive()  # period two
        assert SignPattern([[0, 1], [1, 0]]).is_irreducible()


@given(arrays(np.bool_, st.tuples(st.integers(1, 7), st.integers(1, 7)).map(lambda t: (t[0], t[0]))))
def test_components_match_graph_oracle(entries):
    pattern = SignPattern(entries)
    comps = irreducible_components(pattern)
    g = nx.DiGraph()
    g.add_nodes_from(range(len(entries)))
    g.add_edges_from(zip(*np.nonzero(entries)))
    assert sorted(comps) == sorted(tuple(sorted(c)) for c in nx.strongly_connected_components(g))
    # topological order of the condensation: no edge points to an earlier component
    where = {v: k for k, comp in enumerate(comps) for v in comp}
    assert all(where[u] <= where[v] for u, v in g.edges)
    oracle = nx.is_strongly_connected(g) and nx.is_aperiodic(g) if len(g) > 1 else bool(entries[0, 0])
    assert pattern.is_primitive() == oracle


def _random_states(model, rng, count):
    x = rng.uniform(0.0, 1.0, size=(count, model.n)) * 1.5 * model.box_upper
    absent = rng.random((count, model.m)) < 0.3
    off = model.offsets
    for i in range(model.m):
        x[absent[:, i], off[i]:off[i + 1]] = 0.0
    return x[model.in_domain(x)]


@pytest.mark.parametrize("name", ["symmetric-lv", "annual", "mirrored-meta", "ricker"])
def test_nonnegativity_and_face_invariance(name, rng):
    model = F.FIXTURES[name]()
    x = _random_states(model, rng, 2000)
    y = model.apply(x)
    assert np.all(y >= 0)
    extinct = model.block_norms(x) == 0
    assert np.all(model.block_norms(y)[extinct] == 0)


def test_lattice():
    pts = lattice([0, 0], [1, 2], 3)
    assert pts.shape == (9, 2) and pts.min() == 0 and pts[:, 1].max() == 2
    inner = lattice([0, 0], [1, 1], 3, interior=True)
    assert inner.min() == 0.25 and inner.max() == 0.75


def test_model_rejects_bad_box():
    with pytest.raises(StructuralError):
        scalar_model(lambda x: x[..., 0], box=(1.0, 2.0))


def test_matrix_shape_checked():
    bad = StructuredModel(dims=(2,), evaluator=lambda x: [np.ones(x.shape[:-1] + (1, 1))],
                          patterns=(SignPattern(np.ones((2, 2))),), box_upper=np.ones(2))
    with pytest.raises(StructuralError):
        bad.matrices(np.ones(2))
