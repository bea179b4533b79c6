import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from twoweight.dyadic import CubeId, DyadicGrid, StepFunction, Weight, root
from twoweight.operators import (ComponentFamily, apply_T, apply_Tbar, apply_Tbar_split, apply_U,
                                 canonical_sequence, canonical_values, duality_pair,
                                 maximal_function, t_coefficients, tbar_values)
from twoweight.serialize import family_from_json, family_to_json
from twoweight.suite import maximal_bound

from conftest import cell_arrays, instances, make_instance

SQ3 = math.sqrt(3.0)


class TestT:
    def test_I0(self, I0):
        fam = apply_T(I0, np.ones(1))
        assert fam.components[root(1)] == StepFunction.constant(I0.grid, 1.0)

    def test_I1(self, I1):
        fam = apply_T(I1, [2.0, 0.0])
        np.testing.assert_array_equal(fam.values, [[1.0, 1.0]])

    def test_zero(self, I2):
        assert not apply_T(I2, np.zeros(4)).values.any()


class TestTbar:
    def test_I2(self, I2):
        np.testing.assert_allclose(apply_Tbar(I2, np.ones(4)).values, SQ3, rtol=1e-15)

    def test_I1(self, I1):
        np.testing.assert_array_equal(apply_Tbar(I1, [2.0, 0.0]).values, [1.0, 1.0])

    def test_two_cubes(self):
        inst = make_instance(depth=1, tau={root(1): 1.0, CubeId(1, (0,)): 1.0})
        np.testing.assert_allclose(apply_Tbar(inst, [2.0, 0.0]).values, [math.sqrt(5), 1.0])

    @given(instances(max_depth=3), st.data())
    def test_is_norm_of_T(self, inst, data):
        f = data.draw(cell_arrays(inst.n_cells, -5, 5))
        norm = apply_T(inst, f).pointwise_norm(inst.q)
        np.testing.assert_allclose(apply_Tbar(inst, f).values, norm, rtol=1e-12, atol=1e-300)

    @given(instances(max_depth=3), st.floats(-4, 4), st.data())
    def test_homogeneous(self, inst, c, data):
        f = data.draw(cell_arrays(inst.n_cells, 0, 5))
        np.testing.assert_allclose(tbar_values(inst, c * f), abs(c) * tbar_values(inst, f),
                                   rtol=1e-12, atol=1e-300)

    @given(instances(max_depth=3), st.data())
    def test_monotone_and_sublinear(self, inst, data):
        n = inst.n_cells
        arr = cell_arrays(n, 0, 5)
        f1, extra = data.draw(arr), data.draw(arr)
        f2 = f1 + extra
        t1, t2, te = (tbar_values(inst, v) for v in (f1, f2, extra))
        assert np.all(t1 <= t2 * (1 + 1e-12))
        assert np.all(t2 <= (t1 + te) * (1 + 1e-12) + 1e-300)

    def test_tiny_values_do_not_underflow(self, I2):
        f = np.full(4, 1e-160)
        np.testing.assert_allclose(tbar_values(I2, f), SQ3 * 1e-160, rtol=1e-14)


class TestU:
    def test_I1(self, I1):
        g = ComponentFamily(I1, np.ones((1, 2)))
        np.testing.assert_array_equal(apply_U(I1, g).values, [2.5, 2.5])

    def test_zero(self, I2):
        assert not apply_U(I2, ComponentFamily.zeros(I2)).values.any()

    def test_I2(self, I2):
        g = ComponentFamily(I2, np.ones((7, 4)))
        assert apply_U(I2, g).values[0] == pytest.approx(3.0)

    def test_component_support_enforced(self, I2):
        # values outside each cube are discarded on construction
        g = ComponentFamily(I2, np.full((7, 4), 2.0))
        assert np.array_equal(g.values, 2.0 * I2.members)


class TestSplit:
    def test_I2(self, I2):
        s = apply_Tbar_split(I2, np.ones(4), CubeId(1, (0,)))
        np.testing.assert_allclose(s.inside.values, [math.sqrt(2)] * 2 + [0, 0])
        np.testing.assert_allclose(s.outside.values, [1.0] * 4)

    def test_root_only(self, I1):
        f = [3.0, 1.0]
        s = apply_Tbar_split(I1, f, root(1))
        assert s.inside == apply_Tbar(I1, f)
        assert not s.outside.values.any()

    def test_finest_cell(self, I1):
        s = apply_Tbar_split(I1, [3.0, 1.0], CubeId(1, (0,)))
        assert not s.inside.values.any()
        np.testing.assert_allclose(s.outside.values, [2.0, 2.0])

    @given(instances(max_depth=3), st.data())
    def test_split_inequality(self, inst, data):
        f = data.draw(cell_arrays(inst.n_cells, 0, 5))
        cube = data.draw(st.sampled_from(inst.grid.all_cubes))
        s = apply_Tbar_split(inst, f, cube)
        # the split sees only cubes comparable with Q, so it controls T̄ on Q
        on_q = inst.grid.cells(cube)
        bound = (s.inside.values + s.outside.values)[on_q]
        assert np.all(tbar_values(inst, f)[on_q] <= bound * (1 + 1e-12))


class TestCanonical:
    def test_I0(self, I0):
        np.testing.assert_array_equal(canonical_sequence(I0, [1.0]).values, [[1.0]])

    def test_two_equal_terms(self):
        inst = make_instance(depth=1, tau={root(1): 1.0, CubeId(1, (0,)): 1.0})
        a = canonical_values(inst, np.array([1.0, 1.0]))
        np.testing.assert_allclose(a[:, 0], [2 ** -0.5] * 2)

    def test_I2(self, I2):
        a = canonical_values(I2, np.ones(4))
        active = a[:, 0][I2.members[:, 0] > 0]
        np.testing.assert_allclose(active, 3 ** -0.5)
        np.testing.assert_allclose(np.sum(a**2, axis=0), 1.0)

    def test_zero_set(self):
        inst = make_instance(depth=1, tau={CubeId(1, (0,)): 1.0})
        a = canonical_values(inst, np.array([1.0, 1.0]))
        np.testing.assert_array_equal(a[:, 1], 0.0)

    @given(instances(max_depth=3), st.data())
    def test_unit_norm_and_hoelder_equality(self, inst, data):
        f = data.draw(cell_arrays(inst.n_cells, 0, 5))
        a = canonical_values(inst, f)
        tb = tbar_values(inst, f)
        pos = tb > 0
        if not a.size:
            return
        norm = np.sum(a**inst.q_conj, axis=0) ** (1 / inst.q_conj)
        np.testing.assert_allclose(norm[pos], 1.0, rtol=1e-10)
        assert np.all(norm[~pos] == 0)
        pair = t_coefficients(inst, f) @ a
        np.testing.assert_allclose(pair[pos], tb[pos], rtol=1e-10)


class TestMaximal:
    def test_examples(self):
        g1 = DyadicGrid(1, 1)
        one = Weight(g1, [1.0, 1.0])
        np.testing.assert_array_equal(maximal_function(StepFunction(g1, [4.0, 0.0]), one).values,
                                      [4.0, 2.0])
        np.testing.assert_array_equal(
            maximal_function(StepFunction.constant(g1, -3.0), one).values, [3.0, 3.0])
        g2 = DyadicGrid(1, 2)
        np.testing.assert_array_equal(
            maximal_function(StepFunction(g2, [8.0, 0, 0, 0]), Weight(g2, np.ones(4))).values,
            [8.0, 4.0, 2.0, 2.0])

    @given(instances(max_depth=4), st.sampled_from([1.5, 2.0, 3.0]), st.data())
    def test_doob_bound(self, inst, s, data):
        g = data.draw(cell_arrays(inst.n_cells, 0, 10))
        om = inst.sigma.values
        m = maximal_function(StepFunction(inst.grid, g), inst.sigma).values
        lhs = np.sum(m**s * om) ** (1 / s)
        rhs = np.sum(g**s * om) ** (1 / s)
        assert lhs <= maximal_bound(s) * rhs * (1 + 1e-12) + 1e-300
        assert np.all(m >= g * (1 - 1e-12))


class TestDuality:
    def test_I1(self, I1):
        dp = duality_pair(I1, np.ones(2), ComponentFamily(I1, np.ones((1, 2))))
        assert dp.lhs == pytest.approx(2.5) and dp.rhs == pytest.approx(2.5)

    def test_zero(self, I2):
        dp = duality_pair(I2, np.ones(4), ComponentFamily.zeros(I2))
        assert dp.lhs == dp.rhs == 0.0

    def test_I2(self, I2):
        dp = duality_pair(I2, np.ones(4), ComponentFamily(I2, np.ones((7, 4))))
        # three cubes of total mass 1 per level, each with average 1
        assert dp.lhs == pytest.approx(3.0) and dp.rhs == pytest.approx(3.0)

    @given(instances(max_depth=3), st.integers(0, 2**32 - 1))
    def test_adjoint(self, inst, seed):
        rng = np.random.default_rng(seed)
        for _ in range(100):
            f = rng.standard_normal(inst.n_cells)
            g = ComponentFamily(inst, rng.standard_normal((len(inst.collection), inst.n_cells)))
            dp = duality_pair(inst, f, g)
            assert dp.lhs == pytest.approx(dp.rhs, rel=1e-10, abs=1e-12)


@given(instances(max_depth=3), st.integers(0, 1000))
def test_family_json_round_trip(inst, seed):
    rng = np.random.default_rng(seed)
    fam = ComponentFamily(inst, rng.random((len(inst.collection), inst.n_cells)))
    back = family_from_json(inst, family_to_json(fam))
    assert np.array_equal(back.values, fam.values)
