import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from twoweight.dyadic import (CubeId, DyadicGrid, GridRangeError, StepFunction, StructureError,
                              Weight, average_lebesgue, average_weighted, conjugate, cube_geometry,
                              integrate, mass, root, superlevel_set)
from twoweight.serialize import dumps_instance, instance_from_json, instance_to_json

from conftest import cell_arrays, instances


def test_conjugate():
    assert conjugate(2.0) == 2.0
    assert conjugate(3.0) == pytest.approx(1.5)
    assert 1 / 4.0 + 1 / conjugate(4.0) == pytest.approx(1.0)


class TestCubeGeometry:
    def test_root_d1(self):
        g = DyadicGrid(1, 2)
        geo = cube_geometry(g, root(1))
        assert geo.parent == CubeId(-1, (0,))  # origin-anchored virtual ancestor [0, 2)
        assert geo.children == [CubeId(1, (0,)), CubeId(1, (1,))]
        assert geo.measure == 1.0

    def test_quarter(self):
        g = DyadicGrid(1, 2)
        geo = cube_geometry(g, CubeId(2, (1,)))
        assert geo.parent == CubeId(1, (0,))
        assert geo.measure == 0.25

    def test_root_d2(self):
        geo = cube_geometry(DyadicGrid(2, 1), root(2))
        assert len(geo.children) == 4
        assert geo.measure == 1.0

    def test_range_errors(self):
        g = DyadicGrid(1, 1)
        with pytest.raises(GridRangeError):
            cube_geometry(g, CubeId(g.max_level + 1, (0,)))
        with pytest.raises(GridRangeError):
            cube_geometry(g, CubeId(g.min_level - 1, (0,)))
        with pytest.raises(GridRangeError):
            CubeId(1, (2,))

    def test_padding_bounds(self):
        g = DyadicGrid(1, 3)
        assert g.min_level == -2 and g.max_level == 5
        assert cube_geometry(g, CubeId(-2, (0,))).parent is None
        assert cube_geometry(g, CubeId(5, (0,))).children == []

    def test_children_partition(self):
        g = DyadicGrid(2, 2)
        for c in g.all_cubes:
            kids = c.children()
            total = sum(g.fraction(k) for k in kids)
            np.testing.assert_allclose(total, g.fraction(c))
            assert all(c.contains(k) and k.parent() == c for k in kids)

    def test_cell_count(self):
        for d, D in [(1, 0), (1, 3), (2, 2)]:
            assert DyadicGrid(d, D).n_cells == 2 ** (d * D)

    def test_json(self):
        c = CubeId(3, (5,))
        assert CubeId.from_json(c.to_json()) == c


class TestIntegrate:
    def test_examples(self):
        g = DyadicGrid(1, 1)
        one = Weight(g, [1.0, 1.0])
        assert integrate(StepFunction(g, [1.0, 3.0]), one, root(1)) == 2.0
        assert integrate(StepFunction.constant(g, 1.0), Weight(g, [4.0, 1.0]), root(1)) == 2.5
        assert integrate(StepFunction.constant(g, 0.0), Weight(g, [7.0, 2.0]), CubeId(1, (1,))) == 0.0

    def test_cell_set_region(self):
        g = DyadicGrid(1, 2)
        f = StepFunction(g, [1.0, 2.0, 3.0, 4.0])
        assert integrate(f, None, np.array([True, False, False, True])) == 1.25

    def test_mismatched_grids(self):
        with pytest.raises(StructureError):
            integrate(StepFunction.constant(DyadicGrid(1, 1), 1.0),
                      Weight(DyadicGrid(1, 2), np.ones(4)), root(1))

    @given(instances(max_depth=4))
    def test_additivity(self, inst):
        g = inst.grid
        f = inst.sigma
        for c in g.all_cubes:
            if c.level == g.depth:
                continue
            whole = integrate(f, inst.w, c)
            parts = sum(integrate(f, inst.w, k) for k in c.children())
            assert parts == pytest.approx(whole, rel=1e-12)


class TestAverages:
    def test_lebesgue(self):
        g = DyadicGrid(1, 1)
        f = StepFunction(g, [2.0, 0.0])
        assert average_lebesgue(f, root(1)) == 1.0
        assert average_lebesgue(f, CubeId(1, (0,))) == 2.0
        # zero extension halves the average on the virtual parent
        assert average_lebesgue(f, CubeId(-1, (0,))) == 0.5

    def test_weighted(self):
        g = DyadicGrid(1, 1)
        assert average_weighted(StepFunction(g, [4.0, 0.0]), Weight(g, [1.0, 1.0]), root(1)) == 2.0
        assert average_weighted(StepFunction(g, [1.0, 3.0]), Weight(g, [3.0, 1.0]), root(1)) == 1.5
        val, empty = average_weighted(StepFunction(g, [4.0, 0.0]), Weight(g, [1.0, 1.0]),
                                      CubeId(-1, (1,)), with_flag=True)
        assert (val, empty) == (0.0, True)

    @given(instances(max_depth=3), st.floats(-5, 5))
    def test_constant_average(self, inst, c):
        f = StepFunction.constant(inst.grid, c)
        for cube in inst.grid.all_cubes:
            assert average_weighted(f, inst.sigma, cube) == pytest.approx(c, abs=1e-12)
            one = StepFunction.constant(inst.grid, 1.0)
            assert average_weighted(one, inst.w, cube) == pytest.approx(1.0, rel=1e-12)


class TestSuperlevel:
    def test_examples(self):
        g = DyadicGrid(1, 1)
        f = StepFunction(g, [2.0, 1.0])
        assert superlevel_set(f, 1.5).tolist() == [True, False]
        assert superlevel_set(f, 0.5).all()
        assert not superlevel_set(f, 2.0).any()

    @given(cell_arrays(8), st.floats(0, 10), st.floats(0, 10))
    def test_monotone(self, vals, a, b):
        f = StepFunction(DyadicGrid(1, 3), vals)
        lo, hi = sorted((a, b))
        assert np.all(superlevel_set(f, hi) <= superlevel_set(f, lo))


def test_weight_positive():
    g = DyadicGrid(1, 1)
    with pytest.raises(ValueError):
        Weight(g, [1.0, 0.0])


def test_step_function_point_eval():
    g = DyadicGrid(2, 1)
    f = StepFunction(g, [1.0, 2.0, 3.0, 4.0])  # lexicographic: (0,0), (0,1), (1,0), (1,1)
    assert f((0.1, 0.7)) == 2.0
    assert f((0.6, 0.2)) == 3.0
    assert f((1.2, 0.2)) == 0.0


@given(instances(max_depth=3))
def test_padding_neutral(inst):
    """More virtual levels leave every in-grid quantity unchanged."""
    wide = DyadicGrid(1, inst.grid.depth, padding_up=4, padding_down=5)
    s = StepFunction(wide, inst.sigma.values)
    for c in inst.grid.all_cubes:
        assert integrate(s, None, c) == integrate(inst.sigma, None, c)
        assert mass(Weight(wide, inst.w.values), c) == mass(inst.w, c)


@given(instances(max_depth=3))
def test_json_round_trip(inst):
    text = dumps_instance(inst)
    back = instance_from_json(instance_to_json(inst))
    assert dumps_instance(back) == text
    assert back.tau == inst.tau
    assert np.array_equal(back.sigma.values, inst.sigma.values)
    assert (back.p, back.r, back.q) == (inst.p, inst.r, inst.q)


def test_instance_validation():
    g = DyadicGrid(1, 1)
    one = Weight(g, [1.0, 1.0])
    from twoweight.dyadic import Instance
    with pytest.raises(ValueError):
        Instance(g, one, one, 2.0, 3.0, 2.0, {})  # r > p
    with pytest.raises(ValueError):
        Instance(g, one, one, 2.0, 2.0, 1.0, {})  # q = 1
    with pytest.raises(GridRangeError):
        Instance(g, one, one, 2.0, 2.0, 2.0, {CubeId(2, (0,)): 1.0})  # virtual refinement
    with pytest.raises(ValueError):
        Instance(g, one, one, 2.0, 2.0, 2.0, {root(1): -1.0})
    inst = Instance(g, one, one, 3.0, 2.0, 4.0, {})
    assert math.isclose(inst.p_conj, 1.5) and inst.r_conj == 2.0
