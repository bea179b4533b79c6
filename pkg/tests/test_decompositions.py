import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from twoweight import decompositions as dec
from twoweight.dyadic import CubeId, DyadicGrid, root
from twoweight.harness import SweepConfig, gen_instance
from twoweight.suite import corona_bound, occurrence_bound

from conftest import cell_arrays, instances, make_instance


def C(level, *index):
    return CubeId(level, index)


class TestWhitney:
    def test_half(self):
        g = DyadicGrid(1, 2)
        fam = dec.whitney(g, np.array([True, True, False, False]))
        assert fam.cubes == (C(2, 0), C(2, 1))

    def test_single_cell(self):
        g = DyadicGrid(1, 2)
        fam = dec.whitney(g, np.array([False, False, True, False]))
        assert fam.cubes == (C(3, 4), C(3, 5))

    def test_everything(self):
        g = DyadicGrid(2, 1)
        fam = dec.whitney(g, np.ones(4, dtype=bool))
        assert set(fam.cubes) == set(root(2).children())

    def test_empty(self):
        assert dec.whitney(DyadicGrid(1, 2), np.zeros(4, dtype=bool)).cubes == ()

    @given(st.sampled_from([(1, 0), (1, 1), (1, 3), (1, 4), (2, 1), (2, 2)]), st.data())
    def test_invariants(self, shape, data):
        g = DyadicGrid(*shape)
        omega = np.array(data.draw(st.lists(st.booleans(), min_size=g.n_cells,
                                            max_size=g.n_cells)))
        fam = dec.whitney(g, omega)
        chk = dec.check_whitney(g, fam)
        assert chk.ok(g.dimension), chk
        # parents overlap at most 2^d times: the family is the children of maximal full cubes
        if fam.cubes:
            assert chk.max_parent_overlap <= 2**g.dimension
            assert chk.max_crowd <= 2 ** (g.dimension + 1)
        # every cube with its parent inside omega lies inside some family cube
        for c in g.all_cubes:
            if c.level >= 1 and g.fraction(c.parent()) @ ~omega == 0:
                assert any(Q.contains(c) for Q in fam.cubes)


class TestLevelSets:
    def test_I1(self, I1):
        ls = dec.level_sets(I1, np.ones(2))
        ks = {l.k: l for l in ls}
        assert ks[-1].omega.all() and not ks[0].omega.any()
        assert ks[-1].family.cubes == (C(1, 0), C(1, 1))

    def test_zero_tau(self):
        inst = make_instance(depth=2, tau={root(1): 0.0})
        assert dec.level_sets(inst, np.ones(4)) == []

    def test_I2(self, I2):
        lv = dec.Levels(I2, np.ones(4))
        assert lv.window == (-1, 1)
        assert lv.omega(0).all() and lv.omega(-1).all() and not lv.omega(1).any()

    @given(instances(max_depth=4), st.data())
    def test_nested_families(self, inst, data):
        f = data.draw(cell_arrays(inst.n_cells, 0, 5))
        lv = dec.Levels(inst, f)
        if lv.window is None:
            return
        lo, hi = lv.window
        for l in range(lo - 2, hi + 1):
            for k in range(l + 1, hi + 1):
                for Q in lv.family(l).cubes:
                    for Qp in lv.family(k).cubes:
                        assert not (Qp != Q and Qp.contains(Q))


class TestEk:
    def test_I1(self, I1):
        sets = dec.ek_sets(I1, np.ones(2), -3)
        assert len(sets) == 2
        for Q, e in sets.items():
            np.testing.assert_array_equal(e, I1.grid.fraction(Q))

    def test_empty_upper(self, I1):
        sets = dec.ek_sets(I1, np.ones(2), -1)  # Ω_1 = ∅
        assert all(not e.any() for e in sets.values())

    def test_I2(self, I2):
        for Q, e in dec.ek_sets(I2, np.ones(4), -2).items():
            np.testing.assert_array_equal(e, I2.grid.fraction(Q))

    @given(instances(max_depth=4), st.data())
    def test_identity(self, inst, data):
        f = data.draw(cell_arrays(inst.n_cells, 0, 5))
        lv = dec.Levels(inst, f)
        for k in lv.analysis_levels():
            sets = dec.ek_sets(inst, f, k, levels=lv)
            band = lv.omega(k + 2) & ~lv.omega(k + 3)
            total = sum(sets.values(), np.zeros(inst.n_cells))
            np.testing.assert_array_equal(total, band.astype(float))
            for Q, e in sets.items():
                assert np.all(e <= inst.grid.fraction(Q))


class TestMaxPrinciple:
    def test_root_only(self, I1):
        lv = dec.Levels(I1, np.ones(2))
        for Q in lv.family(-1).cubes:
            res = dec.max_principle_check(I1, np.ones(2), -1, Q, levels=lv)
            assert res.out_val_max == 0.0 and res.passed

    def test_support_in_grandparent(self, I2):
        f = np.ones(4)
        lv = dec.Levels(I2, f)
        for Q in lv.family(0).cubes:
            assert Q.parent().parent() == CubeId(-1, (0,))
            assert dec.max_principle_check(I2, f, 0, Q, levels=lv).far_val_max == 0.0

    def test_I2(self, I2):
        f = np.ones(4)
        lv = dec.Levels(I2, f)
        for Q in lv.family(0).cubes:
            res = dec.max_principle_check(I2, f, 0, Q, levels=lv)
            assert res.passed and res.inner_passed

    def test_not_whitney(self, I2):
        with pytest.raises(dec.NotWhitneyCube):
            dec.max_principle_check(I2, np.ones(4), 0, root(1))

    @given(instances(max_depth=4), st.data())
    def test_everywhere(self, inst, data):
        f = data.draw(cell_arrays(inst.n_cells, 0, 5))
        lv = dec.Levels(inst, f)
        for k in lv.analysis_levels():
            for Q in lv.family(k).cubes:
                res = dec.max_principle_check(inst, f, k, Q, levels=lv)
                assert res.passed and res.inner_passed, (k, Q, res)


class TestCorona:
    def test_constant(self, I2):
        fam = dec.corona(I2, np.ones(4), I2.grid.all_cubes)
        assert fam.principal_cubes == [root(1)]
        assert set(fam.gamma.values()) == {root(1)}

    def test_spike(self, I2):
        # averages 2, 4, 8 along the chain; only a strict doubling starts a new cube
        f = np.array([8.0, 0, 0, 0])
        fam = dec.corona(I2, f, I2.grid.all_cubes)
        assert fam.principal_cubes == [root(1), C(2, 0)]
        assert fam.gamma[C(1, 0)] == root(1)
        s = dec.corona_carleson_sum(I2, f, fam)
        assert (s.lhs, s.rhs) == (pytest.approx(20.0), pytest.approx(16.0))
        assert dec.check_corona(I2, f, I2.grid.all_cubes, fam).ok

    def test_single(self, I2):
        fam = dec.corona(I2, np.array([1.0, 5, 2, 0]), [C(1, 1)])
        assert fam.principal_cubes == [C(1, 1)] and fam.gamma == {C(1, 1): C(1, 1)}

    def test_empty(self, I2):
        assert dec.corona(I2, np.ones(4), []).principal_cubes == []

    def test_sum_constant(self, I2):
        fam = dec.corona(I2, np.ones(4), I2.grid.all_cubes)
        s = dec.corona_carleson_sum(I2, np.ones(4), fam)
        assert (s.lhs, s.rhs) == (1.0, 1.0)

    def test_tau_independent(self, I2):
        f = np.array([3.0, 0.5, 0, 9])
        other = I2.with_tau({root(1): 7.0})
        a = dec.corona(I2, f, I2.grid.all_cubes)
        b = dec.corona(other, f, I2.grid.all_cubes)
        assert a.principal_cubes == b.principal_cubes and a.gamma == b.gamma

    @given(instances(max_depth=4), st.data())
    def test_properties(self, inst, data):
        f = data.draw(cell_arrays(inst.n_cells, 0, 10))
        cubes = data.draw(st.sets(st.sampled_from(inst.grid.all_cubes)))
        fam = dec.corona(inst, f, cubes)
        assert dec.check_corona(inst, f, cubes, fam).ok
        s = dec.corona_carleson_sum(inst, f, fam)
        assert s.lhs <= corona_bound(inst.r) * s.rhs * (1 + 1e-12)


class TestNeighbors:
    def test_empty_upper(self, I1):
        lv = dec.Levels(I1, np.ones(2))
        for Q in lv.family(-3).cubes:
            nb = dec.neighbor_families(lv, -3, Q)
            assert nb.R_k == [] and nb.union_covers and nb.union_within

    def test_dual_constancy_empty(self, I1):
        lv = dec.Levels(I1, np.ones(2))
        Q = lv.family(-1).cubes[0]  # E_{-1} = Q ∩ (Ω_1 − Ω_2) = ∅
        res = dec.dual_constancy_check(I1, np.ones(2), -1, Q, Q, levels=lv)
        assert res.constant and not any(res.values)

    @given(instances(max_depth=4), st.data())
    def test_union_and_constancy(self, inst, data):
        f = data.draw(cell_arrays(inst.n_cells, 0, 10))
        lv = dec.Levels(inst, f)
        for k in lv.analysis_levels():
            for Q in lv.family(k).cubes:
                nb = dec.neighbor_families(lv, k, Q)
                assert nb.union_covers and nb.union_within
                assert nb.crowd <= 2 ** (inst.grid.dimension + 1)
                for R in nb.R_k:
                    assert dec.dual_constancy_check(inst, f, k, Q, R, levels=lv).constant


class TestClassify:
    def test_I1(self, I1):
        cl = dec.classify_cubes(I1, np.ones(2), -3, 0.01)
        assert cl.classes[0] == [] and cl.classes[2] == []
        assert len(cl.classes[1]) == 2
        assert all(cl.beta[Q] == 0.0 < cl.alpha[Q] for Q in cl.classes[1])

    def test_empty_E(self, I1):
        cl = dec.classify_cubes(I1, np.ones(2), -1, 0.01)
        assert len(cl.classes[0]) == 2

    def test_eta_range(self, I1):
        with pytest.raises(ValueError):
            dec.classify_cubes(I1, np.ones(2), -1, 1.5)

    @given(instances(max_depth=4), st.data())
    def test_partition(self, inst, data):
        f = data.draw(cell_arrays(inst.n_cells, 0, 10))
        lv = dec.Levels(inst, f)
        for k in lv.analysis_levels():
            cl = dec.classify_cubes(inst, f, k, 0.01, levels=lv)
            allq = [Q for c in cl.classes for Q in c]
            assert sorted(allq) == sorted(lv.family(k).cubes)


class TestOccurrence:
    def test_zero(self):
        inst = make_instance(depth=2, tau={root(1): 0.0})
        assert dec.occurrence_count(inst, np.ones(4)) == {}

    def test_depth5(self, capsys):
        cfg = SweepConfig(seed=11, depth_range=(5, 5), weight_profile="lognormal")
        inst = gen_instance(cfg, 0)
        f = np.random.default_rng(0).pareto(1.5, inst.n_cells)
        counts = dec.occurrence_count(inst, f, 0.1)
        top = max(counts.values(), default=0)
        print(f"depth-5 instance, eta=0.1: max c(R) = {top}")
        assert top <= 16

    @given(instances(max_depth=4), st.data())
    def test_bound(self, inst, data):
        f = data.draw(cell_arrays(inst.n_cells, 0, 10))
        counts = dec.occurrence_count(inst, f, 0.01)
        assert max(counts.values(), default=0) <= occurrence_bound(0.01)
