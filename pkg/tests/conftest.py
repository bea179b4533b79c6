import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from twoweight.dyadic import DyadicGrid, Instance, Weight, root

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_instance(dimension=1, depth=0, sigma=None, w=None, tau=None, p=2.0, r=2.0, q=2.0):
    grid = DyadicGrid(dimension, depth)
    sigma = np.ones(grid.n_cells) if sigma is None else sigma
    w = np.ones(grid.n_cells) if w is None else w
    tau = {root(dimension): 1.0} if tau is None else tau
    return Instance(grid, Weight(grid, sigma), Weight(grid, w), p, r, q, tau)


@pytest.fixture
def I0():
    """d=1, D=0, unit weights, the root with τ = 1, p = r = q = 2."""
    return make_instance()


@pytest.fixture
def I1():
    """d=1, D=1, σ ≡ 1, w = (4, 1), the root with τ = 1, p = r = q = 2."""
    return make_instance(depth=1, w=[4.0, 1.0])


@pytest.fixture
def I2():
    """d=1, D=2, unit weights, all seven cubes with τ = 1, p = r = q = 2."""
    grid = DyadicGrid(1, 2)
    return make_instance(depth=2, tau={c: 1.0 for c in grid.all_cubes})


EXPONENTS = [(2.0, 2.0, 2.0), (3.0, 2.0, 2.0), (2.5, 1.5, 3.0), (4.0, 4.0, 4.0)]


@st.composite
def instances(draw, max_depth=3, dimension=1, exponents=None):
    depth = draw(st.integers(0, max_depth))
    grid = DyadicGrid(dimension, depth)
    n = grid.n_cells
    pos = st.floats(0.05, 20.0, allow_nan=False)
    sigma = draw(st.lists(pos, min_size=n, max_size=n))
    w = draw(st.lists(pos, min_size=n, max_size=n))
    cubes = grid.all_cubes
    keep = draw(st.lists(st.booleans(), min_size=len(cubes), max_size=len(cubes)))
    taus = draw(st.lists(st.one_of(st.just(0.0), st.floats(1e-3, 5.0)), min_size=len(cubes), max_size=len(cubes)))
    tau = {c: t for c, t, k in zip(cubes, taus, keep) if k}
    p, r, q = draw(st.sampled_from(exponents or EXPONENTS))
    return Instance(grid, Weight(grid, sigma), Weight(grid, w), p, r, q, tau)


def cell_arrays(n, lo=0.0, hi=10.0):
    """Cell values that are 0 or of moderate size (naive oracles underflow otherwise)."""
    vals = st.one_of(st.just(0.0), st.floats(max(lo, 1e-3), hi), st.floats(-hi, -1e-3))
    if lo >= 0:
        vals = st.one_of(st.just(0.0), st.floats(max(lo, 1e-3), hi))
    return st.lists(vals, min_size=n, max_size=n).map(np.array)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
