"""Finite dyadic grids over [0,1)^d, step functions, weights and instances.

Cells are the cubes of the finest level ``depth``; every function is a vector
of one value per cell, ordered lexicographically by the cell's index.  Two
kinds of virtual cubes exist around the grid:

* ancestors of the root (negative levels) which carry no mass outside
  [0,1)^d;
* refinements of a finest cell (levels above ``depth``) on which every step
  function is constant.

Index convention for negative levels: the cube ``(l, idx)`` with ``l < 0`` is
``prod [idx_i 2^{-l}, (idx_i + 1) 2^{-l})``, so ``idx = 0`` is the ancestor
chain of [0,1)^d and any other index is a cube with zero mass.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence, Union

import numpy as np


class GridRangeError(ValueError):
    """A cube lies outside the padded range of its grid."""


class StructureError(ValueError):
    """Objects built on different grids were combined, or shapes disagree."""


def conjugate(x: float) -> float:
    """Hölder conjugate ``x / (x - 1)``; ``inf`` for ``x == 1``."""
    if x == 1.0:
        return float("inf")
    return x / (x - 1.0)


@dataclass(frozen=True, order=True)
class CubeId:
    level: int
    index: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "index", tuple(int(i) for i in self.index))
        object.__setattr__(self, "level", int(self.level))
        if any(i < 0 for i in self.index):
            raise GridRangeError(f"negative index in {self}")
        if self.level >= 0 and any(i >= 2**self.level for i in self.index):
            raise GridRangeError(f"{self} does not lie inside [0,1)^d")

    @property
    def dimension(self) -> int:
        return len(self.index)

    def parent(self) -> "CubeId":
        return CubeId(self.level - 1, tuple(i >> 1 for i in self.index))

    def ancestor(self, level: int) -> "CubeId":
        if level > self.level:
            raise ValueError(f"level {level} is finer than {self}")
        shift = self.level - level
        return CubeId(level, tuple(i >> shift for i in self.index))

    def children(self) -> list["CubeId"]:
        offsets = itertools.product((0, 1), repeat=self.dimension)
        return [CubeId(self.level + 1, tuple(2 * i + o for i, o in zip(self.index, off)))
                for off in offsets]

    def contains(self, other: "CubeId") -> bool:
        """Inclusion of closed-open cubes (``self ⊇ other``)."""
        if other.level < self.level:
            return False
        return other.ancestor(self.level) == self

    def intersects(self, other: "CubeId") -> bool:
        return self.contains(other) or other.contains(self)

    @property
    def inside_unit_cube(self) -> bool:
        return self.level >= 0

    def to_json(self) -> dict:
        return {"level": self.level, "index": list(self.index)}

    @classmethod
    def from_json(cls, obj: Mapping) -> "CubeId":
        return cls(int(obj["level"]), tuple(int(i) for i in obj["index"]))

    def __str__(self) -> str:
        return f"({self.level}; {','.join(map(str, self.index))})"


def root(dimension: int) -> CubeId:
    return CubeId(0, (0,) * dimension)


@dataclass(frozen=True)
class DyadicGrid:
    dimension: int
    depth: int
    padding_up: int = 2
    padding_down: int = 2

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        if self.depth < 0:
            raise ValueError("depth must be non-negative")
        if self.padding_up < 2 or self.padding_down < 2:
            raise ValueError("padding must be at least 2 levels each way")

    @property
    def n_cells(self) -> int:
        return 2 ** (self.dimension * self.depth)

    @property
    def side(self) -> int:
        return 2**self.depth

    @property
    def cell_measure(self) -> float:
        return 2.0 ** (-self.dimension * self.depth)

    @property
    def min_level(self) -> int:
        return -self.padding_up

    @property
    def max_level(self) -> int:
        return self.depth + self.padding_down

    def check(self, cube: CubeId) -> CubeId:
        if cube.dimension != self.dimension:
            raise StructureError(f"{cube} has dimension {cube.dimension}, grid has {self.dimension}")
        if not self.min_level <= cube.level <= self.max_level:
            raise GridRangeError(
                f"{cube} outside padded levels {self.min_level}..{self.max_level}")
        return cube

    @cached_property
    def cell_indices(self) -> np.ndarray:
        """(n_cells, d) integer array of cell indices at level ``depth``."""
        shape = (self.side,) * self.dimension
        idx = np.array(np.unravel_index(np.arange(self.n_cells), shape)).T
        return idx.reshape(self.n_cells, self.dimension)

    def cell_of(self, index: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(index), (self.side,) * self.dimension))

    def cube_of_cell(self, cell: int) -> CubeId:
        return CubeId(self.depth, tuple(self.cell_indices[cell]))

    def cubes(self, level: int) -> list[CubeId]:
        if not 0 <= level <= self.depth:
            raise GridRangeError(f"level {level} is not a grid level")
        n = 2**level
        return [CubeId(level, idx) for idx in itertools.product(range(n), repeat=self.dimension)]

    @cached_property
    def all_cubes(self) -> tuple[CubeId, ...]:
        """Every grid cube of levels ``0..depth``, coarse to fine."""
        return tuple(c for lev in range(self.depth + 1) for c in self.cubes(lev))

    @cached_property
    def cube_position(self) -> dict[CubeId, int]:
        return {c: i for i, c in enumerate(self.all_cubes)}

    @cached_property
    def membership(self) -> np.ndarray:
        """0/1 matrix (len(all_cubes), n_cells); row i marks cells of cube i."""
        m = np.stack([self._cells_mask(c) for c in self.all_cubes]).astype(float)
        m.setflags(write=False)
        return m

    def _cells_mask(self, cube: CubeId) -> np.ndarray:
        lev = min(cube.level, self.depth)
        if cube.level < 0:
            hit = all(i == 0 for i in cube.index)
            return np.full(self.n_cells, hit)
        anc = self.cell_indices >> (self.depth - lev)
        if cube.level > self.depth:
            target = np.array(cube.ancestor(self.depth).index)
        else:
            target = np.array(cube.index)
        return np.all(anc == target, axis=1)

    def fraction(self, cube: CubeId) -> np.ndarray:
        """Fraction of each finest cell covered by ``cube``.

        1 on the cells of a cube of level <= depth, ``2^{-d(l-depth)}`` on the
        single parent cell of a virtual refinement, and 1 everywhere for the
        ancestors of the root.
        """
        self.check(cube)
        mask = self._cells_mask(cube).astype(float)
        if cube.level > self.depth:
            mask *= 2.0 ** (-self.dimension * (cube.level - self.depth))
        return mask

    def cells(self, cube: CubeId) -> np.ndarray:
        """Boolean mask of the finest cells meeting ``cube``."""
        self.check(cube)
        return self._cells_mask(cube)

    def measure(self, cube: CubeId) -> float:
        return 2.0 ** (-self.dimension * cube.level)


CellSet = np.ndarray
"""Boolean mask over the finest cells of a grid."""


@dataclass(frozen=True)
class CubeGeometry:
    parent: CubeId | None
    children: list[CubeId]
    measure: float


def cube_geometry(grid: DyadicGrid, cube: CubeId) -> CubeGeometry:
    grid.check(cube)
    parent = cube.parent() if cube.level > grid.min_level else None
    children = cube.children() if cube.level < grid.max_level else []
    return CubeGeometry(parent, children, grid.measure(cube))


def _frozen(values: Iterable[float], n: int) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    if arr.shape != (n,):
        raise StructureError(f"expected {n} cell values, got {arr.shape[0]}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StepFunction:
    grid: DyadicGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values, self.grid.n_cells))

    @classmethod
    def constant(cls, grid: DyadicGrid, c: float) -> "StepFunction":
        return cls(grid, np.full(grid.n_cells, float(c)))

    @classmethod
    def indicator(cls, grid: DyadicGrid, cube: CubeId) -> "StepFunction":
        return cls(grid, grid.fraction(cube) > 0)

    def __call__(self, point: Sequence[float]) -> float:
        x = np.asarray(point, dtype=float)
        if np.any(x < 0) or np.any(x >= 1):
            return 0.0
        idx = np.floor(x * self.grid.side).astype(int)
        return float(self.values[self.grid.cell_of(idx)])

    def __eq__(self, other):
        if not isinstance(other, StepFunction):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.values, other.values)

    __hash__ = None


class Weight(StepFunction):
    """Strictly positive step function."""

    def __post_init__(self):
        super().__post_init__()
        if not np.all(self.values > 0) or not np.all(np.isfinite(self.values)):
            raise ValueError("weights must be finite and strictly positive on every cell")


Region = Union[CubeId, np.ndarray]


def _same_grid(*objs) -> DyadicGrid:
    grids = {o.grid for o in objs if o is not None}
    if len(grids) != 1:
        raise StructureError("step functions live on different grids")
    return grids.pop()


def _region_fraction(grid: DyadicGrid, region: Region) -> np.ndarray:
    if isinstance(region, CubeId):
        return grid.fraction(region)
    arr = np.asarray(region)
    if arr.shape != (grid.n_cells,):
        raise StructureError("cell set does not match the grid")
    return arr.astype(float)


def integrate(f: StepFunction, mu: StepFunction | None, region: Region) -> float:
    """``∫_region f dμ``; ``mu=None`` is Lebesgue measure."""
    grid = _same_grid(f, mu)
    dens = f.values if mu is None else f.values * mu.values
    return float(np.sum(dens * _region_fraction(grid, region)) * grid.cell_measure)


def mass(mu: StepFunction | None, region: Region, grid: DyadicGrid | None = None) -> float:
    """``μ(region)``."""
    if mu is None:
        if grid is None:
            raise StructureError("Lebesgue mass needs a grid")
        return float(np.sum(_region_fraction(grid, region)) * grid.cell_measure) \
            if not isinstance(region, CubeId) else grid.measure(region)
    return integrate(StepFunction.constant(mu.grid, 1.0), mu, region)


def average_lebesgue(g: StepFunction, cube: CubeId) -> float:
    return integrate(g, None, cube) / g.grid.measure(cube)


def average_weighted(g: StepFunction, omega: StepFunction, cube: CubeId,
                     with_flag: bool = False):
    """``ω(Q)^{-1} ∫_Q g ω``.

    A cube with no ω-mass (a virtual cube disjoint from [0,1)^d) has average
    0; ``with_flag=True`` returns ``(value, zero_mass)``.
    """
    total = mass(omega, cube)
    if total == 0.0:
        return (0.0, True) if with_flag else 0.0
    val = integrate(g, omega, cube) / total
    return (val, False) if with_flag else val


def superlevel_set(g: StepFunction, lam: float) -> CellSet:
    return g.values > lam


def lp_norm(g: np.ndarray, mu: np.ndarray, s: float, grid: DyadicGrid) -> float:
    """``‖g‖_{L^s(μ)}`` for cell arrays."""
    return float(np.sum(np.abs(g) ** s * mu) * grid.cell_measure) ** (1.0 / s)


@dataclass(frozen=True, eq=False)
class Instance:
    """Grid, weights, exponents and the coefficient family τ on a collection."""

    grid: DyadicGrid
    sigma: Weight
    w: Weight
    p: float
    r: float
    q: float
    tau: Mapping[CubeId, float]
    p_conj: float = field(init=False)
    r_conj: float = field(init=False)
    q_conj: float = field(init=False)

    def __post_init__(self):
        _same_grid(self.sigma, self.w)
        if self.sigma.grid != self.grid:
            raise StructureError("weights are not on the instance grid")
        if not 1 < self.r <= self.p < float("inf"):
            raise ValueError(f"need 1 < r <= p < inf, got r={self.r}, p={self.p}")
        if not 1 < self.q < float("inf"):
            raise ValueError(f"need 1 < q < inf, got q={self.q}")
        tau = {}
        for cube, t in sorted(self.tau.items()):
            self.grid.check(cube)
            if not 0 <= cube.level <= self.grid.depth:
                raise GridRangeError(f"collection cube {cube} is not a grid cube of levels 0..D")
            if not t >= 0:
                raise ValueError(f"tau must be non-negative, got {t} at {cube}")
            tau[cube] = float(t)
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "q", float(self.q))
        object.__setattr__(self, "p_conj", conjugate(self.p))
        object.__setattr__(self, "r_conj", conjugate(self.r))
        object.__setattr__(self, "q_conj", conjugate(self.q))

    @property
    def collection(self) -> tuple[CubeId, ...]:
        return tuple(self.tau)

    @property
    def n_cells(self) -> int:
        return self.grid.n_cells

    # Dense views used by the vectorised kernels.  Rows follow ``collection``.
    @cached_property
    def members(self) -> np.ndarray:
        if not self.tau:
            return np.zeros((0, self.n_cells))
        pos = self.grid.cube_position
        return self.grid.membership[[pos[c] for c in self.collection]]

    @cached_property
    def volumes(self) -> np.ndarray:
        return np.array([self.grid.measure(c) for c in self.collection])

    @cached_property
    def tau_vec(self) -> np.ndarray:
        return np.array([self.tau[c] for c in self.collection], dtype=float)

    def with_tau(self, tau: Mapping[CubeId, float]) -> "Instance":
        return Instance(self.grid, self.sigma, self.w, self.p, self.r, self.q, dict(tau))

    def with_exponents(self, p=None, r=None, q=None) -> "Instance":
        return Instance(self.grid, self.sigma, self.w,
                        self.p if p is None else p, self.r if r is None else r,
                        self.q if q is None else q, self.tau)

    def step(self, values) -> StepFunction:
        return StepFunction(self.grid, values)
