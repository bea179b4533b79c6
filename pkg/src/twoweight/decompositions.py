"""Whitney decompositions of the level sets of T̄(fσ), the sets E_k(Q), the
maximum principle, principal cubes and occurrence counting.

Regions that may be smaller than a finest cell (Whitney cubes of a single
cell live one level below the grid) are carried as *fraction vectors*: the
share of each finest cell that the region covers.  Every function is constant
on cells, so integrals over such regions stay exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .dyadic import CubeId, DyadicGrid, Instance, StructureError
from .operators import canonical_values, split_masks, tbar_values, u_values

REL_TOL = 1e-10


class WhitneyError(StructureError):
    """The Whitney family does not reproduce its open set (insufficient padding)."""


class NotWhitneyCube(ValueError):
    pass


def _leq(a: float, b: float, tol: float = REL_TOL) -> bool:
    return bool(a <= b + tol * max(abs(a), abs(b)))


# ---------------------------------------------------------------------------
# Whitney decomposition

@dataclass(frozen=True, eq=False)
class WhitneyFamily:
    k: int | None
    cubes: tuple[CubeId, ...]
    omega: np.ndarray = field(repr=False)

    def __contains__(self, cube: CubeId) -> bool:
        return cube in self.cube_set

    @cached_property
    def cube_set(self) -> frozenset[CubeId]:
        return frozenset(self.cubes)


def _full_cubes(grid: DyadicGrid, omega: np.ndarray, level: int) -> np.ndarray:
    rows = grid.membership[[grid.cube_position[c] for c in grid.cubes(level)]]
    return rows @ omega.astype(float) == rows.sum(axis=1)


def whitney(grid: DyadicGrid, omega: np.ndarray, k: int | None = None) -> WhitneyFamily:
    """Maximal dyadic cubes whose parent lies inside ``omega``.

    Any two dyadic cubes are nested or disjoint, so the maximal elements of
    ``{Q : Q^{(1)} ⊆ omega}`` are unique and pairwise disjoint; a maximal Q
    has ``Q^{(2)} ⊄ omega`` since otherwise ``Q^{(1)}`` would qualify.  The
    parents that occur are the maximal grid cubes inside ``omega`` (never a
    virtual ancestor, since those leave [0,1)^d), so their children lie at
    levels 1..D+1.
    """
    omega = np.asarray(omega, dtype=bool)
    if omega.shape != (grid.n_cells,):
        raise StructureError("cell set does not match the grid")
    cubes: list[CubeId] = []
    above: set[CubeId] = set()
    for level in range(grid.depth + 1):
        full = {c for c, ok in zip(grid.cubes(level), _full_cubes(grid, omega, level)) if ok}
        for c in sorted(full):
            if level == 0 or c.parent() not in above:
                cubes.extend(c.children())
        above = full
    fam = WhitneyFamily(k, tuple(sorted(cubes)), omega)
    union = _union_fraction(grid, fam.cubes)
    if not np.array_equal(union, omega.astype(float)):
        raise WhitneyError("Whitney cubes do not reproduce the open set")
    return fam


def _union_fraction(grid: DyadicGrid, cubes) -> np.ndarray:
    total = np.zeros(grid.n_cells)
    for c in cubes:
        total += grid.fraction(c)
    return total


def _subset_of(grid: DyadicGrid, cube: CubeId, omega: np.ndarray) -> bool:
    if cube.level < 0:
        return False  # virtual ancestors contain points outside [0,1)^d
    return bool(np.all(omega[grid.cells(cube)]))


def _meets_complement(grid: DyadicGrid, cube: CubeId, omega: np.ndarray) -> bool:
    if cube.level < 0:
        return True
    return bool(np.any(~omega[grid.cells(cube)]))


@dataclass
class WhitneyCheck:
    disjoint: bool
    union: bool
    parent_inside: bool
    grandparent_escapes: bool
    max_parent_overlap: float
    max_crowd: int

    def ok(self, dimension: int) -> bool:
        cap = 2 ** (dimension + 1)
        return (self.disjoint and self.union and self.parent_inside and self.grandparent_escapes
                and self.max_parent_overlap <= cap and self.max_crowd <= cap)


def check_whitney(grid: DyadicGrid, fam: WhitneyFamily) -> WhitneyCheck:
    cubes = fam.cubes
    disjoint = len(set(cubes)) == len(cubes) and not any(
        a.intersects(b) for i, a in enumerate(cubes) for b in cubes[i + 1:])
    union = np.array_equal(_union_fraction(grid, cubes), fam.omega.astype(float))
    parent_inside = all(_subset_of(grid, c.parent(), fam.omega) for c in cubes)
    escapes = all(_meets_complement(grid, c.parent().parent(), fam.omega) for c in cubes)
    overlap = np.zeros(grid.n_cells)
    for c in cubes:
        overlap += grid.cells(c.parent())
    over_ok = np.all(overlap[~fam.omega] == 0)
    max_overlap = float(overlap.max(initial=0.0)) if over_ok else float("inf")
    crowd = max((sum(1 for d in cubes if d.intersects(c.parent())) for c in cubes), default=0)
    return WhitneyCheck(disjoint, union, parent_inside, escapes, max_overlap, crowd)


# ---------------------------------------------------------------------------
# level sets of T̄(fσ)

@dataclass(frozen=True, eq=False)
class LevelSet:
    k: int
    omega: np.ndarray
    family: WhitneyFamily


class Levels:
    """Level sets ``Ω_k = {T̄(fσ) > 2^k}`` of one instance and function, with
    their Whitney families, computed on demand and cached."""

    def __init__(self, inst: Instance, f):
        self.inst = inst
        self.f = np.asarray(getattr(f, "values", f), dtype=float)
        self.tbar = tbar_values(inst, self.f)
        self._families: dict[int, WhitneyFamily] = {}

    @cached_property
    def window(self) -> tuple[int, int] | None:
        pos = self.tbar[self.tbar > 0]
        if pos.size == 0:
            return None
        return math.floor(math.log2(pos.min())) - 1, math.ceil(math.log2(pos.max()))

    @cached_property
    def a(self) -> np.ndarray:
        """Canonical sequence ``a_f`` as a (collection, cells) array."""
        return canonical_values(self.inst, self.f)

    def omega(self, k: int) -> np.ndarray:
        return self.tbar > 2.0**k

    def family(self, k: int) -> WhitneyFamily:
        if k not in self._families:
            self._families[k] = whitney(self.inst.grid, self.omega(k), k)
        return self._families[k]

    def level_sets(self) -> list[LevelSet]:
        if self.window is None:
            return []
        lo, hi = self.window
        return [LevelSet(k, self.omega(k), self.family(k)) for k in range(lo, hi + 1)]

    def analysis_levels(self) -> range:
        """Levels k whose sets E_k can be non-empty."""
        if self.window is None:
            return range(0)
        lo, hi = self.window
        return range(lo - 2, hi - 2)

    def ek(self, k: int, cube: CubeId) -> np.ndarray:
        """Fraction vector of ``E_k(Q) = Q ∩ (Ω_{k+2} - Ω_{k+3})``."""
        band = self.omega(k + 2) & ~self.omega(k + 3)
        return self.inst.grid.fraction(cube) * band

    def require(self, k: int, cube: CubeId) -> None:
        if cube not in self.family(k):
            raise NotWhitneyCube(f"{cube} is not a Whitney cube of Ω_{k}")


def level_sets(inst: Instance, f) -> list[LevelSet]:
    return Levels(inst, f).level_sets()


def ek_sets(inst: Instance, f, k: int, family: WhitneyFamily | None = None,
            levels: Levels | None = None) -> dict[CubeId, np.ndarray]:
    lv = levels or Levels(inst, f)
    fam = family or lv.family(k)
    return {Q: lv.ek(k, Q) for Q in fam.cubes}


# ---------------------------------------------------------------------------
# maximum principle

@dataclass
class MaxPrinciple:
    out_val_max: float
    far_val_max: float
    bound: float
    inner_min: float     # min over E_k(Q) of T̄^in_{Q^(1)}(1_{Q^(1)} fσ); inf if E_k(Q) empty
    passed: bool
    inner_passed: bool


def max_principle_check(inst: Instance, f, k: int, cube: CubeId,
                        levels: Levels | None = None) -> MaxPrinciple:
    lv = levels or Levels(inst, f)
    lv.require(k, cube)
    grid = inst.grid
    fv = lv.f
    q1, q2 = cube.parent(), cube.parent().parent()
    on_q = grid.cells(cube)
    in2 = grid.fraction(q2) > 0
    _, out1 = split_masks(inst, q1)
    out_val = tbar_values(inst, fv * in2, select=out1)[on_q].max(initial=0.0)
    far_val = tbar_values(inst, fv * ~in2)[on_q].max(initial=0.0)
    bound = 2.0**k
    in1_mask, _ = split_masks(inst, q1)
    in1 = grid.fraction(q1) > 0
    inner = tbar_values(inst, fv * in1, select=in1_mask)
    e = lv.ek(k, cube) > 0
    inner_min = float(inner[e].min()) if e.any() else float("inf")
    return MaxPrinciple(float(out_val), float(far_val), bound, inner_min,
                        _leq(out_val, bound) and _leq(far_val, bound),
                        _leq(bound, inner_min))


# ---------------------------------------------------------------------------
# principal cubes

@dataclass
class CoronaFamily:
    principal_cubes: list[CubeId]
    gamma: dict[CubeId, CubeId]
    averages: dict[CubeId, float] = field(default_factory=dict, repr=False)


def sigma_average(inst: Instance, f: np.ndarray, cube: CubeId) -> float:
    frac = inst.grid.fraction(cube)
    return float(np.sum(f * inst.sigma.values * frac) / np.sum(inst.sigma.values * frac))


def corona(inst: Instance, f, input_cubes) -> CoronaFamily:
    """Principal cubes: a cube starts a new stopping cube when its σ-average of f
    exceeds twice that of the minimal principal cube above it."""
    fv = np.asarray(getattr(f, "values", f), dtype=float)
    cubes = sorted(set(input_cubes))
    avg = {Q: sigma_average(inst, fv, Q) for Q in cubes}
    principal: set[CubeId] = set()
    gamma: dict[CubeId, CubeId] = {}
    for Q in cubes:  # coarse levels first
        top = _minimal_principal(Q, principal, inst.grid.min_level, strict=True)
        if top is None or avg[Q] > 2.0 * avg[top]:
            principal.add(Q)
            gamma[Q] = Q
        else:
            gamma[Q] = top
    return CoronaFamily(sorted(principal), gamma, avg)


def _minimal_principal(Q: CubeId, principal, min_level: int, strict: bool):
    start = Q.level - 1 if strict else Q.level
    for lev in range(start, min_level - 1, -1):
        anc = Q.ancestor(lev)
        if anc in principal:
            return anc
    return None


@dataclass
class CoronaCheck:
    covering: bool      # (i)
    sparse: bool        # (ii)
    minimal: bool       # (iii)

    @property
    def ok(self) -> bool:
        return self.covering and self.sparse and self.minimal


def check_corona(inst: Instance, f, input_cubes, fam: CoronaFamily) -> CoronaCheck:
    fv = np.asarray(getattr(f, "values", f), dtype=float)
    avg = lambda Q: fam.averages.get(Q) if Q in fam.averages else sigma_average(inst, fv, Q)
    pset = set(fam.principal_cubes)
    covering = all(
        Q in fam.gamma and fam.gamma[Q] in pset and fam.gamma[Q].contains(Q)
        and _leq(avg(Q), 2.0 * avg(fam.gamma[Q]))
        for Q in set(input_cubes))
    sparse = all(2.0 * avg(Gp) < avg(G)
                 for G in pset for Gp in pset if Gp != G and Gp.contains(G))
    minimal = all(fam.gamma[Q] == _minimal_principal(Q, pset, inst.grid.min_level, strict=False)
                  for Q in set(input_cubes))
    return CoronaCheck(covering, sparse, minimal)


@dataclass
class CarlesonSum:
    lhs: float
    rhs: float


def corona_carleson_sum(inst: Instance, f, fam: CoronaFamily) -> CarlesonSum:
    fv = np.asarray(getattr(f, "values", f), dtype=float)
    cm = inst.grid.cell_measure
    lhs = 0.0
    for G in fam.principal_cubes:
        sig = float(inst.grid.fraction(G) @ inst.sigma.values) * cm
        lhs += sig * sigma_average(inst, fv, G) ** inst.r
    rhs = float(np.sum(fv**inst.r * inst.sigma.values) * cm)
    return CarlesonSum(lhs, rhs)


def residue_inputs(levels: Levels, residue: int) -> set[CubeId]:
    """All Whitney cubes of the levels ``k ≡ residue (mod 3)`` in the window."""
    out: set[CubeId] = set()
    if levels.window is None:
        return out
    lo, hi = levels.window
    for k in range(lo - 2, hi + 1):
        if k % 3 == residue:
            out.update(levels.family(k).cubes)
    return out


# ---------------------------------------------------------------------------
# neighbours, classification, occurrences

@dataclass
class Neighbors:
    N_k: list[CubeId]
    R_k: list[CubeId]
    union_covers: bool      # Q^(1) ∩ Ω_{k+3} ⊆ ∪R_k
    union_within: bool      # ∪R_k ⊆ Q^(1)
    crowd: int


def neighbor_families(levels: Levels, k: int, cube: CubeId) -> Neighbors:
    levels.require(k, cube)
    grid = levels.inst.grid
    q1 = cube.parent()
    N = [c for c in levels.family(k).cubes if c.intersects(q1)]
    upper = levels.family(k + 3).cubes if levels.omega(k + 3).any() else ()
    R = [c for c in upper if c.intersects(q1)]
    f1 = grid.fraction(q1)
    target = f1 * levels.omega(k + 3)
    union = _union_fraction(grid, R)
    covers = bool(np.all(union * f1 >= target))
    within = all(q1.contains(c) and c != q1 for c in R)
    return Neighbors(N, R, covers, within, len(N))


@dataclass
class DualConstancy:
    values: list[float]
    constant: bool


def dual_values(levels: Levels, k: int, cube: CubeId) -> np.ndarray:
    """Cell values of ``U({a_P 1_{E_k(Q)∩P} w})`` with ``a = a_f``."""
    return u_values(levels.inst, levels.a * levels.ek(k, cube))


def dual_constancy_check(inst: Instance, f, k: int, cube: CubeId, R: CubeId,
                         levels: Levels | None = None) -> DualConstancy:
    lv = levels or Levels(inst, f)
    vals = dual_values(lv, k, cube)[inst.grid.cells(R)]
    ref = float(vals[0]) if vals.size else 0.0
    const = bool(np.all(np.abs(vals - ref) <= REL_TOL * max(abs(ref), np.abs(vals).max(initial=0.0))))
    return DualConstancy([float(v) for v in vals], const)


@dataclass
class ClassifiedLevel:
    k: int
    eta: float
    classes: tuple[list[CubeId], list[CubeId], list[CubeId]]
    alpha: dict[CubeId, float]
    beta: dict[CubeId, float]
    E_k: dict[CubeId, np.ndarray] = field(repr=False)


def classify_cubes(inst: Instance, f, k: int, eta: float = 0.01,
                   levels: Levels | None = None) -> ClassifiedLevel:
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    lv = levels or Levels(inst, f)
    grid = inst.grid
    cm = grid.cell_measure
    w, sig = inst.w.values, inst.sigma.values
    upper = lv.omega(k + 3)
    c1, c2, c3 = [], [], []
    alpha, beta, E = {}, {}, {}
    for Q in lv.family(k).cubes:
        e = lv.ek(k, Q)
        E[Q] = e
        wE = float(e @ w) * cm
        wQ = float(grid.fraction(Q) @ w) * cm
        V = u_values(inst, lv.a * e)
        q1 = grid.fraction(Q.parent())
        dens = lv.f * V * sig * q1 * cm
        alpha[Q] = float(np.sum(dens * ~upper))
        beta[Q] = float(np.sum(dens * upper))
        if wE <= eta * wQ:
            c1.append(Q)
        elif alpha[Q] > beta[Q]:
            c2.append(Q)
        else:
            c3.append(Q)
    return ClassifiedLevel(k, eta, (c1, c2, c3), alpha, beta, E)


def occurrence_count(inst: Instance, f, eta: float = 0.01,
                     levels: Levels | None = None) -> dict[CubeId, int]:
    """``c(R)``: number of levels k with ``R ∈ R_k(Q)`` for some ``Q ∈ 𝒬_k^3``."""
    lv = levels or Levels(inst, f)
    hits: dict[CubeId, set[int]] = {}
    for k in lv.analysis_levels():
        cl = classify_cubes(inst, f, k, eta, levels=lv)
        for Q in cl.classes[2]:
            for R in neighbor_families(lv, k, Q).R_k:
                hits.setdefault(R, set()).add(k)
    return {R: len(ks) for R, ks in sorted(hits.items())}
