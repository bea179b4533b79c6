"""The vector-valued averaging operator T, its envelope T̄, the dual U and friends.

All kernels work on dense cell arrays.  A component family is stored as a
``(len(collection), n_cells)`` array whose row ``i`` is the component attached
to ``instance.collection[i]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .dyadic import CubeId, Instance, StepFunction, StructureError


@dataclass(frozen=True, eq=False)
class ComponentFamily:
    """Cube-indexed family ``{g_Q}``; each component is supported in its cube."""

    instance: Instance
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        inst = self.instance
        arr = np.array(self.values, dtype=float).reshape(len(inst.collection), inst.n_cells)
        arr = arr * inst.members
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @classmethod
    def from_components(cls, instance: Instance, comps: Mapping[CubeId, StepFunction | np.ndarray]):
        arr = np.zeros((len(instance.collection), instance.n_cells))
        rows = {c: i for i, c in enumerate(instance.collection)}
        for cube, g in comps.items():
            if cube not in rows:
                raise StructureError(f"{cube} is not in the collection")
            arr[rows[cube]] = g.values if isinstance(g, StepFunction) else np.asarray(g, float)
        return cls(instance, arr)

    @classmethod
    def zeros(cls, instance: Instance) -> "ComponentFamily":
        return cls(instance, np.zeros((len(instance.collection), instance.n_cells)))

    @property
    def components(self) -> dict[CubeId, StepFunction]:
        g = self.instance.grid
        return {c: StepFunction(g, row) for c, row in zip(self.instance.collection, self.values)}

    def pointwise_norm(self, s: float) -> np.ndarray:
        """Cellwise ``(Σ_Q |g_Q|^s)^{1/s}``."""
        if self.values.shape[0] == 0:
            return np.zeros(self.instance.n_cells)
        return np.sum(np.abs(self.values) ** s, axis=0) ** (1.0 / s)

    def mixed_norm(self, outer: float, inner: float, weight: np.ndarray) -> float:
        """``‖g‖_{L^outer_{ℓ^inner}(weight)}``."""
        inner_vals = self.pointwise_norm(inner)
        grid = self.instance.grid
        return float(np.sum(inner_vals**outer * weight) * grid.cell_measure) ** (1.0 / outer)


# A B-sequence is a component family with unit pointwise ℓ^{q'} norm on its
# support set; the type is kept nominal.
BSequence = ComponentFamily


def averages(inst: Instance, f: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """``E_R(f·weight)`` for every ``R`` in the collection."""
    return inst.members @ (f * weight) * inst.grid.cell_measure / inst.volumes


def t_coefficients(inst: Instance, f: np.ndarray) -> np.ndarray:
    """``τ_R E_R(fσ)``; component ``R`` of ``T(fσ)`` is this constant on ``R``."""
    return inst.tau_vec * averages(inst, f, inst.sigma.values)


def tbar_values(inst: Instance, f: np.ndarray, q: float | None = None,
                select: np.ndarray | None = None) -> np.ndarray:
    """Cell values of ``T̄(fσ)``; ``q=1`` gives the linear operator ``R(fσ)`` for f >= 0.

    ``select`` is an optional boolean mask over the collection restricting the sum.
    """
    q = inst.q if q is None else q
    coef = np.abs(t_coefficients(inst, f))
    mem = inst.members
    if select is not None:
        coef, mem = coef[select], mem[select]
    if coef.size == 0:
        return np.zeros(inst.n_cells)
    if q == 1.0:
        return coef @ mem
    return _lq_cells(coef, mem, q)


def _cell_max(coef: np.ndarray, mem: np.ndarray) -> np.ndarray:
    """Largest active coefficient on each cell (0 where none is active)."""
    return np.max(coef[:, None] * mem, axis=0, initial=0.0)


def _lq_cells(coef: np.ndarray, mem: np.ndarray, q: float) -> np.ndarray:
    """``(Σ_R coef_R^q 1_R)^{1/q}`` per cell, scaled by the cell maximum so tiny
    coefficients do not underflow when raised to the power q."""
    m = _cell_max(coef, mem)
    safe = np.where(m > 0, m, 1.0)
    ratio = coef[:, None] * mem / safe
    return m * np.sum(ratio**q, axis=0) ** (1.0 / q)


def _as_values(inst: Instance, f) -> np.ndarray:
    if isinstance(f, StepFunction):
        if f.grid != inst.grid:
            raise StructureError("function is not on the instance grid")
        return f.values
    arr = np.asarray(f, dtype=float)
    if arr.shape != (inst.n_cells,):
        raise StructureError(f"expected {inst.n_cells} cell values")
    return arr


def apply_T(inst: Instance, f) -> ComponentFamily:
    fv = _as_values(inst, f)
    coef = t_coefficients(inst, fv)
    return ComponentFamily(inst, coef[:, None] * inst.members)


def apply_Tbar(inst: Instance, f) -> StepFunction:
    return StepFunction(inst.grid, tbar_values(inst, _as_values(inst, f)))


def u_values(inst: Instance, g: np.ndarray) -> np.ndarray:
    """Cell values of ``U({g_Q w})`` for a raw family array ``g``."""
    if g.shape[0] == 0:
        return np.zeros(inst.n_cells)
    ints = np.sum(g * inst.members * inst.w.values, axis=1) * inst.grid.cell_measure
    return (inst.tau_vec * ints / inst.volumes) @ inst.members


def apply_U(inst: Instance, g: ComponentFamily) -> StepFunction:
    if g.instance is not inst:
        g = ComponentFamily(inst, g.values)
    return StepFunction(inst.grid, u_values(inst, g.values))


@dataclass(frozen=True)
class Split:
    inside: StepFunction
    outside: StepFunction


def split_masks(inst: Instance, cube: CubeId) -> tuple[np.ndarray, np.ndarray]:
    """Collection masks for ``R ⊆ cube`` and ``R ⊋ cube``."""
    inside = np.array([cube.contains(R) for R in inst.collection], dtype=bool)
    outside = np.array([R.contains(cube) and R != cube for R in inst.collection], dtype=bool)
    return inside, outside


def apply_Tbar_split(inst: Instance, f, cube: CubeId) -> Split:
    inst.grid.check(cube)
    fv = _as_values(inst, f)
    inside, outside = split_masks(inst, cube)
    return Split(StepFunction(inst.grid, tbar_values(inst, fv, select=inside)),
                 StepFunction(inst.grid, tbar_values(inst, fv, select=outside)))


def canonical_values(inst: Instance, f: np.ndarray, q: float | None = None) -> np.ndarray:
    """Array form of the canonical sequence ``a_f`` (zero where ``T̄(fσ) = 0``)."""
    q = inst.q if q is None else q
    coef = np.abs(t_coefficients(inst, f))
    tb = tbar_values(inst, f, q=q)
    pos = tb > 0
    # (τ E)^{q-1} T̄^{-q/q'} with T̄^{-q/q'} = T̄^{1-q}, taken as a ratio so
    # nothing underflows
    safe = np.where(pos, tb, 1.0)
    ratio = coef[:, None] * inst.members / safe[None, :]
    return np.where(pos[None, :], ratio ** (q - 1.0), 0.0)


def canonical_sequence(inst: Instance, f) -> BSequence:
    return ComponentFamily(inst, canonical_values(inst, _as_values(inst, f)))


def maximal_function(g: StepFunction, omega: StepFunction) -> StepFunction:
    """Dyadic maximal function ``M_ω g`` over grid cubes of levels 0..D."""
    if g.grid != omega.grid:
        raise StructureError("function and weight live on different grids")
    grid = g.grid
    mem = grid.membership
    avgs = (mem @ (np.abs(g.values) * omega.values)) / (mem @ omega.values)
    vals = np.max(np.where(mem > 0, avgs[:, None], -np.inf), axis=0)
    return StepFunction(grid, vals)


@dataclass(frozen=True)
class DualityPair:
    lhs: float
    rhs: float


def duality_pair(inst: Instance, f, g: ComponentFamily) -> DualityPair:
    """``∫⟨T(fσ), g⟩ w`` against ``∫ U(gw) f σ``."""
    fv = _as_values(inst, f)
    cm = inst.grid.cell_measure
    tf = apply_T(inst, fv).values
    lhs = float(np.sum(tf * g.values * inst.w.values) * cm)
    rhs = float(np.sum(u_values(inst, g.values) * fv * inst.sigma.values) * cm)
    return DualityPair(lhs, rhs)
