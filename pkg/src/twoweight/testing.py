"""Testing constants ℒ, ℒ*, the q = 1 pair of constants and the Carleson constant."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dyadic import CubeId, Instance
from .operators import ComponentFamily, canonical_values, u_values
from .search import lattice_search, lattice_size, tbar_batch


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for the inner maximisation over B-sequences.

    ``oracle`` switches on the lattice search over the dual variable for grids
    with at most ``oracle_max_cells`` cells.
    """

    starts: int = 8
    seed: int = 0
    max_iters: int = 400
    tol: float = 1e-13
    oracle: bool = False
    oracle_resolution: int = 8
    oracle_max_cells: int = 16
    oracle_max_points: int = 300_000


@dataclass
class OptimizerTrace:
    iterations: int = 0
    objective: list[float] = field(default_factory=list)
    converged: bool = True


@dataclass
class TestingReport:
    value: float
    witness_cube: CubeId | None
    witness_sequence: ComponentFamily | None = None
    trace: OptimizerTrace = field(default_factory=OptimizerTrace)
    lower_bound_only: bool = False
    per_cube: dict[CubeId, float] = field(default_factory=dict)
    per_cube_sequences: dict[CubeId, np.ndarray] = field(default_factory=dict, repr=False)

    __test__ = False  # not a pytest class


def _argmax(cubes, values) -> tuple[float, CubeId | None]:
    best, arg = 0.0, None
    for c, v in zip(cubes, values):
        if arg is None or v > best:
            best, arg = float(v), c
    return best, arg


def l_star_values(inst: Instance) -> np.ndarray:
    """``σ(Q)^{-p/r} ∫_Q T̄(1_Q σ)^p w`` for every grid cube, in ``grid.all_cubes`` order."""
    grid = inst.grid
    ind = grid.membership
    tb = tbar_batch(inst, ind)
    local = np.sum(tb**inst.p * inst.w.values * ind, axis=1) * grid.cell_measure
    sig = ind @ inst.sigma.values * grid.cell_measure
    return local * sig ** (-inst.p / inst.r)


def compute_L_star(inst: Instance) -> TestingReport:
    vals = l_star_values(inst)
    best, arg = _argmax(inst.grid.all_cubes, vals)
    return TestingReport(best, arg, per_cube=dict(zip(inst.grid.all_cubes, map(float, vals))))


# ---------------------------------------------------------------------------
# ℒ: sup over cubes Q and B-sequences a of
#     w(Q)^{-r'/p'} ∫_Q U({1_{Q∩R} a_R w})^{r'} σ.

def _dual_objective(inst: Instance, cube_mask: np.ndarray, a: np.ndarray) -> np.ndarray:
    """``∫_Q U({1_Q a_R w})^{r'} σ`` for a batch ``a`` of shape (S, nQ, n_cells)."""
    cm = inst.grid.cell_measure
    b = np.einsum("sqc,c->sq", a * cube_mask, inst.w.values) * cm
    V = (b * inst.tau_vec / inst.volumes) @ inst.members
    return (V**inst.r_conj * cube_mask) @ inst.sigma.values * cm


def _b_project(grad: np.ndarray, members: np.ndarray, q: float) -> np.ndarray:
    """Cellwise maximiser of ``⟨grad, a⟩`` over non-negative unit ℓ^{q'} vectors.

    Cells whose gradient vanishes get the flat unit vector over their active
    components.
    """
    g = np.maximum(grad, 0.0) * members
    num = g ** (q - 1.0)
    norm = np.sum(g**q, axis=-2, keepdims=True) ** ((q - 1.0) / q)
    count = members.sum(axis=0)
    flat = np.divide(members, count ** (1.0 - 1.0 / q), out=np.zeros_like(members),
                     where=count > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(norm > 0, num / np.where(norm > 0, norm, 1.0), flat)
    return out


def _b_normalize(a: np.ndarray, members: np.ndarray, q: float) -> np.ndarray:
    """Scale each cell of ``a >= 0`` to unit ℓ^{q'} norm (flat vector where ``a`` vanishes)."""
    qc = q / (q - 1.0)
    norm = np.sum(a**qc, axis=-2, keepdims=True) ** (1.0 / qc)
    flat = _b_project(np.zeros_like(members), members, q)
    return np.where(norm > 0, a / np.where(norm > 0, norm, 1.0), flat)


def _ascend_cube(inst: Instance, cube: CubeId, config: OptimizerConfig, rng: np.random.Generator):
    grid = inst.grid
    cm = grid.cell_measure
    mask = grid.fraction(cube)
    mem = inst.members
    active = (mem @ mask) > 0
    q, rc = inst.q, inst.r_conj
    if not active.any() or not np.any(inst.tau_vec[active] > 0):
        return 0.0, np.zeros_like(mem), OptimizerTrace(0, [0.0], True)

    warm = canonical_values(inst, mask)
    starts = [warm]
    for _ in range(config.starts):
        starts.append(np.abs(rng.standard_normal(mem.shape)) * mem)
    a = _b_normalize(np.stack(starts), mem, q)
    wq = float(mask @ inst.w.values) * cm
    scale = wq ** (-rc / inst.p_conj)
    prev = None
    trace = OptimizerTrace()
    conv = np.zeros(len(a), dtype=bool)
    for it in range(1, config.max_iters + 1):
        b = np.einsum("sqc,c->sq", a * mask, inst.w.values) * cm
        V = (b * inst.tau_vec / inst.volumes) @ mem
        phi = (V**rc * mask) @ inst.sigma.values * cm
        trace.objective.append(float(phi.max()) * scale)
        if prev is not None:
            conv = np.abs(phi - prev) <= config.tol * np.maximum(phi, 1e-300)
            if conv.all():
                break
        gamma = ((V ** (rc - 1.0) * mask * inst.sigma.values) @ mem.T) * inst.tau_vec / inst.volumes
        a = _b_project(gamma[:, :, None] * mem[None], mem, q)
        prev = phi
    trace.iterations = it
    phi = _dual_objective(inst, mask, a)
    best = int(np.argmax(phi))  # first maximal index: lowest seed wins ties
    trace.converged = bool(conv[best])
    return float(phi[best]) * scale, a[best], trace


def _oracle_cube(inst: Instance, cube: CubeId, config: OptimizerConfig):
    """ℒ_Q through its dual form ``w(Q)^{-r'/p'} (sup_h ∫_Q T̄(hσ) w)^{r'}``.

    The supremum runs over ``h >= 0`` supported in Q with ``‖h‖_{L^r(σ)} = 1``;
    the maximising h yields the feasible sequence ``a_h``, which is evaluated
    in the primal objective so the returned value is attained.
    """
    grid = inst.grid
    mask = grid.fraction(cube)
    res = lattice_search(inst, mask > 0, inst.w.values * mask, 1.0, config.oracle_resolution)
    a = _b_normalize(canonical_values(inst, res.point), inst.members, inst.q)
    wq = float(mask @ inst.w.values) * grid.cell_measure
    val = float(_dual_objective(inst, mask, a[None])[0]) * wq ** (-inst.r_conj / inst.p_conj)
    return max(val, 0.0), a


def oracle_applicable(inst: Instance, config: OptimizerConfig) -> bool:
    if inst.n_cells > config.oracle_max_cells:
        return False
    return lattice_size(inst.n_cells, config.oracle_resolution) <= config.oracle_max_points


def compute_L(inst: Instance, config: OptimizerConfig | None = None) -> TestingReport:
    config = config or OptimizerConfig()
    use_oracle = config.oracle and oracle_applicable(inst, config)
    cubes = inst.grid.all_cubes
    values, seqs = {}, {}
    traces = []
    for i, cube in enumerate(cubes):
        rng = np.random.default_rng([config.seed, i])
        val, a, tr = _ascend_cube(inst, cube, config, rng)
        if use_oracle:
            oval, oa = _oracle_cube(inst, cube, config)
            if oval > val:
                val, a = oval, oa
        values[cube], seqs[cube] = val, a
        traces.append(tr)
    best, arg = _argmax(cubes, [values[c] for c in cubes])
    witness = None
    trace = OptimizerTrace()
    if arg is not None:
        trace = traces[cubes.index(arg)]
        fill = _b_project(np.zeros_like(inst.members), inst.members, inst.q)
        mask = inst.grid.fraction(arg) > 0
        witness = ComponentFamily(inst, np.where(mask, seqs[arg], fill))
    trace.converged = trace.converged and all(t.converged for t in traces)
    return TestingReport(best, arg, witness, trace, lower_bound_only=not use_oracle,
                         per_cube=values, per_cube_sequences=seqs)


def dual_witness_function(inst: Instance, report: TestingReport, cube: CubeId | None = None) -> np.ndarray:
    """``h = V^{r'-1} 1_Q`` with ``V = U({1_Q a_R w})`` for the recorded sequence on Q.

    ``‖T̄(hσ)‖_{L^p(w)} / ‖h‖_{L^r(σ)} >= ℒ_Q^{1/r'}`` holds by duality.
    """
    cube = report.witness_cube if cube is None else cube
    mask = inst.grid.fraction(cube)
    a = report.per_cube_sequences[cube] * mask
    V = u_values(inst, a)
    return np.maximum(V, 0.0) ** (inst.r_conj - 1.0) * (mask > 0)


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LSUConstants:
    dual_constant: float
    direct_constant: float


def lsu_constants(inst: Instance) -> LSUConstants:
    """Testing constants of the linear operator ``R(fσ) = Σ τ_Q E_Q(fσ) 1_Q`` (q = 1)."""
    grid = inst.grid
    cm = grid.cell_measure
    ind = grid.membership
    sig = ind @ inst.sigma.values * cm
    wm = ind @ inst.w.values * cm
    p, r = inst.p, inst.r
    rc, pc = inst.r_conj, inst.p_conj
    direct_vals = tbar_batch(inst, ind, q=1.0)
    direct = (np.sum((direct_vals * ind) ** p * inst.w.values, axis=1) * cm) ** (1 / p) * sig ** (-1 / r)
    # R(1_K w) swaps the roles of σ and w inside the averages
    swapped = inst.__class__(grid, inst.w, inst.sigma, inst.p, inst.r, inst.q, inst.tau)
    dual_vals = tbar_batch(swapped, ind, q=1.0)
    dual = (np.sum((dual_vals * ind) ** rc * inst.sigma.values, axis=1) * cm) ** (1 / rc) * wm ** (-1 / pc)
    return LSUConstants(float(dual.max(initial=0.0)), float(direct.max(initial=0.0)))


def carleson_constant(inst: Instance, tol: float = 1e-12) -> float:
    """``sup_Q σ(Q)^{-1} Σ_{R ⊆ Q, R ∈ 𝒬} w(R) σ(R)^p τ_R^p / |R|^p`` (needs r = q = p)."""
    if abs(inst.r - inst.p) > tol:
        raise PreconditionError(f"Carleson constant needs r = p (r={inst.r}, p={inst.p})")
    if abs(inst.q - inst.p) > tol:
        raise PreconditionError(f"Carleson constant needs q = p (q={inst.q}, p={inst.p})")
    grid = inst.grid
    cm = grid.cell_measure
    if not inst.collection:
        return 0.0
    sig_R = inst.members @ inst.sigma.values * cm
    w_R = inst.members @ inst.w.values * cm
    terms = w_R * sig_R**inst.p * inst.tau_vec**inst.p / inst.volumes**inst.p
    best = 0.0
    for cube in grid.all_cubes:
        inside = np.array([cube.contains(R) for R in inst.collection])
        sig_Q = float(grid.fraction(cube) @ inst.sigma.values) * cm
        best = max(best, float(terms[inside].sum()) / sig_Q)
    return best
