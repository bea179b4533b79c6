"""Strong and weak norms of T̄(·σ) and the strengthened testing integrals."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .dyadic import Instance, StepFunction
from .operators import ComponentFamily, tbar_values, u_values
from .search import lattice_search, power_ascent, ratio_batch, sigma_norm
from .suite import SuiteConstants, DEFAULT_CONSTANTS
from .testing import (OptimizerConfig, TestingReport, compute_L, compute_L_star,
                      dual_witness_function)

BRUTEFORCE_MAX_CELLS = 8


class OracleSizeError(ValueError):
    """Grid too large for the brute-force oracle; use ``opnorm_ascent``."""


@dataclass
class NormEstimate:
    lower_bound: float
    upper_bound: float
    witness_f: StepFunction
    method: str
    converged: bool = True
    iterations: int = 0

    def to_json(self) -> dict:
        return {"lower_bound": self.lower_bound, "upper_bound": self.upper_bound,
                "witness": [float(v) for v in self.witness_f.values], "method": self.method}


def operator_ratio(inst: Instance, f, q: float | None = None) -> float:
    """``‖T̄(fσ)‖_{L^p(w)} / ‖f‖_{L^r(σ)}`` (0 for f = 0)."""
    fv = f.values if isinstance(f, StepFunction) else np.asarray(f, dtype=float)
    return float(ratio_batch(inst, fv[None, :], inst.w.values, inst.p, q)[0])


def _certify(inst: Instance, f: np.ndarray, q) -> tuple[float, StepFunction]:
    f = np.abs(f)
    n = sigma_norm(inst, f[None, :])[0]
    if n > 0:
        f = f / n
    else:
        f = np.full(inst.n_cells, 1.0)
        f /= sigma_norm(inst, f[None, :])[0]
    return operator_ratio(inst, f, q), StepFunction(inst.grid, f)


def opnorm_bruteforce(inst: Instance, resolution: int = 12, q: float | None = None) -> NormEstimate:
    """Lattice scan of the non-negative unit sphere of L^r(σ), then local polish."""
    if inst.n_cells > BRUTEFORCE_MAX_CELLS:
        raise OracleSizeError(
            f"{inst.n_cells} cells exceed the brute-force limit of {BRUTEFORCE_MAX_CELLS}; "
            "use opnorm_ascent")
    res = lattice_search(inst, np.ones(inst.n_cells, dtype=bool), inst.w.values, inst.p,
                         resolution, q=q)
    val, wit = _certify(inst, res.point, q)
    return NormEstimate(val, float("inf"), wit, "bruteforce", True, res.evaluations)


def opnorm_closed_form(inst: Instance) -> NormEstimate:
    """Exact norm when the collection is a single cube P:
    ``τ_P σ(P)^{1/r'} w(P)^{1/p} / |P|`` with extremal ``f = 1_P``."""
    if len(inst.collection) != 1:
        raise ValueError("closed form needs a single-cube collection")
    (P,) = inst.collection
    g = inst.grid
    cm = g.cell_measure
    mask = g.fraction(P)
    sig = float(mask @ inst.sigma.values) * cm
    wm = float(mask @ inst.w.values) * cm
    val = inst.tau[P] * sig ** (1 / inst.r_conj) * wm ** (1 / inst.p) / g.measure(P)
    f = (mask > 0) / sig ** (1 / inst.r)
    return NormEstimate(val, val, StepFunction(g, f), "closed_form")


def _seed_functions(inst: Instance, reports: Iterable[TestingReport], L: TestingReport | None,
                    rng: np.random.Generator, random_starts: int) -> np.ndarray:
    seeds = [np.ones(inst.n_cells)]
    seeds.extend(np.array(inst.grid.membership))
    for rep in reports:
        if rep.witness_cube is not None:
            seeds.append(inst.grid.fraction(rep.witness_cube) > 0)
    if L is not None and L.witness_cube is not None:
        # the duality witness for the best cubes of ℒ
        top = sorted(L.per_cube, key=L.per_cube.get, reverse=True)[:3]
        for cube in top:
            if L.per_cube[cube] > 0:
                seeds.append(dual_witness_function(inst, L, cube))
    for k in range(random_starts):
        if k % 2 == 0:
            seeds.append(np.abs(rng.standard_normal(inst.n_cells)))
        else:
            seeds.append(rng.pareto(1.5, inst.n_cells))
    return np.array(seeds, dtype=float)


def opnorm_ascent(inst: Instance, config: OptimizerConfig | None = None,
                  L_star: TestingReport | None = None, L: TestingReport | None = None,
                  q: float | None = None,
                  constants: SuiteConstants = DEFAULT_CONSTANTS) -> NormEstimate:
    """Multi-start monotone ascent of ``f ↦ ‖T̄(fσ)‖_{L^p(w)}`` on the unit sphere.

    With the default q the testing reports seed the ascent and give the upper
    bound ``C_eq · max{ℒ^{1/r'}, ℒ*^{1/p}}``; any other q (the linear case q = 1)
    has no upper certificate.
    """
    config = config or OptimizerConfig()
    own_q = q is None or q == inst.q
    if own_q:
        L_star = L_star if L_star is not None else compute_L_star(inst)
        L = L if L is not None else compute_L(inst, config)
    reports = [r for r in (L_star, L) if r is not None] if own_q else []
    rng = np.random.default_rng([config.seed, 7919])
    starts = _seed_functions(inst, reports, L if own_q else None, rng, 2 * config.starts)
    F, vals, iters, conv, _ = power_ascent(inst, starts, inst.w.values, inst.p, q,
                                           max_iters=config.max_iters, tol=config.tol)
    best = int(np.argmax(vals))
    lb, wit = _certify(inst, F[best], q)
    upper = float("inf")
    if own_q:
        upper = constants.equivalence * max(L.value ** (1 / inst.r_conj),
                                            L_star.value ** (1 / inst.p))
    return NormEstimate(lb, upper, wit, "ascent", bool(conv[best]), iters)


# ---------------------------------------------------------------------------
# weak-type norms

def weak_norm(g, mu, s: float, cell_measure: float | None = None) -> float:
    """``sup_λ λ μ({|g| >= λ})^{1/s}`` over the finitely many values of |g|.

    Plain arrays need ``cell_measure``; step functions carry their grid.
    """
    gv = np.abs(g.values if isinstance(g, StepFunction) else np.asarray(g, dtype=float))
    mv = mu.values if isinstance(mu, StepFunction) else np.asarray(mu, dtype=float)
    if cell_measure is None:
        cm = (g.grid if isinstance(g, StepFunction) else mu.grid).cell_measure
    else:
        cm = cell_measure
    order = np.argsort(-gv, kind="stable")
    vals = gv[order]
    tail = np.cumsum(mv[order]) * cm
    # μ({|g| >= v}) is the tail mass up to the last cell carrying value v
    last = np.r_[vals[1:] != vals[:-1], True]
    cand = vals[last] * tail[last] ** (1.0 / s)
    return float(cand.max(initial=0.0))


def strong_norm(values: np.ndarray, mu: np.ndarray, s: float, cell_measure: float) -> float:
    """``‖g‖_{L^s(μ)}``, computed on ``g / max|g|`` so tiny values do not underflow."""
    v = np.abs(values)
    m = float(v.max(initial=0.0))
    if m == 0.0:
        return 0.0
    return m * float(np.sum((v / m) ** s * mu) * cell_measure) ** (1.0 / s)


@dataclass
class RatioCheck:
    name: str
    max_ratio: float
    bound: float
    trials: int
    worst: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_ratio <= self.bound


def _ratio(num: float, den: float) -> float:
    if num == 0.0:
        return 0.0
    if den == 0.0:
        return float("inf")
    return num / den


def _random_f(rng, n, heavy):
    return rng.pareto(1.5, n) if heavy else np.abs(rng.standard_normal(n))


def weak_type_check(inst: Instance, trials: int = 100, L: TestingReport | None = None,
                    L_star: TestingReport | None = None, seed: int = 0,
                    constants: SuiteConstants = DEFAULT_CONSTANTS,
                    config: OptimizerConfig | None = None) -> list[RatioCheck]:
    """Max observed ratios for the weak-type bounds of U (by ℒ*^{1/p}) and T̄ (by ℒ^{1/r'})."""
    L_star = L_star if L_star is not None else compute_L_star(inst)
    L = L if L is not None else compute_L(inst, config)
    rng = np.random.default_rng([seed, 104729])
    cm = inst.grid.cell_measure
    sig, w = inst.sigma.values, inst.w.values
    lstar_root = L_star.value ** (1 / inst.p)
    l_root = L.value ** (1 / inst.r_conj)
    mem = inst.members

    fs = [np.ones(inst.n_cells)] + [np.asarray(m, float) for m in inst.grid.membership]
    gs = [np.array(mem)]
    for cube, a in L.per_cube_sequences.items():
        if L.per_cube[cube] > 0:
            gs.append(a * (inst.grid.fraction(cube) > 0))
    for k in range(trials):
        fs.append(_random_f(rng, inst.n_cells, k % 4 == 3))
        g = np.abs(rng.standard_normal(mem.shape)) * mem
        if k % 4 == 3:
            g = rng.pareto(1.5, mem.shape) * mem
        gs.append(g)

    u_worst, u_max = {}, 0.0
    for i, g in enumerate(gs):
        fam = ComponentFamily(inst, g)
        num = weak_norm(u_values(inst, fam.values), sig, inst.r_conj, cm)
        den = lstar_root * fam.mixed_norm(inst.p_conj, inst.q_conj, w)
        rat = _ratio(num, den)
        if rat > u_max:
            u_max, u_worst = rat, {"trial": i}
    t_worst, t_max = {}, 0.0
    for i, f in enumerate(fs):
        num = weak_norm(tbar_values(inst, f), w, inst.p, cm)
        den = l_root * strong_norm(f, sig, inst.r, cm)
        rat = _ratio(num, den)
        if rat > t_max:
            t_max, t_worst = rat, {"trial": i}
    return [RatioCheck("weak_U", u_max, constants.weak_dual, len(gs), u_worst),
            RatioCheck("weak_Tbar", t_max, constants.weak_direct, len(fs), t_worst)]


def strengthened_testing_check(inst: Instance, L: TestingReport | None = None,
                               L_star: TestingReport | None = None,
                               constants: SuiteConstants = DEFAULT_CONSTANTS,
                               config: OptimizerConfig | None = None) -> list[RatioCheck]:
    """Global-integral versions of both testing conditions over every grid cube.

    Also reports ``leak``: the largest ratio of a global integral to its local
    counterpart inside Q.
    """
    L_star = L_star if L_star is not None else compute_L_star(inst)
    L = L if L is not None else compute_L(inst, config)
    grid = inst.grid
    cm = grid.cell_measure
    sig, w = inst.sigma.values, inst.w.values
    ind = grid.membership
    t_max = u_max = leak = 0.0
    t_worst = u_worst = {}
    for cube, row in zip(grid.all_cubes, ind):
        tb = tbar_values(inst, row)
        glob = float(np.sum(tb**inst.p * w) * cm)
        loc = float(np.sum(tb**inst.p * w * row) * cm)
        leak = max(leak, _ratio(glob, loc))
        rat = _ratio(glob, L_star.value * float(row @ sig * cm) ** (inst.p / inst.r))
        if rat > t_max:
            t_max, t_worst = rat, {"cube": str(cube)}
        a = L.per_cube_sequences.get(cube)
        if a is None:
            continue
        V = u_values(inst, a * row)
        glob_u = float(np.sum(V**inst.r_conj * sig) * cm)
        loc_u = float(np.sum(V**inst.r_conj * sig * row) * cm)
        leak = max(leak, _ratio(glob_u, loc_u))
        rat = _ratio(glob_u, L.value * float(row @ w * cm) ** (inst.r_conj / inst.p_conj))
        if rat > u_max:
            u_max, u_worst = rat, {"cube": str(cube)}
    n = len(grid.all_cubes)
    return [RatioCheck("strengthened_Tbar", t_max, constants.strengthened_direct, n, t_worst),
            RatioCheck("strengthened_U", u_max, constants.strengthened_dual, n, u_worst),
            RatioCheck("strengthened_leak", leak, float("inf"), n, {})]
