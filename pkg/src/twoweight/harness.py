"""Instance generation, the verification suite and reproducible sweeps."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from multiprocessing import Pool
from typing import Iterator

import numpy as np

from . import decompositions as dec
from .dyadic import DyadicGrid, Instance, Weight
from .norms import (BRUTEFORCE_MAX_CELLS, NormEstimate, opnorm_ascent, opnorm_bruteforce,
                    strengthened_testing_check, weak_type_check)
from .operators import (ComponentFamily, canonical_values, duality_pair, maximal_function,
                        t_coefficients, tbar_values)
from .dyadic import StepFunction
from .serialize import instance_to_json
from .suite import (DEFAULT_CONSTANTS, SuiteConstants, corona_bound, maximal_bound,
                    occurrence_bound)
from .testing import OptimizerConfig, compute_L, compute_L_star

log = logging.getLogger(__name__)

PROFILES = ("uniform", "lognormal", "spiky", "near_degenerate")
DEFAULT_EXPONENTS = ((2.0, 2.0, 2.0), (3.0, 2.0, 2.0), (2.5, 1.5, 3.0), (4.0, 4.0, 4.0))


@dataclass(frozen=True)
class SweepConfig:
    seed: int = 0
    count: int = 200
    depth_range: tuple[int, int] = (0, 4)
    dimension: int = 1
    exponent_grid: tuple[tuple[float, float, float], ...] = DEFAULT_EXPONENTS
    weight_profile: str = "uniform"
    eta: float = 0.01
    density: float = 0.7
    oracle_max_depth: int = 2
    weak_trials: int = 20
    timing: bool = False
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("count must be non-negative")
        if self.dimension not in (1, 2):
            raise ValueError("dimension must be 1 or 2")
        if self.weight_profile not in PROFILES:
            raise ValueError(f"unknown weight profile {self.weight_profile!r}")
        lo, hi = self.depth_range
        if not 0 <= lo <= hi:
            raise ValueError("bad depth range")
        for p, r, q in self.exponent_grid:
            if not (1 < r <= p and q > 1):
                raise ValueError(f"bad exponents (p, r, q) = {(p, r, q)}")
        object.__setattr__(self, "depth_range", (int(lo), int(hi)))
        object.__setattr__(self, "exponent_grid",
                           tuple(tuple(float(x) for x in e) for e in self.exponent_grid))

    @classmethod
    def from_json(cls, obj: dict) -> "SweepConfig":
        obj = dict(obj)
        if "depth_range" in obj:
            obj["depth_range"] = tuple(obj["depth_range"])
        if "exponent_grid" in obj:
            obj["exponent_grid"] = tuple(tuple(e) for e in obj["exponent_grid"])
        return cls(**obj)

    def to_json(self) -> dict:
        d = asdict(self)
        d["depth_range"] = list(self.depth_range)
        d["exponent_grid"] = [list(e) for e in self.exponent_grid]
        return d


def _weights(rng: np.random.Generator, n: int, profile: str) -> np.ndarray:
    if profile == "uniform":
        return rng.uniform(0.5, 2.0, n)
    if profile == "lognormal":
        return np.exp(rng.standard_normal(n))
    if profile == "spiky":
        v = rng.uniform(0.5, 2.0, n)
        if n > 1:
            v[rng.integers(n)] = 1e3 * v.max()
        return v
    # near_degenerate: log-uniform values stretched to a 10^6 spread
    v = 10.0 ** rng.uniform(-3.0, 3.0, n)
    if n > 1:
        i, j = rng.choice(n, 2, replace=False)
        v[i], v[j] = 1e-3, 1e3
    return v


def gen_instance(config: SweepConfig, index: int) -> Instance:
    rng = np.random.default_rng([config.seed, index])
    lo, hi = config.depth_range
    depth = int(rng.integers(lo, hi + 1))
    p, r, q = config.exponent_grid[int(rng.integers(len(config.exponent_grid)))]
    grid = DyadicGrid(config.dimension, depth)
    sigma = _weights(rng, grid.n_cells, config.weight_profile)
    w = _weights(rng, grid.n_cells, config.weight_profile)
    cubes = grid.all_cubes
    keep = rng.random(len(cubes)) < config.density
    if not keep.any():
        keep[rng.integers(len(cubes))] = True
    taus = np.abs(rng.standard_normal(len(cubes)))
    tau = {c: float(t) for c, t, k in zip(cubes, taus, keep) if k}
    return Instance(grid, Weight(grid, sigma), Weight(grid, w), p, r, q, tau)


# ---------------------------------------------------------------------------
# verification

@dataclass
class VerifyItem:
    name: str
    passed: bool
    max_ratio: float = 0.0
    bound: float | None = None
    failures: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"name": self.name, "passed": self.passed, "max_ratio": self.max_ratio,
                "bound": self.bound, "failures": self.failures[:10]}


@dataclass
class VerifyReport:
    items: list[VerifyItem]
    L: float
    L_star: float
    opnorm: NormEstimate
    oracle_norm: float | None
    max_occurrence: int
    instance_json: dict = field(repr=False, default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(i.passed for i in self.items)

    def item(self, name: str) -> VerifyItem:
        return next(i for i in self.items if i.name == name)

    def to_json(self) -> dict:
        return {"passed": self.passed, "L": self.L, "L_star": self.L_star,
                "opnorm": self.opnorm.to_json(), "oracle_norm": self.oracle_norm,
                "max_occurrence": self.max_occurrence,
                "items": [i.to_json() for i in self.items]}

    def table(self) -> str:
        lines = [f"{'check':<22} {'result':<6} {'max ratio':>12} {'bound':>10}"]
        for it in self.items:
            bound = "" if it.bound is None else f"{it.bound:.4g}"
            lines.append(f"{it.name:<22} {'pass' if it.passed else 'FAIL':<6} "
                         f"{it.max_ratio:>12.6g} {bound:>10}")
        return "\n".join(lines)


def _rel_close(a: float, b: float, tol: float) -> bool:
    return abs(a - b) <= tol * max(abs(a), abs(b), 1e-300)


def _worst(item: VerifyItem, ratio: float, detail: dict) -> None:
    if ratio > item.max_ratio:
        item.max_ratio = ratio


def necessity_ratios(inst: Instance, L: float, L_star: float, lb: float) -> tuple[float, float]:
    """``ℒ*^{1/p} / lb`` and ``ℒ^{1/r'} / lb``; each must not exceed 1."""
    a = L_star ** (1 / inst.p)
    b = L ** (1 / inst.r_conj)
    return (a / lb if lb > 0 else (0.0 if a == 0 else float("inf")),
            b / lb if lb > 0 else (0.0 if b == 0 else float("inf")))


def decomposition_items(inst: Instance, f: np.ndarray, eta: float, items: dict[str, VerifyItem],
                        tag: str) -> int:
    """Run every combinatorial check of the level-set machinery for one f.

    Returns the largest occurrence count.
    """
    lv = dec.Levels(inst, f)
    grid = inst.grid
    wh, ek, mp, nest = items["whitney"], items["ek_identity"], items["max_principle"], items["nested"]
    for ls in lv.level_sets():
        chk = dec.check_whitney(grid, ls.family)
        wh.max_ratio = max(wh.max_ratio, chk.max_parent_overlap)
        if not chk.ok(grid.dimension):
            wh.passed = False
            wh.failures.append({"f": tag, "k": ls.k, "check": asdict(chk)})
    if lv.window is not None:
        lo, hi = lv.window
        fams = {k: lv.family(k) for k in range(lo - 2, hi + 1)}
        for k, fk in fams.items():
            for l, fl in fams.items():
                if l >= k:
                    continue
                # (e.nested): Q ∈ 𝒬_k strictly inside Q' ∈ 𝒬_l forces k > l
                for Q in fl.cubes:
                    for Qp in fk.cubes:
                        if Q != Qp and Qp.contains(Q):
                            nest.passed = False
                            nest.failures.append({"f": tag, "k": l, "Q": str(Q), "outer_k": k})
    for k in lv.analysis_levels():
        fam = lv.family(k)
        band = lv.omega(k + 2) & ~lv.omega(k + 3)
        sets = dec.ek_sets(inst, f, k, fam, levels=lv)
        union = sum(sets.values(), np.zeros(grid.n_cells))
        if not np.array_equal(union, band.astype(float)):
            ek.passed = False
            ek.failures.append({"f": tag, "k": k})
        for Q, e in sets.items():
            if np.any(e > grid.fraction(Q)):
                ek.passed = False
                ek.failures.append({"f": tag, "k": k, "Q": str(Q)})
            res = dec.max_principle_check(inst, f, k, Q, levels=lv)
            ratio = max(res.out_val_max, res.far_val_max) / res.bound
            mp.max_ratio = max(mp.max_ratio, ratio)
            if not (res.passed and res.inner_passed):
                mp.passed = False
                mp.failures.append({"f": tag, "k": k, "Q": str(Q), "result": asdict(res)})

    # principal cubes per residue class of k
    co, cs = items["corona"], items["corona_carleson"]
    for M in range(3):
        cubes = dec.residue_inputs(lv, M)
        if not cubes:
            continue
        fam = dec.corona(inst, f, cubes)
        chk = dec.check_corona(inst, f, cubes, fam)
        if not chk.ok:
            co.passed = False
            co.failures.append({"f": tag, "M": M, "check": asdict(chk)})
        s = dec.corona_carleson_sum(inst, f, fam)
        ratio = s.lhs / s.rhs if s.rhs > 0 else 0.0
        cs.max_ratio = max(cs.max_ratio, ratio)
        if ratio > cs.bound:
            cs.passed = False
            cs.failures.append({"f": tag, "M": M, "lhs": s.lhs, "rhs": s.rhs})

    rc, oc = items["rcubes"], items["occurrence"]
    hits: dict = {}
    for k in lv.analysis_levels():
        cl = dec.classify_cubes(inst, f, k, eta, levels=lv)
        for Q in cl.classes[2]:
            nb = dec.neighbor_families(lv, k, Q)
            if not (nb.union_covers and nb.union_within) or nb.crowd > 2 ** (grid.dimension + 1):
                rc.passed = False
                rc.failures.append({"f": tag, "k": k, "Q": str(Q), "covers": nb.union_covers,
                                    "within": nb.union_within, "crowd": nb.crowd})
            for R in nb.R_k:
                hits.setdefault(R, set()).add(k)
                dc = dec.dual_constancy_check(inst, f, k, Q, R, levels=lv)
                if not dc.constant:
                    rc.passed = False
                    rc.failures.append({"f": tag, "k": k, "Q": str(Q), "R": str(R),
                                        "values": dc.values})
    top = max((len(v) for v in hits.values()), default=0)
    oc.max_ratio = max(oc.max_ratio, top)
    if top > oc.bound:
        oc.passed = False
        oc.failures.append({"f": tag, "max_count": top})
    return top


def run_verify(inst: Instance, eta: float = 0.01,
               constants: SuiteConstants = DEFAULT_CONSTANTS,
               config: OptimizerConfig | None = None, seed: int = 0,
               oracle: bool | None = None, weak_trials: int = 50,
               adjoint_trials: int = 100) -> VerifyReport:
    config = config or OptimizerConfig()
    small = inst.n_cells <= BRUTEFORCE_MAX_CELLS
    oracle = small if oracle is None else (oracle and small)
    if oracle and not config.oracle:
        config = OptimizerConfig(**{**asdict(config), "oracle": True})
    rng = np.random.default_rng([seed, 31337])
    cm = inst.grid.cell_measure
    sig = inst.sigma.values

    L_star = compute_L_star(inst)
    L = compute_L(inst, config)
    est = opnorm_ascent(inst, config, L_star=L_star, L=L, constants=constants)
    oracle_norm = opnorm_bruteforce(inst).lower_bound if oracle else None
    items: list[VerifyItem] = []

    # necessity with constant 1
    best = max(est.lower_bound, oracle_norm or 0.0)
    ns, nl = necessity_ratios(inst, L.value, L_star.value, best)
    items.append(VerifyItem("necessity_L_star", ns <= 1 + 1e-9, ns, 1 + 1e-9))
    items.append(VerifyItem("necessity_L", nl <= 1 + 1e-6, nl, 1 + 1e-6))
    if oracle_norm is not None:
        denom = max(L.value ** (1 / inst.r_conj), L_star.value ** (1 / inst.p))
        eq = oracle_norm / denom if denom > 0 else 1.0
        items.append(VerifyItem("equivalence", 1 - 1e-6 <= eq <= constants.equivalence, eq,
                                constants.equivalence))

    # adjointness
    adj = VerifyItem("adjointness", True, 0.0, 1e-10)
    for t in range(adjoint_trials):
        f = np.abs(rng.standard_normal(inst.n_cells)) if t % 2 else rng.standard_normal(inst.n_cells)
        g = ComponentFamily(inst, rng.standard_normal((len(inst.collection), inst.n_cells)))
        dp = duality_pair(inst, f, g)
        err = abs(dp.lhs - dp.rhs) / max(abs(dp.lhs), abs(dp.rhs), 1e-300)
        adj.max_ratio = max(adj.max_ratio, err if dp.lhs or dp.rhs else 0.0)
        if not _rel_close(dp.lhs, dp.rhs, 1e-10) and (dp.lhs or dp.rhs):
            adj.passed = False
            adj.failures.append({"trial": t, "lhs": dp.lhs, "rhs": dp.rhs})
    items.append(adj)

    # decomposition functions: the norm witness and one random function
    fs = {"witness": est.witness_f.values, "random": np.abs(rng.standard_normal(inst.n_cells))}

    # canonical sequence: unit ℓ^{q'} norm and Hölder equality
    bn = VerifyItem("b_normalization", True, 0.0, 1e-10)
    for tag, f in fs.items():
        a = canonical_values(inst, f)
        tb = tbar_values(inst, f)
        pos = tb > 0
        norm = np.sum(a**inst.q_conj, axis=0) ** (1 / inst.q_conj) if a.size else np.zeros_like(tb)
        pair = t_coefficients(inst, f) @ a if a.size else np.zeros_like(tb)
        dev = max(float(np.max(np.abs(norm[pos] - 1.0), initial=0.0)),
                  float(np.max(np.abs(pair[pos] - tb[pos]) / tb[pos], initial=0.0)))
        bn.max_ratio = max(bn.max_ratio, dev)
        if dev > 1e-10 or np.any(norm[~pos] > 0):
            bn.passed = False
            bn.failures.append({"f": tag, "deviation": dev})
    items.append(bn)

    mx = VerifyItem("maximal_function", True, 0.0, maximal_bound(inst.r))
    for tag, f in fs.items():
        M = maximal_function(StepFunction(inst.grid, f), inst.sigma).values
        num = float(np.sum(M**inst.r * sig) * cm) ** (1 / inst.r)
        den = float(np.sum(f**inst.r * sig) * cm) ** (1 / inst.r)
        rat = num / den if den else 0.0
        mx.max_ratio = max(mx.max_ratio, rat)
        if rat > mx.bound * (1 + 1e-12):
            mx.passed = False
            mx.failures.append({"f": tag, "ratio": rat})
    items.append(mx)

    dec_items = {
        "whitney": VerifyItem("whitney", True, 0.0, 2.0 ** (inst.grid.dimension + 1)),
        "nested": VerifyItem("nested", True),
        "ek_identity": VerifyItem("ek_identity", True),
        "max_principle": VerifyItem("max_principle", True, 0.0, 1.0),
        "corona": VerifyItem("corona", True),
        "corona_carleson": VerifyItem("corona_carleson", True, 0.0, corona_bound(inst.r)),
        "rcubes": VerifyItem("rcubes", True),
        "occurrence": VerifyItem("occurrence", True, 0.0, float(occurrence_bound(eta))),
    }
    top = 0
    for tag, f in fs.items():
        top = max(top, decomposition_items(inst, f, eta, dec_items, tag))
    items.extend(dec_items.values())

    for chk in weak_type_check(inst, weak_trials, L=L, L_star=L_star, seed=seed,
                               constants=constants):
        items.append(VerifyItem(chk.name, chk.passed, chk.max_ratio, chk.bound,
                                [chk.worst] if not chk.passed else []))
    for chk in strengthened_testing_check(inst, L=L, L_star=L_star, constants=constants):
        if chk.name == "strengthened_leak":
            continue
        items.append(VerifyItem(chk.name, chk.passed, chk.max_ratio, chk.bound,
                                [chk.worst] if not chk.passed else []))
    return VerifyReport(items, L.value, L_star.value, est, oracle_norm, top,
                        instance_to_json(inst))


# ---------------------------------------------------------------------------
# sweeps

CSV_COLUMNS = ("instance_id", "p", "r", "q", "depth", "L", "L_star", "opnorm_lb", "upper_cert",
               "ratio", "max_cR", "lemma_flags", "runtime_ms")


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def sweep_row(args) -> dict:
    config, index, constants = args
    t0 = time.perf_counter()
    inst = gen_instance(config, index)
    oracle = inst.grid.depth <= config.oracle_max_depth
    try:
        rep = run_verify(inst, config.eta, constants, seed=config.seed, oracle=oracle,
                         weak_trials=config.weak_trials, adjoint_trials=20)
        denom = max(rep.L ** (1 / inst.r_conj), rep.L_star ** (1 / inst.p))
        lb = rep.opnorm.lower_bound
        ratio = lb / denom if denom > 0 else 1.0
        failed = [i.name for i in rep.items if not i.passed]
        row = {"L": rep.L, "L_star": rep.L_star, "opnorm_lb": lb,
               "upper_cert": rep.opnorm.upper_bound, "ratio": ratio,
               "max_cR": rep.max_occurrence,
               "lemma_flags": "ok" if not failed else "fail:" + "|".join(failed)}
    except Exception as exc:  # recorded in-row; the sweep continues
        log.exception("instance %d failed", index)
        row = {"L": float("nan"), "L_star": float("nan"), "opnorm_lb": float("nan"),
               "upper_cert": float("nan"), "ratio": float("nan"), "max_cR": -1,
               "lemma_flags": f"error:{type(exc).__name__}"}
    runtime = round((time.perf_counter() - t0) * 1000) if config.timing else ""
    return {"instance_id": f"{config.seed}-{index}", "p": inst.p, "r": inst.r, "q": inst.q,
            "depth": inst.grid.depth, **row, "runtime_ms": runtime}


def _threads() -> int:
    env = os.environ.get("TWL_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def iter_rows(config: SweepConfig, constants: SuiteConstants = DEFAULT_CONSTANTS,
              threads: int | None = None) -> Iterator[dict]:
    threads = threads or _threads()
    jobs = [(config, i, constants) for i in range(config.count)]
    if threads <= 1 or len(jobs) <= 1:
        yield from map(sweep_row, jobs)
        return
    with Pool(threads) as pool:
        yield from pool.imap(sweep_row, jobs)  # imap keeps index order


def run_sweep(config: SweepConfig, out: io.TextIOBase,
              constants: SuiteConstants = DEFAULT_CONSTANTS, threads: int | None = None) -> dict:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    n = fails = 0
    max_ratio = float("-inf")
    min_ratio = float("inf")
    max_c = 0
    for row in iter_rows(config, constants, threads):
        writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
        n += 1
        if row["lemma_flags"] != "ok" or not row["ratio"] >= 1 - 1e-6:
            fails += 1
        if row["ratio"] == row["ratio"]:
            max_ratio = max(max_ratio, row["ratio"])
            min_ratio = min(min_ratio, row["ratio"])
        max_c = max(max_c, row["max_cR"])
    summary = {"instances": n, "min_ratio": min_ratio if n else None,
               "max_ratio": max_ratio if n else None, "max_cR": max_c, "failures": fails}
    out.write("# summary " + json.dumps(summary, sort_keys=True) + "\n")
    return summary
