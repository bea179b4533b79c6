"""Command-line entry point: ``twl <subcommand> ...``.

Exit codes: 0 all checks passed, 1 an invariant failed, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import decompositions as dec
from .dyadic import StepFunction, StructureError
from .harness import SweepConfig, gen_instance, run_sweep, run_verify
from .norms import OracleSizeError, opnorm_ascent, opnorm_bruteforce
from .operators import apply_T, maximal_function, tbar_values, u_values
from .serialize import dumps_instance, family_from_json, family_to_json, load_instance
from .suite import DEFAULT_CONSTANTS
from .testing import (OptimizerConfig, PreconditionError, carleson_constant, compute_L,
                      compute_L_star, lsu_constants)

log = logging.getLogger("twoweight")


class UsageError(Exception):
    pass


def _emit(obj, out=None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out and out != "-":
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _load_f(spec: str, n: int) -> np.ndarray:
    """A function on the cells: ``ones``, an inline comma list, or a JSON file."""
    if spec == "ones":
        return np.ones(n)
    path = Path(spec)
    if path.exists():
        data = json.loads(path.read_text())
        if isinstance(data, dict):
            data = data.get("values", data.get("witness"))
        vals = np.asarray(data, dtype=float)
    else:
        try:
            vals = np.array([float(x) for x in spec.split(",")])
        except ValueError:
            raise UsageError(f"--f: not a file or comma list: {spec!r}") from None
    if vals.shape != (n,):
        raise UsageError(f"--f needs {n} values, got {vals.size}")
    return vals


def _cube(c) -> dict | None:
    return None if c is None else c.to_json()


# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    grid = tuple(tuple(map(float, e.split(","))) for e in args.exponents) if args.exponents else None
    cfg = SweepConfig(seed=args.seed, count=max(args.index + 1, 1),
                      depth_range=(args.depth, args.depth), dimension=args.dim,
                      weight_profile=args.profile,
                      **({"exponent_grid": grid} if grid else {}))
    text = dumps_instance(gen_instance(cfg, args.index))
    if args.out and args.out != "-":
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def cmd_eval(args) -> int:
    inst = load_instance(args.instance)
    if args.op == "U":
        if not args.f:
            raise UsageError("--op U needs --f pointing at a component family JSON file")
        fam = family_from_json(inst, json.loads(Path(args.f).read_text()))
        _emit({"op": "U", "values": u_values(inst, fam.values).tolist()})
        return 0
    f = _load_f(args.f or "ones", inst.n_cells)
    if args.op == "T":
        _emit({"op": "T", **family_to_json(apply_T(inst, StepFunction(inst.grid, f)))})
    elif args.op == "Tbar":
        _emit({"op": "Tbar", "values": tbar_values(inst, f).tolist()})
    else:
        weight = inst.sigma if args.weight == "sigma" else inst.w
        m = maximal_function(StepFunction(inst.grid, f), weight)
        _emit({"op": "M", "weight": args.weight, "values": m.values.tolist()})
    return 0


def cmd_constants(args) -> int:
    inst = load_instance(args.instance)
    config = OptimizerConfig(seed=args.seed, oracle=args.oracle)
    Ls, L = compute_L_star(inst), compute_L(inst, config)
    out = {"L": L.value, "L_star": Ls.value, "L_witness": _cube(L.witness_cube),
           "L_star_witness": _cube(Ls.witness_cube), "converged": L.trace.converged,
           "L_lower_bound_only": L.lower_bound_only, "carleson": None, "lsu": None}
    if args.carleson:
        try:
            out["carleson"] = carleson_constant(inst)
        except PreconditionError as exc:
            raise UsageError(str(exc)) from None
    if args.q1:
        out["lsu"] = asdict(lsu_constants(inst))
    _emit(out)
    return 0


def cmd_opnorm(args) -> int:
    inst = load_instance(args.instance)
    q = 1.0 if args.q1 else None
    config = OptimizerConfig(seed=args.seed, oracle=args.oracle)
    if args.oracle:
        try:
            est = opnorm_bruteforce(inst, resolution=args.resolution, q=q)
        except OracleSizeError as exc:
            raise UsageError(str(exc)) from None
        asc = opnorm_ascent(inst, config, q=q)
        est.upper_bound = asc.upper_bound
        if asc.lower_bound > est.lower_bound:
            est.lower_bound, est.witness_f = asc.lower_bound, asc.witness_f
    else:
        est = opnorm_ascent(inst, config, q=q)
    _emit(est.to_json())
    return 0


def _corona_json(inst, f, cubes) -> dict:
    fam = dec.corona(inst, f, cubes)
    s = dec.corona_carleson_sum(inst, f, fam)
    chk = dec.check_corona(inst, f, cubes, fam)
    return {"principal_cubes": [c.to_json() for c in fam.principal_cubes],
            "gamma": [{"cube": q.to_json(), "principal": g.to_json()}
                      for q, g in sorted(fam.gamma.items())],
            "carleson_lhs": s.lhs, "carleson_rhs": s.rhs, "checks": asdict(chk)}


def cmd_decompose(args) -> int:
    inst = load_instance(args.instance)
    f = _load_f(args.f, inst.n_cells)
    lv = dec.Levels(inst, f)
    records = []
    ok = True
    for ls in lv.level_sets():
        k = ls.k
        rec = {"k": k, "omega_cells": np.flatnonzero(ls.omega).tolist(),
               "whitney_cubes": [c.to_json() for c in ls.family.cubes]}
        ok &= dec.check_whitney(inst.grid, ls.family).ok(inst.grid.dimension)
        if k in lv.analysis_levels():
            cl = dec.classify_cubes(inst, f, k, args.eta, levels=lv)
            rec["E_k"] = [{"cube": Q.to_json(), "cells": np.flatnonzero(e).tolist()}
                          for Q, e in cl.E_k.items()]
            rec["classes"] = [[Q.to_json() for Q in c] for c in cl.classes]
            rec["alpha"] = [cl.alpha[Q] for Q in ls.family.cubes]
            rec["beta"] = [cl.beta[Q] for Q in ls.family.cubes]
        records.append(rec)
    occ = dec.occurrence_count(inst, f, args.eta, levels=lv)
    out = {"levels": records,
           "occurrences": [{"cube": R.to_json(), "count": c} for R, c in occ.items()],
           "corona": {str(M): _corona_json(inst, f, dec.residue_inputs(lv, M)) for M in range(3)}}
    ok &= all(v["checks"]["covering"] and v["checks"]["sparse"] and v["checks"]["minimal"]
              for v in out["corona"].values())
    _emit(out)
    return 0 if ok else 1


def cmd_corona(args) -> int:
    inst = load_instance(args.instance)
    f = _load_f(args.f, inst.n_cells)
    cubes = inst.collection if args.cubes == "collection" else inst.grid.all_cubes
    out = _corona_json(inst, f, cubes)
    _emit(out)
    return 0 if all(out["checks"].values()) else 1


def cmd_verify(args) -> int:
    inst = load_instance(args.instance)
    rep = run_verify(inst, args.eta, DEFAULT_CONSTANTS, seed=args.seed,
                     weak_trials=args.trials)
    if args.json:
        _emit(rep.to_json())
    else:
        print(rep.table())
    if not rep.passed:
        replay = {"instance": rep.instance_json, "eta": args.eta, "seed": args.seed,
                  "trials": args.trials, "constants": DEFAULT_CONSTANTS.to_json(),
                  "failures": [i.to_json() for i in rep.items if not i.passed]}
        text = json.dumps(replay, sort_keys=True, indent=2)
        digest = hashlib.sha256(text.encode()).hexdigest()[:12]
        path = Path(args.replay_dir) / f"replay-{digest}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n")
        print(f"invariant failure; replay written to {path}", file=sys.stderr)
        return 1
    return 0


def cmd_sweep(args) -> int:
    obj = json.loads(Path(args.config).read_text()) if args.config else {}
    for key in ("seed", "count"):
        if getattr(args, key) is not None:
            obj[key] = getattr(args, key)
    cfg = SweepConfig.from_json(obj)
    if args.out_csv and args.out_csv != "-":
        with open(args.out_csv, "w", newline="") as fh:
            summary = run_sweep(cfg, fh)
    else:
        summary = run_sweep(cfg, sys.stdout)
    print(json.dumps(summary, sort_keys=True), file=sys.stderr)
    return 0 if summary["failures"] == 0 else 1


def cmd_calibrate(args) -> int:
    from .calibrate import run_calibration
    _emit(run_calibration(args.seed, args.per_profile).to_json(), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="twl", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a random instance")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--index", type=int, default=0)
    g.add_argument("--depth", type=int, default=2)
    g.add_argument("--dim", type=int, choices=(1, 2), default=1)
    g.add_argument("--profile", default="uniform",
                   choices=("uniform", "lognormal", "spiky", "near_degenerate"))
    g.add_argument("--exponents", nargs="*", metavar="P,R,Q",
                   help="exponent triples to draw from (default: the sweep grid)")
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen)

    e = sub.add_parser("eval", help="evaluate T, Tbar, U or the maximal function")
    e.add_argument("--instance", required=True)
    e.add_argument("--f", help="'ones', comma list or JSON file (U: component family JSON)")
    e.add_argument("--op", choices=("T", "Tbar", "U", "M"), default="Tbar")
    e.add_argument("--weight", choices=("sigma", "w"), default="sigma", help="weight for M")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("constants", help="testing constants")
    c.add_argument("--instance", required=True)
    c.add_argument("--carleson", action="store_true")
    c.add_argument("--q1", action="store_true", help="also the q = 1 constants")
    c.add_argument("--oracle", action="store_true", help="certify ℒ by lattice search")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_constants)

    o = sub.add_parser("opnorm", help="operator norm bounds")
    o.add_argument("--instance", required=True)
    o.add_argument("--oracle", action="store_true", help="brute-force oracle (<= 8 cells)")
    o.add_argument("--q1", action="store_true", help="norm of the linear q = 1 operator")
    o.add_argument("--resolution", type=int, default=12)
    o.add_argument("--seed", type=int, default=0)
    o.set_defaults(func=cmd_opnorm)

    d = sub.add_parser("decompose", help="level sets, Whitney cubes, classes, corona")
    d.add_argument("--instance", required=True)
    d.add_argument("--f", default="ones")
    d.add_argument("--eta", type=float, default=0.01)
    d.set_defaults(func=cmd_decompose)

    k = sub.add_parser("corona", help="principal cubes of a cube family")
    k.add_argument("--instance", required=True)
    k.add_argument("--f", default="ones")
    k.add_argument("--cubes", choices=("collection", "all"), default="all")
    k.set_defaults(func=cmd_corona)

    v = sub.add_parser("verify", help="run every check on one instance")
    v.add_argument("--instance", required=True)
    v.add_argument("--eta", type=float, default=0.01)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--trials", type=int, default=50)
    v.add_argument("--json", action="store_true")
    v.add_argument("--replay-dir", default=".")
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("sweep", help="reproducible CSV sweep")
    s.add_argument("--config", help="SweepConfig JSON file")
    s.add_argument("--out-csv", default="-")
    s.add_argument("--seed", type=int)
    s.add_argument("--count", type=int)
    s.set_defaults(func=cmd_sweep)

    cal = sub.add_parser("calibrate", help="oracle sweep for the suite constants")
    cal.add_argument("--seed", type=int, default=1000)
    cal.add_argument("--per-profile", type=int, default=125)
    cal.add_argument("--out")
    cal.set_defaults(func=cmd_calibrate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (UsageError, StructureError, ValueError, FileNotFoundError, KeyError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
