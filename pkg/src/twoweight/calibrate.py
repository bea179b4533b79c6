"""Oracle sweep that measures the implied constants frozen in ``twoweight.suite``.

Each constant is the largest observed ratio between the two sides of an
inequality whose constant is not made explicit.  The sweep walks all weight
profiles and exponent triples on grids small enough for the brute-force oracle.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

from .harness import PROFILES, SweepConfig, gen_instance
from .norms import (BRUTEFORCE_MAX_CELLS, opnorm_ascent, opnorm_bruteforce,
                    strengthened_testing_check, weak_type_check)
from .testing import OptimizerConfig, carleson_constant, compute_L, compute_L_star, lsu_constants

CARLESON_EXPONENTS = ((2.0, 2.0, 2.0), (3.0, 3.0, 3.0))


@dataclass
class Calibration:
    equivalence: float = 0.0
    equivalence_min: float = float("inf")
    lsu: float = 0.0
    lsu_lower_min: float = float("inf")   # ‖R‖ / max{direct, dual}; must stay >= 1
    carleson: float = 0.0
    carleson_lower_min: float = float("inf")  # ‖T̄‖^p / carleson; must stay >= 1
    weak_dual: float = 0.0
    weak_direct: float = 0.0
    strengthened_direct: float = 0.0
    strengthened_dual: float = 0.0
    instances: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)


def _oracle_norm(inst, config, q=None) -> float:
    brute = opnorm_bruteforce(inst, q=q).lower_bound
    asc = opnorm_ascent(inst, config, q=q).lower_bound if q is not None else 0.0
    return max(brute, asc)


def run_calibration(seed: int = 1000, per_profile: int = 125) -> Calibration:
    cal = Calibration()
    config = OptimizerConfig(oracle=True)
    counts = {}
    for profile in PROFILES:
        sweeps = [
            ("main", SweepConfig(seed=seed, count=per_profile, depth_range=(0, 3),
                                 weight_profile=profile)),
            ("carleson", SweepConfig(seed=seed + 1, count=per_profile // 2, depth_range=(0, 3),
                                     weight_profile=profile,
                                     exponent_grid=CARLESON_EXPONENTS)),
        ]
        for kind, cfg in sweeps:
            for i in range(cfg.count):
                inst = gen_instance(cfg, i)
                assert inst.n_cells <= BRUTEFORCE_MAX_CELLS
                Ls, L = compute_L_star(inst), compute_L(inst, config)
                asc = opnorm_ascent(inst, config, L_star=Ls, L=L)
                norm = max(opnorm_bruteforce(inst).lower_bound, asc.lower_bound)
                denom = max(L.value ** (1 / inst.r_conj), Ls.value ** (1 / inst.p))
                if denom > 0:
                    eq = norm / denom
                    cal.equivalence = max(cal.equivalence, eq)
                    cal.equivalence_min = min(cal.equivalence_min, eq)
                if kind == "carleson":
                    c = carleson_constant(inst)
                    if c > 0:
                        ratio = norm**inst.p / c
                        cal.carleson = max(cal.carleson, ratio)
                        cal.carleson_lower_min = min(cal.carleson_lower_min, ratio)
                    continue
                lsu = lsu_constants(inst)
                m = max(lsu.direct_constant, lsu.dual_constant)
                if m > 0:
                    ratio = _oracle_norm(inst, config, q=1.0) / m
                    cal.lsu = max(cal.lsu, ratio)
                    cal.lsu_lower_min = min(cal.lsu_lower_min, ratio)
                for chk in weak_type_check(inst, 40, L=L, L_star=Ls, seed=i):
                    attr = {"weak_U": "weak_dual", "weak_Tbar": "weak_direct"}[chk.name]
                    setattr(cal, attr, max(getattr(cal, attr), chk.max_ratio))
                for chk in strengthened_testing_check(inst, L=L, L_star=Ls):
                    attr = {"strengthened_Tbar": "strengthened_direct",
                            "strengthened_U": "strengthened_dual"}.get(chk.name)
                    if attr:
                        setattr(cal, attr, max(getattr(cal, attr), chk.max_ratio))
            counts[f"{profile}/{kind}"] = cfg.count
    cal.instances = counts
    return cal
