"""Frozen suite constants for the inequalities whose implied constants are unspecified.

Values come from the oracle sweep in ``twoweight.calibrate`` (seed 1000,
125 instances per weight profile, depth <= 3, plus 62 per profile with
r = q = p).  Each calibrated constant is frozen at 2.5, about twice the
largest ratio observed (all observed maxima lie below 1.28).  The
Carleson constant keeps the embedding guide ``(p')^p``, which exceeds every
observed ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict


@dataclass(frozen=True)
class SuiteConstants:
    equivalence: float = 2.5          # observed max 1.1018
    carleson: float | None = None     # None: use the embedding constant (p')^p; observed 1.2727
    lsu: float = 2.5                  # observed max 1.1712
    weak_dual: float = 2.5            # observed max 1.0570
    weak_direct: float = 2.5          # observed max 1.0194
    strengthened_direct: float = 2.5  # observed max 1.1907
    strengthened_dual: float = 2.5    # observed max 1.0344

    def carleson_bound(self, p: float) -> float:
        if self.carleson is not None:
            return self.carleson
        return (p / (p - 1.0)) ** p

    def to_json(self) -> dict:
        return asdict(self)


def corona_bound(r: float) -> float:
    """``2^r (r')^r``."""
    return 2.0**r * (r / (r - 1.0)) ** r


def occurrence_bound(eta: float) -> int:
    return 6 + math.ceil(1.0 / eta)


def maximal_bound(s: float) -> float:
    """Doob's constant ``s'`` for the dyadic maximal function on L^s(ω)."""
    return s / (s - 1.0)


DEFAULT_CONSTANTS = SuiteConstants()
