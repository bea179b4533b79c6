"""Batched evaluation and search over the non-negative part of an L^r(σ) sphere.

Two independent maximisers of the convex functional

    Φ(f) = (Σ_x ν_x T̄(fσ)(x)^s |cell|)^{1/s} / ‖f‖_{L^r(σ)},   f >= 0,

live here.  ``lattice_search`` scans a simplex lattice and polishes the best
points with L-BFGS-B; ``power_ascent`` iterates the exact maximiser of the
linearisation, which never decreases Φ because Φ^s is convex.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .dyadic import Instance


def tbar_batch(inst: Instance, F: np.ndarray, q: float | None = None) -> np.ndarray:
    """``T̄(fσ)`` for every row ``f`` of ``F``; shape ``(len(F), n_cells)``."""
    q = inst.q if q is None else q
    if len(inst.collection) == 0:
        return np.zeros((F.shape[0], inst.n_cells))
    kernel = inst.members * inst.sigma.values * inst.grid.cell_measure / inst.volumes[:, None]
    # T̄ is positively homogeneous: evaluate on rows rescaled to max 1
    scale = np.max(np.abs(F), axis=1, initial=0.0)
    scale[scale == 0] = 1.0
    coef = np.abs((F / scale[:, None]) @ kernel.T) * inst.tau_vec
    if q == 1.0:
        return (coef @ inst.members) * scale[:, None]
    return (coef**q @ inst.members) ** (1.0 / q) * scale[:, None]


def sigma_norm(inst: Instance, F: np.ndarray) -> np.ndarray:
    cm = inst.grid.cell_measure
    return (np.abs(F) ** inst.r @ inst.sigma.values * cm) ** (1.0 / inst.r)


def ratio_batch(inst: Instance, F: np.ndarray, nu: np.ndarray, s: float,
                q: float | None = None) -> np.ndarray:
    cm = inst.grid.cell_measure
    tb = tbar_batch(inst, F, q)
    num = (tb**s @ nu * cm) ** (1.0 / s)
    den = sigma_norm(inst, F)
    out = np.zeros(F.shape[0])
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


def simplex_lattice(n: int, resolution: int) -> np.ndarray:
    """All points of ``{x >= 0 : Σx = 1}`` with coordinates in ``(1/resolution)ℤ``."""
    if n == 1:
        return np.ones((1, 1))
    bars = np.array(list(itertools.combinations(range(resolution + n - 1), n - 1)))
    padded = np.hstack([np.full((len(bars), 1), -1), bars,
                        np.full((len(bars), 1), resolution + n - 1)])
    return (np.diff(padded, axis=1) - 1) / resolution


def lattice_size(n: int, resolution: int) -> int:
    from math import comb
    return comb(resolution + n - 1, n - 1)


@dataclass
class SearchResult:
    value: float
    point: np.ndarray
    evaluations: int
    trace: list[float] = field(default_factory=list)
    converged: bool = True


def lattice_search(inst: Instance, support: np.ndarray, nu: np.ndarray, s: float,
                   resolution: int, q: float | None = None, polish: int = 4,
                   chunk: int = 20000) -> SearchResult:
    """Grid search on ``support`` cells followed by bounded quasi-Newton polish."""
    idx = np.flatnonzero(support)
    n = len(idx)
    pts = simplex_lattice(n, resolution)
    best_vals = np.full(0, 0.0)
    best_pts = np.zeros((0, n))
    for start in range(0, len(pts), chunk):
        block = pts[start:start + chunk]
        F = np.zeros((len(block), inst.n_cells))
        F[:, idx] = block
        vals = ratio_batch(inst, F, nu, s, q)
        keep = np.argsort(-vals, kind="stable")[:polish]
        best_vals = np.concatenate([best_vals, vals[keep]])
        best_pts = np.vstack([best_pts, block[keep]])
    order = np.argsort(-best_vals, kind="stable")[:polish]
    evals = len(pts)

    def neg(x):
        F = np.zeros((1, inst.n_cells))
        F[0, idx] = np.abs(x)
        return -ratio_batch(inst, F, nu, s, q)[0]

    best = SearchResult(float(best_vals[order[0]]), best_pts[order[0]], evals)
    for j in order:
        res = minimize(neg, best_pts[j], method="L-BFGS-B",
                       bounds=[(0.0, None)] * n,
                       options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 2000})
        best.evaluations += int(res.nfev)
        val = -float(res.fun)
        if val > best.value:
            best.value, best.point = val, np.abs(res.x)
    point = np.zeros(inst.n_cells)
    point[idx] = best.point
    point /= sigma_norm(inst, point[None, :])[0] or 1.0
    best.point = point
    best.value = float(ratio_batch(inst, point[None, :], nu, s, q)[0])
    return best


FLUSH = 1e-100


def _ascent_direction(inst: Instance, F: np.ndarray, nu: np.ndarray, s: float,
                      q: float) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of ``Σ ν T̄^s`` up to the factor ``s σ |cell|``, and Φ^s."""
    cm = inst.grid.cell_measure
    mem = inst.members
    kernel = mem * inst.sigma.values * cm / inst.volumes[:, None]
    coef = F @ kernel.T * inst.tau_vec                      # (S, nQ)
    tb = (coef**q @ mem) ** (1.0 / q) if q != 1.0 else coef @ mem
    phi = tb**s @ nu * cm
    pos = tb > 0
    weight = np.zeros_like(tb)
    weight[pos] = tb[pos] ** (s - q)
    inner = (weight * nu) @ mem.T * cm                       # Σ_{x∈R} ν T̄^{s-q}
    with np.errstate(divide="ignore", invalid="ignore"):
        dcoef = np.where(coef > 0, coef ** (q - 1.0), 1.0 if q == 1.0 else 0.0)
    h = (dcoef * inst.tau_vec * inner / inst.volumes) @ mem
    return h, phi


def power_ascent(inst: Instance, starts: np.ndarray, nu: np.ndarray, s: float,
                 q: float | None = None, support: np.ndarray | None = None,
                 max_iters: int = 500, tol: float = 1e-13):
    """Monotone ascent from every row of ``starts``.

    Returns ``(points, values, iterations, converged, trace)`` where ``trace``
    lists the best value after each sweep.
    """
    q = inst.q if q is None else q
    r = inst.r
    F = np.abs(np.array(starts, dtype=float))
    if support is not None:
        F = F * support
    norms = sigma_norm(inst, F)
    norms[norms == 0] = 1.0
    F = F / norms[:, None]
    prev = None
    trace = []
    converged = np.zeros(F.shape[0], dtype=bool)
    it = 0
    for it in range(1, max_iters + 1):
        h, phi = _ascent_direction(inst, F, nu, s, q)
        trace.append(float(phi.max()) ** (1.0 / s) if phi.size else 0.0)
        if prev is not None:
            converged = np.abs(phi - prev) <= tol * np.maximum(np.abs(phi), 1e-300)
            if converged.all():
                break
        G = np.maximum(h, 0.0) ** (1.0 / (r - 1.0))
        # entries this far below the row maximum cannot move the norm but decay
        # into subnormals, where later products lose all relative precision
        G[G < FLUSH * G.max(axis=1, initial=0.0)[:, None]] = 0.0
        if support is not None:
            G = G * support
        gn = sigma_norm(inst, G)
        move = gn > 0
        F[move] = G[move] / gn[move, None]
        prev = phi
    vals = ratio_batch(inst, F, nu, s, q)
    return F, vals, it, converged, trace
