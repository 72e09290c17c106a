"""Semismooth Newton for box-constrained mixed complementarity problems.

Find y in [lo, hi] with, for every component n,

    G_n(y) >= 0 if y_n = lo_n,   G_n(y) = 0 if lo_n < y_n < hi_n,   G_n(y) <= 0 if y_n = hi_n.

The conditions are rewritten with the Fischer-Burmeister function
phi(a, b) = a + b - sqrt(a^2 + b^2) as Phi(y) = 0:

    both bounds:  phi(y - lo, -phi(hi - y, -G))
    lower only:   phi(y - lo, G)
    upper only:   -phi(hi - y, -G)
    no bounds:    G
    lo == hi:     y - lo

Each Newton row is a convex combination (1 - t_n) e_n + t_n grad G_n of the
generalized Jacobian, normalized so that t_n in [0, 1]. At kinks the
subgradient from the interior side is used (t_n = 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, StagnationError

__all__ = ["fischer_burmeister", "fb_residual", "complementarity_residual", "MCPResult",
           "semismooth_newton"]


def fischer_burmeister(a, b):
    return a + b - np.hypot(a, b)


def _dfb(a, b):
    """Partial derivatives of phi; (0, 1) at the kink a = b = 0."""
    r = np.hypot(a, b)
    safe = r > 0
    da = np.where(safe, 1.0 - a / np.where(safe, r, 1.0), 0.0)
    db = np.where(safe, 1.0 - b / np.where(safe, r, 1.0), 1.0)
    return da, db


def fb_residual(y, G, lo, hi, with_rows: bool = False, weight=1.0):
    """Reformulated residual Phi and, optionally, row weights (ce, cg) such
    that the generalized Jacobian row is ce * e_n + cg * grad G_n.

    ``weight`` (> 0, scalar or per row) multiplies the distances to the
    bounds; it changes the path but not the solution set. Large weights make
    the reformulation approach the min function."""
    has_lo = np.isfinite(lo)
    has_hi = np.isfinite(hi)
    fixed = has_lo & has_hi & (lo == hi)
    both = has_lo & has_hi & ~fixed
    lower = has_lo & ~has_hi
    upper = has_hi & ~has_lo

    Phi = G.astype(float).copy()
    ce = np.zeros_like(Phi)
    cg = np.ones_like(Phi)

    w = np.broadcast_to(np.asarray(weight, dtype=float), Phi.shape)
    a = w * np.where(has_lo, y - np.where(has_lo, lo, 0.0), 0.0)
    c = w * np.where(has_hi, np.where(has_hi, hi, 0.0) - y, 0.0)

    # lower only
    idx = lower
    Phi[idx] = fischer_burmeister(a[idx], G[idx])
    da, db = _dfb(a[idx], G[idx])
    ce[idx], cg[idx] = da, db

    # upper only: -phi(c, -G), with dc/dy = -1
    idx = upper
    Phi[idx] = -fischer_burmeister(c[idx], -G[idx])
    da, db = _dfb(c[idx], -G[idx])
    ce[idx], cg[idx] = da, db

    # both: phi(a, -psi), psi = phi(c, -G)
    idx = both
    psi = fischer_burmeister(c[idx], -G[idx])
    Phi[idx] = fischer_burmeister(a[idx], -psi)
    d1a, d1b = _dfb(a[idx], -psi)
    d2a, d2b = _dfb(c[idx], -G[idx])
    # d(-psi)/dy = d2a * e + d2b * gradG
    ce[idx] = d1a + d1b * d2a
    cg[idx] = d1b * d2b

    ce = ce * w
    Phi[fixed] = y[fixed] - lo[fixed]
    ce[fixed], cg[fixed] = 1.0, 0.0

    if not with_rows:
        return Phi
    return Phi, ce, cg


def complementarity_residual(y, G, lo, hi) -> np.ndarray:
    """Componentwise natural residual y - clip(y - G, lo, hi); zero exactly at
    MCP solutions. Equals mid(y - hi, G, y - lo)."""
    return y - np.clip(y - G, lo, hi)


@dataclass
class MCPResult:
    iterations: int = 0
    linear_iterations: int = 0
    converged: bool = False
    merit_history: list = field(default_factory=list)
    step_lengths: list = field(default_factory=list)
    message: str = ""


def _line_search(residual, y, z, lo, hi, merit, weight, sigma, min_step):
    """Armijo backtracking along the projected path clip(y + lam z)."""
    lam = 1.0
    while True:
        y_new = np.clip(y + lam * z, lo, hi)
        G_new = residual(y_new)
        merit_new = np.linalg.norm(fb_residual(y_new, G_new, lo, hi, weight=weight))
        ok = merit_new <= (1.0 - sigma * lam) * merit
        if ok or lam < min_step:
            return lam, y_new, G_new, merit_new, ok
        lam *= 0.5


def semismooth_newton(residual, solve_newton_system, y0, lo, hi, atol, max_iter: int = 50,
                      linear_rtol: float = 1e-7, sigma: float = 1e-4, min_step: float = 1e-8,
                      max_increases: int = 5, weight=1.0):
    """Generic semismooth Newton on the Fischer-Burmeister reformulation.

    ``residual(y) -> G`` and ``solve_newton_system(y, t, rhs, rtol) -> (z, its)``
    where the system matrix is ``diag(t) J_G(y) + diag(1 - t)``. Iterates are
    projected onto [lo, hi]. Raises :class:`StagnationError` after
    ``max_increases`` consecutive merit increases and :class:`ConvergenceError`
    when ``max_iter`` is exceeded; both carry the last iterate.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(lo > hi):
        raise ValueError("lower bound exceeds upper bound")
    y = np.clip(np.asarray(y0, dtype=float), lo, hi)
    res = MCPResult()
    G = residual(y)
    Phi, ce, cg = fb_residual(y, G, lo, hi, with_rows=True, weight=weight)
    merit = np.linalg.norm(Phi)
    res.merit_history.append(merit)
    increases = 0
    while merit > atol:
        if res.iterations >= max_iter:
            res.message = f"no convergence in {max_iter} iterations (merit {merit:.3e})"
            raise ConvergenceError(res.message, report=res, solution=y)
        s = ce + cg
        t = np.where(s > 0, cg / np.where(s > 0, s, 1.0), 1.0)
        rhs = -Phi / np.where(s > 0, s, 1.0)
        eta = min(linear_rtol, 0.5 * atol / merit)
        z, its = solve_newton_system(y, t, rhs, eta)
        res.linear_iterations += its
        res.iterations += 1

        lam, y_new, G_new, merit_new, ok = _line_search(residual, y, z, lo, hi, merit, weight, sigma,
                                                        min_step)
        if not ok:
            # projection spoiled descent: pin components pushing out of the box
            out = ((y <= lo) & (z < 0)) | ((y >= hi) & (z > 0))
            if out.any():
                t2, rhs2 = t.copy(), rhs.copy()
                t2[out], rhs2[out] = 0.0, 0.0
                z2, its = solve_newton_system(y, t2, rhs2, eta)
                res.linear_iterations += its
                trial = _line_search(residual, y, z2, lo, hi, merit, weight, sigma, min_step)
                if trial[4] or trial[3] < merit_new:
                    lam, y_new, G_new, merit_new, ok = trial
        increases = increases + 1 if merit_new > merit else 0
        y, G = y_new, G_new
        Phi, ce, cg = fb_residual(y, G, lo, hi, with_rows=True, weight=weight)
        merit = merit_new
        res.merit_history.append(merit)
        res.step_lengths.append(lam)
        if increases >= max_increases:
            res.message = f"merit increased in {max_increases} consecutive steps"
            raise StagnationError(res.message, report=res, solution=y)
    res.converged = True
    res.message = "converged"
    return y, res
