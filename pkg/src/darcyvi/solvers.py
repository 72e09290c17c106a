"""Nonlinear solvers: Newton for the unconstrained problem, maximum-principle
bounds, violation counting and the semismooth Newton variational inequality
solve, chained by :func:`vi_pipeline`.

All nonlinear residual norms are measured after a symmetric diagonal scaling
D = blockdiag(diag(J_uu)^{-1/2}, |diag(S_p)|^{-1/2}) computed once per
discretization at the default initial state, which puts velocity and
pressure rows (very different physical units) on a common footing.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import DiscreteProblem, FieldSolution, discretize
from .errors import ConfigurationError, ConvergenceError
from .linalg import build_schur_preconditioner, gmres, schur_complement
from .mcp import complementarity_residual, semismooth_newton
from .physics import ProblemSpec

__all__ = [
    "BoundsVector",
    "SolveReport",
    "PipelineReport",
    "SolverOptions",
    "compute_bounds",
    "detect_violations",
    "newton_solve",
    "semismooth_newton_mcp",
    "vi_pipeline",
    "problem_scaling",
    "complementarity_certificate",
]


@dataclass
class SolverOptions:
    rtol: float = 1e-8
    atol: float | None = None        # default: rtol * ||D F|| at the default initial state
    max_newton: int = 30
    max_vi: int = 50
    linear_rtol: float = 1e-7
    restart: int = 200
    max_linear: int = 2000
    inner: str = "ilu0"
    bound_weight: object = 0.03      # weight on distance-to-bound in the reformulation


@dataclass
class BoundsVector:
    lo: np.ndarray
    hi: np.ndarray
    n_u: int
    note: str = ""

    @property
    def p_lo(self):
        return self.lo[self.n_u:]

    @property
    def p_hi(self):
        return self.hi[self.n_u:]

    @property
    def scale(self) -> float:
        vals = np.concatenate([self.p_lo[np.isfinite(self.p_lo)], self.p_hi[np.isfinite(self.p_hi)]])
        return float(max(np.abs(vals).max(initial=0.0), 1.0))


@dataclass
class SolveReport:
    phase: str = ""
    ksp_iterations: int = 0
    snes_iterations: int = 0
    wall_time: float = 0.0
    violation_count: int = 0
    violation_percent: float = 0.0
    n_dofs: int = 0
    converged: bool = True
    residual_history: list = field(default_factory=list)
    message: str = ""
    complementarity: float | None = None

    @property
    def dofs_per_second(self) -> float:
        return self.n_dofs / self.wall_time if self.wall_time > 0 else float("inf")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dofs_per_second"] = self.dofs_per_second
        return d


@dataclass
class PipelineReport:
    formulation: str
    n_dofs: int
    n_u: int
    n_p: int
    setup_time: float
    newton: SolveReport
    vi: SolveReport
    violations_before: tuple
    violations_after: tuple
    bounds_note: str = ""
    f0_norm: float = 0.0
    unconstrained: FieldSolution | None = field(default=None, repr=False, compare=False)

    @property
    def total(self) -> SolveReport:
        return SolveReport(
            phase="total",
            ksp_iterations=self.newton.ksp_iterations + self.vi.ksp_iterations,
            snes_iterations=self.newton.snes_iterations + self.vi.snes_iterations,
            wall_time=self.newton.wall_time + self.vi.wall_time,
            violation_count=self.violations_after[0],
            violation_percent=self.violations_after[1],
            n_dofs=self.n_dofs,
            converged=self.newton.converged and self.vi.converged,
        )

    def table_row(self) -> dict:
        """Flat record with the per-phase KSP / SNES / Time columns."""
        tot = self.total
        return {
            "formulation": self.formulation,
            "dofs": self.n_dofs,
            "ksp": self.newton.ksp_iterations,
            "snes": self.newton.snes_iterations,
            "time": self.newton.wall_time,
            "vi_ksp": self.vi.ksp_iterations,
            "vi_snes": self.vi.snes_iterations,
            "vi_time": self.vi.wall_time,
            "total_ksp": tot.ksp_iterations,
            "total_snes": tot.snes_iterations,
            "total_time": tot.wall_time,
            "violations_before": self.violations_before[0],
            "violations_percent": self.violations_before[1],
            "violations_after": self.violations_after[0],
            "setup_time": self.setup_time,
            "complementarity": self.vi.complementarity,
        }

    def to_dict(self) -> dict:
        return {
            "formulation": self.formulation,
            "n_dofs": self.n_dofs,
            "n_u": self.n_u,
            "n_p": self.n_p,
            "setup_time": self.setup_time,
            "newton": self.newton.to_dict(),
            "vi": self.vi.to_dict(),
            "total": self.total.to_dict(),
            "violations_before": list(self.violations_before),
            "violations_after": list(self.violations_after),
            "bounds_note": self.bounds_note,
            "f0_norm": self.f0_norm,
        }


# scaling ---------------------------------------------------------------------------


@dataclass
class _Scaling:
    D: np.ndarray
    ref_norm: float


def problem_scaling(prob: DiscreteProblem) -> _Scaling:
    """Diagonal scaling and reference residual norm of a discretization."""
    cached = getattr(prob, "_scaling", None)
    if cached is not None:
        return cached
    state = prob.initial_state()
    bs = prob.assemble(state)
    du = bs.J_uu.diagonal()
    S, _ = schur_complement(bs.J_uu, bs.J_up, bs.J_pu, bs.J_pp)
    dp = np.abs(S.diagonal())
    if np.any(du <= 0) or np.any(dp == 0):
        raise ConfigurationError("cannot scale the system: zero diagonal in the velocity block or Schur complement")
    D = np.concatenate([du ** -0.5, dp ** -0.5])
    out = _Scaling(D, float(np.linalg.norm(D * bs.residual)))
    prob._scaling = out
    return out


def _scaled_blocks(bs, D, n_u, p_rows_sign=1.0, t_p=None):
    """Blocks of diag(t) (S J S) + diag(1 - t) with the pressure rows optionally
    sign-flipped; t only acts on pressure rows."""
    Du = sp.diags(D[:n_u])
    Dp = sp.diags(D[n_u:])
    J_uu = (Du @ bs.J_uu @ Du).tocsr()
    J_up = (Du @ bs.J_up @ Dp).tocsr()
    J_pu = (p_rows_sign * (Dp @ bs.J_pu @ Du)).tocsr()
    J_pp = (p_rows_sign * (Dp @ bs.J_pp @ Dp)).tocsr()
    if t_p is not None:
        T = sp.diags(t_p)
        J_pu = (T @ J_pu).tocsr()
        J_pp = (T @ J_pp + sp.diags(1.0 - t_p)).tocsr()
    return _Blocks(J_uu, J_up, J_pu, J_pp)


@dataclass
class _Blocks:
    J_uu: sp.csr_matrix
    J_up: sp.csr_matrix
    J_pu: sp.csr_matrix
    J_pp: sp.csr_matrix

    def matrix(self):
        return sp.bmat([[self.J_uu, self.J_up], [self.J_pu, self.J_pp]], format="csr")


def _linear_solve(blocks: _Blocks, rhs, rtol, opts: SolverOptions):
    A = blocks.matrix()
    pc = build_schur_preconditioner(blocks, inner=opts.inner)
    x, info = gmres(A, pc, rhs, rtol=rtol, restart=opts.restart, max_iter=opts.max_linear)
    return x, info


# Newton ------------------------------------------------------------------------------


def _as_problem(spec_or_problem, formulation) -> DiscreteProblem:
    if isinstance(spec_or_problem, DiscreteProblem):
        return spec_or_problem
    return discretize(spec_or_problem, formulation)


def newton_solve(spec, formulation: str = "RT0", initial_state: FieldSolution | None = None,
                 atol: float | None = None, rtol: float = 1e-8, max_newton: int = 30,
                 options: SolverOptions | None = None):
    """Full-step Newton iteration J delta = -F until the scaled residual norm
    drops below max(atol, rtol * ||F_0||). Returns (solution, report)."""
    opts = options or SolverOptions(rtol=rtol, atol=atol, max_newton=max_newton)
    prob = _as_problem(spec, formulation)
    t0 = time.perf_counter()
    scaling = problem_scaling(prob)
    D = scaling.D
    state = initial_state.copy() if initial_state is not None else prob.initial_state()
    atol_ = opts.atol if opts.atol is not None else opts.rtol * scaling.ref_norm
    report = SolveReport(phase="newton", n_dofs=prob.n)
    bs = prob.assemble(state)
    F = D * bs.residual
    norm0 = np.linalg.norm(F)
    target = max(atol_, opts.rtol * norm0)
    norm = norm0
    report.residual_history.append(norm)
    x = state.vector()
    while norm > target:
        if report.snes_iterations >= opts.max_newton:
            report.converged = False
            report.wall_time = time.perf_counter() - t0
            report.message = f"Newton did not converge in {opts.max_newton} iterations (|F| = {norm:.3e})"
            raise ConvergenceError(report.message, report=report, solution=prob.state_from_vector(x))
        blocks = _scaled_blocks(bs, D, prob.n_u)
        eta = max(min(opts.linear_rtol, 0.5 * target / norm), 1e-14)
        z, info = _linear_solve(blocks, -F, eta, opts)
        report.ksp_iterations += info.iterations
        if not info.converged and info.residuals[-1] > 0.5 * info.residuals[0]:
            report.converged = False
            report.wall_time = time.perf_counter() - t0
            report.message = f"linear solve failed: {info.reason}"
            raise ConvergenceError(report.message, report=report, solution=prob.state_from_vector(x))
        x = x + D * z
        report.snes_iterations += 1
        state = prob.state_from_vector(x)
        bs = prob.assemble(state)
        F = D * bs.residual
        norm = np.linalg.norm(F)
        report.residual_history.append(norm)
    report.wall_time = time.perf_counter() - t0
    report.message = "converged"
    return state, report


# bounds and violations ------------------------------------------------------------------


def _boundary_pressure_range(prob: DiscreteProblem):
    spec, mesh = prob.spec, prob.mesh
    if spec.pressure_range is not None:
        return float(spec.pressure_range[0]), float(spec.pressure_range[1])
    vals = []
    for tag, val in spec.pressure_bcs.items():
        facets = mesh.tagged_facets(tag)
        if len(facets) == 0:
            continue
        pts = np.concatenate([mesh.vertices[np.unique(mesh.facets[facets])], mesh.facet_centroids()[facets]])
        v = val(pts) if callable(val) else np.full(len(pts), float(val))
        vals.append(np.asarray(v, dtype=float))
    if not vals:
        raise ConfigurationError("bounds need a pressure boundary (no pressure data found)")
    vals = np.concatenate(vals)
    return float(vals.min()), float(vals.max())


def _source_sign(prob: DiscreteProblem) -> int:
    spec = prob.spec
    if spec.source_sign is not None:
        return int(spec.source_sign)
    f = np.asarray(spec.source(prob.xq.reshape(-1, prob.dim)), dtype=float)
    if np.all(f == 0):
        return 0
    if np.all(f >= 0):
        return 1
    if np.all(f <= 0):
        return -1
    raise ConfigurationError("source changes sign; the maximum principle gives no bounds, "
                             "pass explicit bounds instead")


def compute_bounds(spec, formulation: str = "RT0") -> BoundsVector:
    """Maximum-principle bounds: [min p0, max p0] for f = 0, [min p0, inf) for
    f >= 0, (-inf, max p0] for f <= 0. Velocities and strongly constrained
    pressures are unbounded."""
    prob = _as_problem(spec, formulation)
    if not prob.spec.pressure_bcs:
        raise ConfigurationError("bounds need a pressure boundary (no pressure data found)")
    pmin, pmax = _boundary_pressure_range(prob)
    sign = _source_sign(prob)
    lo = np.full(prob.n, -np.inf)
    hi = np.full(prob.n, np.inf)
    if sign >= 0:
        lo[prob.n_u:] = pmin
    if sign <= 0:
        hi[prob.n_u:] = pmax
    fixed = prob.n_u + prob.p_fixed
    lo[fixed], hi[fixed] = -np.inf, np.inf
    note = {0: "f = 0: both bounds from boundary pressure",
            1: "f >= 0: lower bound min(p0) only",
            -1: "f <= 0: upper bound max(p0) only"}[sign]
    return BoundsVector(lo, hi, prob.n_u, note)


def detect_violations(pressure_coeffs, bounds, tol: float | None = None):
    """Count pressure dofs outside [lo - tol, hi + tol]; returns (count, percent).

    ``bounds`` is a :class:`BoundsVector` or a ``(lo, hi)`` pair of pressure-sized
    arrays. ``tol`` is absolute and defaults to 1e-10."""
    p = np.asarray(pressure_coeffs, dtype=float)
    if isinstance(bounds, BoundsVector):
        lo, hi = bounds.p_lo, bounds.p_hi
    else:
        lo, hi = (np.broadcast_to(np.asarray(b, dtype=float), p.shape) for b in bounds)
    if tol is None:
        tol = 1e-10
    if tol < 0:
        raise ValueError("tolerance must be non-negative")
    bad = (p < lo - tol) | (p > hi + tol)
    count = int(bad.sum())
    return count, 100.0 * count / max(len(p), 1)


# variational inequality ------------------------------------------------------------------


def _mcp_callbacks(prob: DiscreteProblem, D, opts: SolverOptions, counters):
    n_u = prob.n_u
    cache = {}

    def residual(y):
        state = prob.state_from_vector(D * y)
        bs = prob.assemble(state)
        cache["y"], cache["bs"] = y, bs
        G = bs.residual
        G[n_u:] *= -1.0
        return D * G

    def solve(y, t, rhs, rtol):
        if cache.get("y") is not y:
            residual(y)
        blocks = _scaled_blocks(cache["bs"], D, n_u, p_rows_sign=-1.0, t_p=t[n_u:])
        z, info = _linear_solve(blocks, rhs, max(rtol, 1e-14), opts)
        counters["ksp"] += info.iterations
        return z, info.iterations

    return residual, solve


def _bound_weight(D, opts):
    # D**2 pairs (p - p_min) in Pa with the unscaled residual, as if the
    # reformulation were applied to the physical system
    return D ** 2 if opts.bound_weight == "physical" else float(opts.bound_weight)


def complementarity_certificate(prob: DiscreteProblem, state: FieldSolution, bounds: BoundsVector):
    """Infinity norm of the natural complementarity residual in scaled
    variables, and the reference norm ||D F_0|| it should be compared to."""
    sc = problem_scaling(prob)
    D = sc.D
    G = prob.residual(state)
    G[prob.n_u:] *= -1.0
    r = complementarity_residual(state.vector() / D, D * G, bounds.lo / D, bounds.hi / D)
    return float(np.abs(r).max()), sc.ref_norm


def semismooth_newton_mcp(spec, formulation: str = "RT0", bounds: BoundsVector | None = None,
                          initial_state: FieldSolution | None = None, atol: float | None = None,
                          max_iter: int = 50, options: SolverOptions | None = None):
    """Semismooth Newton on the Fischer-Burmeister form of the box MCP.

    The complementarity map is G = (F_u, -F_p): with this sign the pressure
    rows of the Jacobian form a monotone operator and the lower bound is
    active where the mass balance forces pressure down. Returns
    (solution, report)."""
    opts = options or SolverOptions(atol=atol, max_vi=max_iter)
    prob = _as_problem(spec, formulation)
    t0 = time.perf_counter()
    sc = problem_scaling(prob)
    D = sc.D
    if bounds is None:
        bounds = compute_bounds(prob)
    state = initial_state if initial_state is not None else prob.initial_state()
    atol_ = opts.atol if opts.atol is not None else opts.rtol * sc.ref_norm
    counters = {"ksp": 0}
    residual, solve = _mcp_callbacks(prob, D, opts, counters)
    report = SolveReport(phase="vi", n_dofs=prob.n)
    try:
        y, res = semismooth_newton(residual, solve, state.vector() / D, bounds.lo / D, bounds.hi / D,
                                   atol_, max_iter=opts.max_vi, linear_rtol=opts.linear_rtol,
                                   weight=_bound_weight(D, opts))
    except ConvergenceError as exc:
        r = exc.report
        report.snes_iterations, report.ksp_iterations = r.iterations, counters["ksp"]
        report.residual_history = list(r.merit_history)
        report.converged = False
        report.message = str(exc)
        report.wall_time = time.perf_counter() - t0
        exc.report = report
        exc.solution = prob.state_from_vector(D * exc.solution)
        raise
    sol = prob.state_from_vector(D * y)
    report.snes_iterations = res.iterations
    report.ksp_iterations = counters["ksp"]
    report.residual_history = list(res.merit_history)
    report.message = res.message
    report.wall_time = time.perf_counter() - t0
    report.violation_count, report.violation_percent = detect_violations(
        sol.p, bounds, tol=1e-8 * bounds.scale)
    report.complementarity = complementarity_certificate(prob, sol, bounds)[0]
    return sol, report


def vi_pipeline(spec: ProblemSpec, formulation: str = "RT0", options: SolverOptions | None = None,
                bounds: BoundsVector | None = None):
    """Unconstrained Newton solve, then a semismooth VI solve started from it
    only if the Newton solution violates the bounds. Returns (solution, report)."""
    opts = options or SolverOptions()
    t0 = time.perf_counter()
    prob = discretize(spec, formulation)
    sc = problem_scaling(prob)
    bounds = bounds if bounds is not None else compute_bounds(prob)
    setup = time.perf_counter() - t0

    sol0, rep_newton = newton_solve(prob, formulation, options=opts)
    before = detect_violations(sol0.p, bounds)
    rep_newton.violation_count, rep_newton.violation_percent = before
    if before[0] == 0:
        rep_vi = SolveReport(phase="vi", n_dofs=prob.n, message="skipped: no violations")
        rep_vi.complementarity = complementarity_certificate(prob, sol0, bounds)[0]
        sol = sol0
    else:
        sol, rep_vi = semismooth_newton_mcp(prob, formulation, bounds, sol0, options=opts)
    after = detect_violations(sol.p, bounds, tol=1e-8 * bounds.scale)
    report = PipelineReport(prob.formulation, prob.n, prob.n_u, prob.n_p, setup, rep_newton, rep_vi,
                            before, after, bounds.note, sc.ref_norm, unconstrained=sol0)
    return sol, report
