"""Residual and Jacobian assembly for the mixed (RT0/P0) and stabilized
equal-order (P1/P1) formulations.

A :class:`DiscreteProblem` owns everything that does not change between
Newton iterations: geometry, material data at quadrature points, sparsity
patterns and the gather maps that sum element contributions into CSR value
arrays in a fixed order (so results do not depend on the thread count).
Strong constraints are imposed by identity rows with residual
``state - value``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _kernels as kern
from .errors import ConfigurationError, DefinitenessError, ModelValidityError
from .physics import ProblemSpec
from .spaces import DofMap, apply_dirichlet, cell_geometry, facet_quadrature, make_dofmap, quadrature

__all__ = [
    "FieldSolution",
    "BlockSystem",
    "DiscreteProblem",
    "discretize",
    "assemble_rt0",
    "assemble_vms",
    "l2_errors",
    "FORMULATIONS",
]

FORMULATIONS = ("RT0", "VMS")
QUAD_DEGREE = {"RT0": 2, "VMS": 3}


@dataclass
class FieldSolution:
    u: np.ndarray
    p: np.ndarray
    formulation: str

    def vector(self) -> np.ndarray:
        return np.concatenate([self.u, self.p])

    def copy(self) -> "FieldSolution":
        return FieldSolution(self.u.copy(), self.p.copy(), self.formulation)


@dataclass
class BlockSystem:
    J_uu: sp.csr_matrix
    J_up: sp.csr_matrix
    J_pu: sp.csr_matrix
    J_pp: sp.csr_matrix
    F_u: np.ndarray
    F_p: np.ndarray
    u_map: DofMap
    p_map: DofMap

    @property
    def residual(self) -> np.ndarray:
        return np.concatenate([self.F_u, self.F_p])

    def jacobian(self) -> sp.csr_matrix:
        return sp.bmat([[self.J_uu, self.J_up], [self.J_pu, self.J_pp]], format="csr")


class _Pattern:
    """CSR pattern of one block plus the gather map from element entries."""

    def __init__(self, rows, cols, shape, extra_diag=False):
        nc, a = rows.shape
        b = cols.shape[1]
        r = np.repeat(rows, b, axis=1).ravel()
        c = np.tile(cols, (1, a)).ravel()
        keys = r * shape[1] + c
        if extra_diag:
            m = min(shape)
            keys = np.concatenate([keys, np.arange(m) * shape[1] + np.arange(m)])
        uniq, inv = np.unique(keys, return_inverse=True)
        inv = inv.ravel()[: nc * a * b]
        self.shape = shape
        self.indices = (uniq % shape[1]).astype(np.int32)
        urows = uniq // shape[1]
        self.indptr = np.searchsorted(urows, np.arange(shape[0] + 1)).astype(np.int32)
        self.nnz = len(uniq)
        self.perm = np.argsort(inv, kind="stable").astype(np.int64)
        self.ptr = np.searchsorted(inv[self.perm], np.arange(self.nnz + 1)).astype(np.int64)
        self._rows = urows

    def values(self, local) -> np.ndarray:
        out = np.empty(self.nnz)
        kern.gather_sum(np.ascontiguousarray(local).ravel(), self.perm, self.ptr, out)
        return out

    def matrix(self, data) -> sp.csr_matrix:
        return sp.csr_matrix((data, self.indices, self.indptr), shape=self.shape)

    def row_entries(self, rows_mask):
        return np.flatnonzero(rows_mask[self._rows])

    def diag_entries(self, rows):
        out = np.empty(len(rows), dtype=np.int64)
        for k, r in enumerate(rows):
            lo, hi = self.indptr[r], self.indptr[r + 1]
            j = lo + np.searchsorted(self.indices[lo:hi], r)
            if j >= hi or self.indices[j] != r:
                raise RuntimeError(f"diagonal entry ({r}, {r}) missing from pattern")
            out[k] = j
        return out


class _VectorMap:
    def __init__(self, rows, n):
        flat = rows.ravel()
        self.n = n
        self.perm = np.argsort(flat, kind="stable").astype(np.int64)
        self.ptr = np.searchsorted(flat[self.perm], np.arange(n + 1)).astype(np.int64)

    def values(self, local):
        out = np.empty(self.n)
        kern.gather_sum(np.ascontiguousarray(local).ravel(), self.perm, self.ptr, out)
        return out


def _spd_at_points(spec: ProblemSpec, xq: np.ndarray):
    """K and K^{-1} at quadrature points (nc, nq, d) with an eigenvalue floor."""
    nc, nq, d = xq.shape
    K = np.asarray(spec.permeability(xq.reshape(-1, d)), dtype=float).reshape(nc, nq, d, d)
    if not np.allclose(K, np.swapaxes(K, -1, -2), rtol=1e-12, atol=0):
        raise DefinitenessError("permeability tensor is not symmetric")
    K = 0.5 * (K + np.swapaxes(K, -1, -2))
    lam, V = np.linalg.eigh(K)
    floor = spec.permeability.scale * 1e-12
    neg = lam[..., 0] < -floor
    if np.any(neg):
        cell = int(np.argwhere(neg)[0, 0])
        raise DefinitenessError(f"permeability is not positive definite in cell {cell}")
    low = lam < floor
    if np.any(low):
        warnings.warn(f"permeability eigenvalues clamped at {int(low.any(axis=-1).sum())} quadrature points",
                      RuntimeWarning, stacklevel=3)
        lam = np.maximum(lam, floor)
        K = np.einsum("...ik,...k,...jk->...ij", V, lam, V)
    Kinv = np.einsum("...ik,...k,...jk->...ij", V, 1.0 / lam, V)
    return np.ascontiguousarray(K), np.ascontiguousarray(Kinv), int(low.any(axis=-1).sum())


class DiscreteProblem:
    """Precomputed discretization of a :class:`ProblemSpec`."""

    def __init__(self, spec: ProblemSpec, formulation: str):
        formulation = formulation.upper()
        if formulation not in FORMULATIONS:
            raise ConfigurationError(f"unknown formulation {formulation!r}; use RT0 or VMS")
        self.spec = spec
        self.formulation = formulation
        self.mesh = mesh = spec.mesh
        self.dim = mesh.dim
        self.vol, self.grads = cell_geometry(mesh)
        self.rule = quadrature(self.dim, QUAD_DEGREE[formulation])
        X = mesh.cell_coordinates()
        self.xq = np.ascontiguousarray(np.einsum("qv,cvd->cqd", self.rule.points, X))
        self.K, self.Kinv, self.n_clamped = _spd_at_points(spec, self.xq)
        if formulation == "RT0":
            self._setup_rt0(X)
        else:
            self._setup_vms()
        self.n_u = self.u_map.n_dofs
        self.n_p = self.p_map.n_dofs
        self.n = self.n_u + self.n_p
        self._setup_constraints()

    # setup ------------------------------------------------------------------

    def _cell_integrals(self, values):
        """int over each cell of values given at quadrature points (nc, nq)."""
        w = self.rule.weights * math.factorial(self.dim)
        return (values @ w) * self.vol

    def _setup_rt0(self, X):
        mesh, spec, d = self.mesh, self.spec, self.dim
        self.u_map = make_dofmap(mesh, "RT0")
        self.p_map = make_dofmap(mesh, "P0")
        for tag, val in spec.flux_bcs.items():
            self.u_map = apply_dirichlet(self.u_map, mesh, tag, val)
        signs = mesh.cell_facet_signs.astype(float)
        self.signs = np.ascontiguousarray(signs)
        self.M = kern.rt0_weighted_mass(np.ascontiguousarray(X), self.signs, self.vol, self.xq,
                                        self.Kinv, self.rule.weights)
        udofs = mesh.cell_facets
        pdofs = np.arange(mesh.n_cells)[:, None]
        nf, nc = mesh.n_facets, mesh.n_cells
        self.pat_uu = _Pattern(udofs, udofs, (nf, nf))
        self.pat_up = _Pattern(udofs, pdofs, (nf, nc))
        self.pat_pu = _Pattern(pdofs, udofs, (nc, nf))
        self.pat_pp = _Pattern(pdofs, pdofs, (nc, nc))
        self.vec_u = _VectorMap(udofs, nf)
        self.udofs, self.pdofs = udofs, pdofs

        # state-independent parts of the residual
        rb = np.asarray(spec.body_force(self.xq.reshape(-1, d)), dtype=float).reshape(self.xq.shape)
        phi = (signs[:, None, :, None] / (d * self.vol)[:, None, None, None]
               * (self.xq[:, :, None, :] - X[:, None, :, :]))              # (nc, nq, nv, d)
        w = self.rule.weights * math.factorial(d)
        load = np.einsum("q,cqd,cqid->ci", w, rb, phi) * self.vol[:, None]
        self.Fu_const = -self.vec_u.values(load)
        self.Fu_const += self._rt0_pressure_boundary()
        f = np.asarray(spec.source(self.xq.reshape(-1, d)), dtype=float).reshape(nc, -1)
        self.f_cell = self._cell_integrals(f)
        self.Jpu_data = self.pat_pu.values(-signs[:, None, :])

    def _rt0_pressure_boundary(self):
        """int_F p0 (w . n) for facets on pressure boundaries: the facet mean of
        p0 times the outward orientation sign."""
        mesh = self.mesh
        out = np.zeros(mesh.n_facets)
        rule = facet_quadrature(self.dim, 2)
        wt = rule.weights / rule.weights.sum()
        for tag, val in self.spec.pressure_bcs.items():
            facets = mesh.tagged_facets(tag)
            if len(facets) == 0:
                continue
            Y = mesh.vertices[mesh.facets[facets]]
            xq = np.einsum("qv,fvd->fqd", rule.points, Y)
            vals = np.asarray(_call(val, xq.reshape(-1, self.dim)), dtype=float).reshape(len(facets), -1)
            owner = mesh.facet_cells[facets, 0]
            local = np.argmax(mesh.cell_facets[owner] == facets[:, None], axis=1)
            out[facets] += mesh.cell_facet_signs[owner, local] * (vals @ wt)
        return out

    def _setup_vms(self):
        mesh, spec, d = self.mesh, self.spec, self.dim
        nv, nc = mesh.n_vertices, mesh.n_cells
        self.u_map = make_dofmap(mesh, "P1-vector")
        self.p_map = make_dofmap(mesh, "P1")
        for tag, val in spec.flux_bcs.items():
            self.u_map = apply_dirichlet(self.u_map, mesh, tag, val)
        for tag, val in spec.pressure_bcs.items():
            self.p_map = apply_dirichlet(self.p_map, mesh, tag, val)
        cells = mesh.cells
        udofs = (np.arange(d)[None, None, :] * nv + cells[:, :, None]).reshape(nc, -1)  # a*d + k
        pdofs = cells
        self.udofs, self.pdofs = udofs, pdofs
        self.pat_uu = _Pattern(udofs, udofs, (d * nv, d * nv))
        self.pat_up = _Pattern(udofs, pdofs, (d * nv, nv))
        self.pat_pu = _Pattern(pdofs, udofs, (nv, d * nv))
        self.pat_pp = _Pattern(pdofs, pdofs, (nv, nv))
        self.vec_u = _VectorMap(udofs, d * nv)
        self.vec_p = _VectorMap(pdofs, nv)
        self.rb = np.ascontiguousarray(
            np.asarray(spec.body_force(self.xq.reshape(-1, d)), dtype=float).reshape(self.xq.shape))
        N = self.rule.points
        f = np.asarray(spec.source(self.xq.reshape(-1, d)), dtype=float).reshape(nc, -1)
        w = self.rule.weights * math.factorial(d)
        self.Fp_const = self.vec_p.values(np.einsum("q,cq,qa->ca", w, f, N) * self.vol[:, None])
        self.Fu_const = self._vms_pressure_boundary()

    def _vms_pressure_boundary(self):
        """int_F p0 N_a n_k on pressure boundaries."""
        mesh, d = self.mesh, self.dim
        nv = mesh.n_vertices
        out = np.zeros(d * nv)
        rule = facet_quadrature(d, 3)
        normals = mesh.facet_normals()
        meas = mesh.facet_measures()
        wt = rule.weights / rule.weights.sum()
        for tag, val in self.spec.pressure_bcs.items():
            facets = mesh.tagged_facets(tag)
            if len(facets) == 0:
                continue
            Y = mesh.vertices[mesh.facets[facets]]
            xq = np.einsum("qv,fvd->fqd", rule.points, Y)
            vals = np.asarray(_call(val, xq.reshape(-1, d)), dtype=float).reshape(len(facets), -1)
            # int_F p0 N_a = |F| sum_q w_q p0(x_q) lambda_a(x_q)
            loc = np.einsum("q,fq,qa->fa", wt, vals, rule.points) * meas[facets, None]
            for k in range(d):
                np.add.at(out, k * nv + mesh.facets[facets], loc * normals[facets, k][:, None])
        return out

    def _setup_constraints(self):
        spec = self.spec
        u_mask = self.u_map.dirichlet_mask
        p_map = self.p_map
        if spec.pressure_reference is not None:
            point, value = spec.pressure_reference
            point = np.asarray(point, dtype=float)
            if self.formulation == "RT0":
                cell = int(np.argmin(np.linalg.norm(self.mesh.cell_centroids() - point, axis=1)))
                if callable(value):
                    vals = value(self.xq[cell])
                    target = float(vals @ self.rule.weights / self.rule.weights.sum())
                else:
                    target = float(value)
                p_map = p_map.with_constraints(np.array([cell]), np.array([target]))
            else:
                node = int(np.argmin(np.linalg.norm(self.mesh.vertices - point, axis=1)))
                target = float(value(self.mesh.vertices[node][None, :])[0]) if callable(value) else float(value)
                p_map = p_map.with_constraints(np.array([node]), np.array([target]))
            self.p_map = p_map
        p_mask = self.p_map.dirichlet_mask
        self.fixed = np.concatenate([u_mask, p_mask])
        self.fixed_values = np.concatenate([self.u_map.dirichlet_values, self.p_map.dirichlet_values])
        self.u_fixed = np.flatnonzero(u_mask)
        self.p_fixed = np.flatnonzero(p_mask)
        self.zero_uu = self.pat_uu.row_entries(u_mask)
        self.zero_up = self.pat_up.row_entries(u_mask)
        self.zero_pu = self.pat_pu.row_entries(p_mask)
        self.zero_pp = self.pat_pp.row_entries(p_mask)
        self.diag_uu = self.pat_uu.diag_entries(self.u_fixed)
        self.diag_pp = self.pat_pp.diag_entries(self.p_fixed)

    # state ------------------------------------------------------------------

    def initial_state(self) -> FieldSolution:
        """Zero fields with strongly constrained dofs set to their values."""
        u = np.where(self.u_map.dirichlet_mask, self.u_map.dirichlet_values, 0.0)
        p = np.where(self.p_map.dirichlet_mask, self.p_map.dirichlet_values, 0.0)
        return FieldSolution(u, p, self.formulation)

    def state_from_vector(self, x) -> FieldSolution:
        return FieldSolution(x[: self.n_u].copy(), x[self.n_u:].copy(), self.formulation)

    def _check_state(self, state: FieldSolution):
        if state.u.shape != (self.n_u,) or state.p.shape != (self.n_p,):
            raise ValueError(f"state sizes ({state.u.shape}, {state.p.shape}) do not match "
                             f"dof maps ({self.n_u}, {self.n_p})")

    # assembly -----------------------------------------------------------------

    def assemble(self, state: FieldSolution, jacobian: bool = True) -> BlockSystem:
        self._check_state(state)
        if self.formulation == "RT0":
            Fu, Fp, Juu, Jup, Jpu, Jpp = self._assemble_rt0(state, jacobian)
        else:
            Fu, Fp, Juu, Jup, Jpu, Jpp = self._assemble_vms(state, jacobian)
        x = state.vector()
        Fu[self.u_fixed] = x[self.u_fixed] - self.fixed_values[self.u_fixed]
        pf = self.p_fixed
        Fp[pf] = state.p[pf] - self.fixed_values[self.n_u + pf]
        if jacobian:
            Juu[self.zero_uu] = 0.0
            Juu[self.diag_uu] = 1.0
            Jup[self.zero_up] = 0.0
            Jpu[self.zero_pu] = 0.0
            Jpp[self.zero_pp] = 0.0
            Jpp[self.diag_pp] = 1.0
            mats = [self.pat_uu.matrix(Juu), self.pat_up.matrix(Jup),
                    self.pat_pu.matrix(Jpu), self.pat_pp.matrix(Jpp)]
        else:
            mats = [None] * 4
        return BlockSystem(*mats, Fu, Fp, self.u_map, self.p_map)

    def residual(self, state: FieldSolution) -> np.ndarray:
        return self.assemble(state, jacobian=False).residual

    def _assemble_rt0(self, state, jacobian):
        p = state.p
        mu = np.ascontiguousarray(self.spec.viscosity.mu(p), dtype=float)
        dmu = np.ascontiguousarray(self.spec.viscosity.dmu(p), dtype=float)
        nc, nv = self.signs.shape
        q_loc = np.ascontiguousarray(state.u[self.udofs])
        Fu_loc = np.empty((nc, nv))
        Juu_loc = np.empty((nc, nv, nv))
        Jup_loc = np.empty((nc, nv))
        kern.rt0_local(self.M, self.signs, q_loc, p, mu, dmu, Fu_loc, Juu_loc, Jup_loc)
        Fu = self.vec_u.values(Fu_loc) + self.Fu_const
        Fp = self.f_cell - np.einsum("ci,ci->c", self.signs, q_loc)
        if not jacobian:
            return Fu, Fp, None, None, None, None
        Juu = self.pat_uu.values(Juu_loc)
        Jup = self.pat_up.values(Jup_loc)
        Jpu = self.Jpu_data.copy()
        Jpp = np.zeros(self.pat_pp.nnz)
        return Fu, Fp, Juu, Jup, Jpu, Jpp

    def _assemble_vms(self, state, jacobian):
        d, nc = self.dim, self.mesh.n_cells
        nv = d + 1
        visc = self.spec.viscosity
        u_loc = np.ascontiguousarray(state.u[self.udofs].reshape(nc, nv, d))
        p_loc = np.ascontiguousarray(state.p[self.pdofs])
        Fu = np.zeros((nc, nv, d))
        Fp = np.zeros((nc, nv))
        shape_j = (nc, nv * d, nv * d) if jacobian else (1, 1, 1)
        Juu = np.zeros(shape_j)
        Jup = np.zeros((nc, nv * d, nv) if jacobian else (1, 1, 1))
        Jpu = np.zeros((nc, nv, nv * d) if jacobian else (1, 1, 1))
        Jpp = np.zeros((nc, nv, nv) if jacobian else (1, 1, 1))
        bad = kern.vms_local(np.ascontiguousarray(self.rule.points), self.rule.weights, self.grads, self.vol,
                             self.Kinv, self.K, self.rb, u_loc, p_loc, visc.mu0, visc.betaB, visc.law_code,
                             Fu, Fp, Juu, Jup, Jpu, Jpp, jacobian)
        if bad >= 0:
            raise ModelValidityError(f"non-positive viscosity in cell {bad}")
        Fu_g = self.vec_u.values(Fu.reshape(nc, -1)) + self.Fu_const
        Fp_g = self.vec_p.values(Fp) + self.Fp_const
        if not jacobian:
            return Fu_g, Fp_g, None, None, None, None
        return (Fu_g, Fp_g, self.pat_uu.values(Juu), self.pat_up.values(Jup),
                self.pat_pu.values(Jpu), self.pat_pp.values(Jpp))

    # post-processing ------------------------------------------------------------

    def evaluate(self, state: FieldSolution, rule=None):
        """Velocity and pressure at quadrature points of ``rule``:
        returns points (nc, nq, d), u (nc, nq, d), p (nc, nq)."""
        rule = rule or self.rule
        mesh, d = self.mesh, self.dim
        X = mesh.cell_coordinates()
        xq = np.einsum("qv,cvd->cqd", rule.points, X)
        if self.formulation == "RT0":
            q_loc = state.u[mesh.cell_facets] * self.signs
            coef = q_loc / (d * self.vol[:, None])
            u = np.einsum("ci,cqid->cqd", coef, xq[:, :, None, :] - X[:, None, :, :])
            p = np.repeat(state.p[:, None], rule.n_points, axis=1)
        else:
            nv = mesh.n_vertices
            U = state.u.reshape(d, nv).T[mesh.cells]           # (nc, d+1, d)
            u = np.einsum("qa,cad->cqd", rule.points, U)
            p = np.einsum("qa,ca->cq", rule.points, state.p[mesh.cells])
        return xq, u, p

    def cell_velocity(self, state: FieldSolution) -> np.ndarray:
        """Cell-averaged velocity (nc, d)."""
        _, u, _ = self.evaluate(state, quadrature(self.dim, 1))
        return u[:, 0, :]

    def cell_pressure(self, state: FieldSolution) -> np.ndarray:
        if self.formulation == "RT0":
            return state.p.copy()
        return state.p[self.mesh.cells].mean(axis=1)


def _call(val, x):
    if callable(val):
        return val(x)
    return np.full(len(x), float(val))


def discretize(spec: ProblemSpec, formulation: str) -> DiscreteProblem:
    """Build (or fetch the cached) discretization of ``spec``."""
    key = formulation.upper()
    prob = spec._cache.get(key)
    if prob is None:
        prob = DiscreteProblem(spec, key)
        spec._cache[key] = prob
    return prob


def assemble_rt0(spec: ProblemSpec, state: FieldSolution) -> BlockSystem:
    return discretize(spec, "RT0").assemble(state)


def assemble_vms(spec: ProblemSpec, state: FieldSolution) -> BlockSystem:
    return discretize(spec, "VMS").assemble(state)


def l2_errors(spec: ProblemSpec, solution: FieldSolution, degree: int = 4):
    """L2 norms of u_h - u and p_h - p against the exact solution."""
    if not spec.has_exact:
        raise ConfigurationError("problem has no exact solution")
    prob = discretize(spec, solution.formulation)
    rule = quadrature(prob.dim, max(degree, 4))
    xq, u, p = prob.evaluate(solution, rule)
    d = prob.dim
    ue = spec.exact_velocity(xq.reshape(-1, d)).reshape(u.shape)
    pe = spec.exact_pressure(xq.reshape(-1, d)).reshape(p.shape)
    w = rule.weights * math.factorial(d)
    eu = np.sqrt(np.sum(((u - ue) ** 2).sum(axis=2) @ w * prob.vol))
    ep = np.sqrt(np.sum(((p - pe) ** 2) @ w * prob.vol))
    return float(eu), float(ep)
