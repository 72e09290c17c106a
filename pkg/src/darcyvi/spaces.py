"""Finite element spaces: quadrature, DOF maps, RT0 / P0 / P1 bases.

RT0 degrees of freedom are integrated normal fluxes through facets measured
along the global facet orientation (see :mod:`darcyvi.mesh`). On a cell T
the basis function attached to local facet i is

    phi_i(x) = s_i / (d |T|) * (x - X_i),

with X_i the vertex opposite facet i and s_i the orientation sign. Its
outward flux through facet i is s_i and through the other facets zero, and
div phi_i = s_i / |T|.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from itertools import permutations

import numpy as np

from .errors import GeometryError, UnsupportedConstraintError
from .mesh import Mesh

__all__ = [
    "QuadratureRule",
    "quadrature",
    "facet_quadrature",
    "DofMap",
    "make_dofmap",
    "cell_geometry",
    "eval_rt0_basis",
    "eval_p1_basis",
    "apply_dirichlet",
]


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray   # (nq, dim+1) barycentric
    weights: np.ndarray  # (nq,), sum = reference measure 1/dim!
    degree: int

    @property
    def n_points(self) -> int:
        return len(self.weights)


def _perm_points(*groups):
    pts, wts = [], []
    for w, coords in groups:
        for c in sorted(set(permutations(coords))):
            pts.append(c)
            wts.append(w)
    return np.array(pts, dtype=float), np.array(wts, dtype=float)


def _duffy_rule(dim: int, degree: int):
    """Collapsed-coordinate Gauss rule on the reference simplex."""
    n = max(1, math.ceil((degree + dim) / 2))
    x, w = np.polynomial.legendre.leggauss(n)
    x, w = 0.5 * (x + 1.0), 0.5 * w
    s = [g.ravel() for g in np.meshgrid(*([x] * dim), indexing="ij")]
    wt = np.prod([g.ravel() for g in np.meshgrid(*([w] * dim), indexing="ij")], axis=0)
    pts = np.zeros((len(wt), dim))
    scale = np.ones(len(wt))
    for k in range(dim):
        pts[:, k] = s[k] * scale
        scale = scale * (1 - s[k])
        wt = wt * (1 - s[k]) ** (dim - 1 - k)
    return np.column_stack([1 - pts.sum(axis=1), pts]), wt


@lru_cache(maxsize=None)
def quadrature(dim: int, degree: int) -> QuadratureRule:
    """Quadrature on the reference simplex exact for polynomials of ``degree``."""
    if dim == 2 and degree <= 1:
        pts, wts = np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])
    elif dim == 2 and degree == 2:
        pts, wts = _perm_points((1 / 3, (2 / 3, 1 / 6, 1 / 6)))
    elif dim == 2 and degree <= 4:
        a, b = 0.445948490915965, 0.091576213509771
        pts, wts = _perm_points((0.223381589678011, (a, a, 1 - 2 * a)),
                                (0.109951743655322, (b, b, 1 - 2 * b)))
    elif dim == 3 and degree <= 1:
        pts, wts = np.array([[0.25] * 4]), np.array([1.0])
    elif dim == 3 and degree == 2:
        a = 0.1381966011250105
        pts, wts = _perm_points((0.25, (1 - 3 * a, a, a, a)))
    else:
        pts, wts = _duffy_rule(dim, degree)
        return QuadratureRule(pts, wts, degree)
    return QuadratureRule(pts, wts / math.factorial(dim), degree)


@lru_cache(maxsize=None)
def facet_quadrature(dim: int, degree: int) -> QuadratureRule:
    """Rule on the reference facet (a ``dim-1`` simplex)."""
    if dim == 2:
        x, w = np.polynomial.legendre.leggauss(max(1, math.ceil((degree + 1) / 2)))
        t = 0.5 * (x + 1)
        return QuadratureRule(np.column_stack([1 - t, t]), 0.5 * w, degree)
    return quadrature(dim - 1, degree)


# DOF maps -----------------------------------------------------------------

SPACE_KINDS = ("RT0", "P0", "P1", "P1-vector")


@dataclass(frozen=True, eq=False)
class DofMap:
    """Entity-to-dof table plus strong constraints.

    ``entity_dofs`` has one row per mesh entity (facet, cell or vertex) and one
    column per component. P1-vector dofs are component-blocked: component k of
    vertex v is dof ``k * n_vertices + v``.
    """

    space_kind: str
    entity_dofs: np.ndarray
    n_dofs: int
    dirichlet_mask: np.ndarray
    dirichlet_values: np.ndarray

    def with_constraints(self, dofs, values) -> "DofMap":
        mask = self.dirichlet_mask.copy()
        vals = self.dirichlet_values.copy()
        mask[dofs] = True
        vals[dofs] = values
        return replace(self, dirichlet_mask=mask, dirichlet_values=vals)

    @property
    def constrained(self) -> np.ndarray:
        return np.flatnonzero(self.dirichlet_mask)


def make_dofmap(mesh: Mesh, kind: str) -> DofMap:
    if kind == "RT0":
        n_ent, ncomp = mesh.n_facets, 1
    elif kind == "P0":
        n_ent, ncomp = mesh.n_cells, 1
    elif kind == "P1":
        n_ent, ncomp = mesh.n_vertices, 1
    elif kind == "P1-vector":
        n_ent, ncomp = mesh.n_vertices, mesh.dim
    else:
        raise ValueError(f"unknown space kind {kind!r}; expected one of {SPACE_KINDS}")
    ent = (np.arange(ncomp)[None, :] * n_ent + np.arange(n_ent)[:, None]).astype(np.int64)
    n = n_ent * ncomp
    return DofMap(kind, ent, n, np.zeros(n, dtype=bool), np.zeros(n))


# basis evaluation -----------------------------------------------------------


def cell_geometry(mesh: Mesh):
    """Per-cell volumes and P1 gradients, shape (nc,) and (nc, dim+1, dim)."""
    X = mesh.cell_coordinates()
    B = np.transpose(X[:, 1:, :] - X[:, :1, :], (0, 2, 1))  # columns are edge vectors
    det = np.linalg.det(B)
    if np.any(det <= 0):
        bad = int(np.flatnonzero(det <= 0)[0])
        raise GeometryError(f"cell {bad} has non-positive measure")
    vol = det / math.factorial(mesh.dim)
    Binv = np.linalg.inv(B)                   # rows are gradients of lambda_1..lambda_d
    grads = np.empty((mesh.n_cells, mesh.dim + 1, mesh.dim))
    grads[:, 1:, :] = Binv
    grads[:, 0, :] = -Binv.sum(axis=1)
    return vol, grads


def _single_cell(mesh: Mesh, cell: int):
    X = mesh.vertices[mesh.cells[cell]]
    B = (X[1:] - X[:1]).T
    det = np.linalg.det(B)
    if det <= 1e-300 or not np.isfinite(det):
        raise GeometryError(f"cell {cell} is degenerate (measure {det / math.factorial(mesh.dim):g})")
    return X, B, det / math.factorial(mesh.dim)


def _physical_point(X, reference_point):
    xi = np.asarray(reference_point, dtype=float)
    if xi.shape[-1] == X.shape[1] + 1:
        lam = xi
    else:
        lam = np.concatenate([[1 - xi.sum()], xi])
    if np.any(lam < -1e-12):
        raise ValueError("reference point lies outside the reference simplex")
    return lam, lam @ X


def eval_rt0_basis(mesh: Mesh, cell: int, reference_point):
    """Return ``(values, divergence)`` of the RT0 basis on ``cell`` at a point
    given by reference coordinates (``dim`` entries) or barycentrics.

    ``values`` has shape (dim+1, dim): row i is the basis function of local
    facet i including its orientation sign.
    """
    X, _, vol = _single_cell(mesh, cell)
    _, x = _physical_point(X, reference_point)
    d = mesh.dim
    s = mesh.cell_facet_signs[cell].astype(float)
    values = s[:, None] * (x[None, :] - X) / (d * vol)
    return values, s / vol


def eval_p1_basis(mesh: Mesh, cell: int, reference_point):
    """Return ``(values, gradients)`` of the P1 hat functions of ``cell``."""
    X, B, _ = _single_cell(mesh, cell)
    lam, _ = _physical_point(X, reference_point)
    Binv = np.linalg.inv(B)
    grads = np.vstack([-Binv.sum(axis=0), Binv])
    return lam.copy(), grads


# boundary conditions --------------------------------------------------------


def _as_function(value, dim):
    if callable(value):
        return value
    c = float(value)
    return lambda x: np.full(np.asarray(x).shape[0], c)


def apply_dirichlet(dofmap: DofMap, mesh: Mesh, tag, value_function, degree: int = 2) -> DofMap:
    """Constrain dofs on boundary facets carrying ``tag``.

    RT0: facet flux dofs are fixed to the integral of ``value_function``
    (the prescribed outward normal velocity) over the facet.
    P1-vector: the normal velocity component is fixed at the facet vertices;
    only axis-aligned facets are supported.
    P1: nodal values are fixed to ``value_function`` (pressure data).
    """
    facets = mesh.tagged_facets(tag)
    if len(facets) == 0:
        return dofmap
    fn = _as_function(value_function, mesh.dim)
    if dofmap.space_kind == "RT0":
        rule = facet_quadrature(mesh.dim, degree)
        Y = mesh.vertices[mesh.facets[facets]]                # (nf, dim, dim)
        xq = np.einsum("qv,fvd->fqd", rule.points, Y)
        vals = np.asarray(fn(xq.reshape(-1, mesh.dim)), dtype=float).reshape(len(facets), -1)
        meas = mesh.facet_measures()[facets]
        w = rule.weights / rule.weights.sum()
        owner = mesh.facet_cells[facets, 0]
        local = np.argmax(mesh.cell_facets[owner] == facets[:, None], axis=1)
        sign = mesh.cell_facet_signs[owner, local]     # +1 unless the convention is flipped
        flux = sign * meas * (vals @ w)
        return dofmap.with_constraints(dofmap.entity_dofs[facets, 0], flux)
    if dofmap.space_kind == "P1":
        verts = np.unique(mesh.facets[facets])
        return dofmap.with_constraints(dofmap.entity_dofs[verts, 0], fn(mesh.vertices[verts]))
    if dofmap.space_kind == "P1-vector":
        normals = mesh.facet_normals()[facets]
        axis = np.argmax(np.abs(normals), axis=1)
        if np.any(np.abs(np.abs(normals[np.arange(len(facets)), axis]) - 1) > 1e-10):
            raise UnsupportedConstraintError(
                f"normal-velocity constraint on tag {tag!r} needs axis-aligned facets")
        dofs, values = [], []
        for f, k, n in zip(facets, axis, normals):
            sign = np.sign(n[k])
            for v in mesh.facets[f]:
                dofs.append(dofmap.entity_dofs[v, k])
                values.append(sign * float(fn(mesh.vertices[v][None, :])[0]))
        return dofmap.with_constraints(np.array(dofs, dtype=np.int64), np.array(values))
    raise UnsupportedConstraintError(f"no strong constraints for {dofmap.space_kind} spaces")
