"""Simplicial meshes (triangles / tetrahedra) with the facet topology needed
for face-based elements.

Local facet ``i`` of a cell is the facet opposite local vertex ``i``. Every
facet carries a global orientation: the lower-indexed adjacent cell sees it
with sign +1, the other with -1, so a boundary facet always has sign +1 and
its reference normal points out of the domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GeometryError, InvalidDomainError, InvalidTopologyError, MshParseError

__all__ = [
    "Mesh",
    "facet_orientation",
    "generate_structured_triangles",
    "generate_annulus",
    "generate_box_tetrahedra",
    "read_msh",
    "write_msh",
]


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray          # (nv, dim)
    cells: np.ndarray             # (nc, dim+1), positively oriented
    facets: np.ndarray            # (nf, dim), sorted vertex ids
    facet_cells: np.ndarray       # (nf, 2), second entry -1 on the boundary
    cell_facets: np.ndarray       # (nc, dim+1), local facet i opposite vertex i
    cell_facet_signs: np.ndarray  # (nc, dim+1), +1 / -1
    facet_tags: np.ndarray        # (nf,), 0 for interior facets
    tag_names: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n_facets(self) -> int:
        return self.facets.shape[0]

    @property
    def boundary_facets(self) -> np.ndarray:
        return np.flatnonzero(self.facet_cells[:, 1] < 0)

    @property
    def boundary_tags(self) -> dict:
        """Map boundary facet index -> tag id."""
        bf = self.boundary_facets
        return dict(zip(bf.tolist(), self.facet_tags[bf].tolist()))

    def tag_id(self, tag) -> int:
        if isinstance(tag, str):
            try:
                return self.tag_names[tag]
            except KeyError:
                raise KeyError(f"unknown boundary tag {tag!r}; known: {sorted(self.tag_names)}") from None
        return int(tag)

    def tagged_facets(self, tag) -> np.ndarray:
        return np.flatnonzero(self.facet_tags == self.tag_id(tag))

    # geometry ------------------------------------------------------------

    def cell_coordinates(self) -> np.ndarray:
        """(nc, dim+1, dim) vertex coordinates per cell."""
        return self.vertices[self.cells]

    def cell_volumes(self) -> np.ndarray:
        X = self.cell_coordinates()
        B = X[:, 1:, :] - X[:, :1, :]
        return np.linalg.det(B) / math.factorial(self.dim)

    def cell_centroids(self) -> np.ndarray:
        return self.cell_coordinates().mean(axis=1)

    def facet_measures(self) -> np.ndarray:
        return _simplex_measure(self.vertices[self.facets])

    def facet_centroids(self) -> np.ndarray:
        return self.vertices[self.facets].mean(axis=1)

    def facet_normals(self) -> np.ndarray:
        """Unit normals following the global orientation (outward from the
        lower-indexed adjacent cell, hence outward on the boundary)."""
        owner = self.facet_cells[:, 0]
        local = np.argmax(self.cell_facets[owner] == np.arange(self.n_facets)[:, None], axis=1)
        opposite = self.vertices[self.cells[owner, local]]
        Y = self.vertices[self.facets]
        if self.dim == 2:
            t = Y[:, 1] - Y[:, 0]
            n = np.stack([t[:, 1], -t[:, 0]], axis=1)
        else:
            n = np.cross(Y[:, 1] - Y[:, 0], Y[:, 2] - Y[:, 0])
        n /= np.linalg.norm(n, axis=1)[:, None]
        flip = np.einsum("ij,ij->i", n, Y[:, 0] - opposite) < 0
        n[flip] *= -1
        return n


def _simplex_measure(Y: np.ndarray) -> np.ndarray:
    """Measure of k-simplices embedded in R^d; Y is (n, k+1, d)."""
    E = Y[:, 1:, :] - Y[:, :1, :]
    k = E.shape[1]
    gram = np.einsum("nid,njd->nij", E, E)
    return np.sqrt(np.abs(np.linalg.det(gram))) / math.factorial(k)


def _build(vertices, cells, boundary_lookup=None, default_tag=1, tag_names=None) -> Mesh:
    """Orient cells, build the facet table and tag boundary facets.

    ``boundary_lookup`` maps a facet (as a sorted vertex tuple) to its tag.
    Facets it does not cover fall back to ``default_tag``.
    """
    vertices = np.ascontiguousarray(vertices, dtype=float)
    cells = np.array(cells, dtype=np.int64)
    dim = vertices.shape[1]
    if cells.ndim != 2 or cells.shape[1] != dim + 1:
        raise InvalidTopologyError(f"cells must have {dim + 1} vertices in {dim}D")
    if cells.size and (cells.min() < 0 or cells.max() >= len(vertices)):
        raise InvalidTopologyError("cell references a nonexistent vertex")

    X = vertices[cells]
    det = np.linalg.det(X[:, 1:, :] - X[:, :1, :])
    scale = np.ptp(vertices, axis=0).max() if len(vertices) else 1.0
    if np.any(np.abs(det) <= 1e-14 * scale**dim):
        bad = int(np.flatnonzero(np.abs(det) <= 1e-14 * scale**dim)[0])
        raise GeometryError(f"cell {bad} is degenerate")
    neg = det < 0
    cells[neg, 0], cells[neg, 1] = cells[neg, 1].copy(), cells[neg, 0].copy()

    nc = len(cells)
    loc = np.array([[j for j in range(dim + 1) if j != i] for i in range(dim + 1)])
    all_f = np.sort(cells[:, loc], axis=2).reshape(-1, dim)
    facets, inverse, counts = np.unique(all_f, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    if np.any(counts > 2):
        raise InvalidTopologyError("non-manifold mesh: a facet is shared by more than two cells")
    cell_facets = inverse.reshape(nc, dim + 1)

    owner_cell = np.repeat(np.arange(nc), dim + 1)
    order = np.lexsort((owner_cell, inverse))
    f_sorted = inverse[order]
    c_sorted = owner_cell[order]
    first = np.ones(len(f_sorted), dtype=bool)
    first[1:] = f_sorted[1:] != f_sorted[:-1]
    facet_cells = -np.ones((len(facets), 2), dtype=np.int64)
    facet_cells[f_sorted[first], 0] = c_sorted[first]
    facet_cells[f_sorted[~first], 1] = c_sorted[~first]

    signs = np.where(facet_cells[cell_facets, 0] == np.arange(nc)[:, None], 1, -1).astype(np.int64)

    tags = np.zeros(len(facets), dtype=np.int64)
    bnd = np.flatnonzero(facet_cells[:, 1] < 0)
    if boundary_lookup is None:
        tags[bnd] = default_tag
    else:
        for f in bnd:
            tags[f] = boundary_lookup.get(tuple(facets[f].tolist()), default_tag)
    return Mesh(vertices, cells, facets, facet_cells, cell_facets, signs, tags, dict(tag_names or {}))


def facet_orientation(mesh: Mesh, cell: int, local_facet: int) -> int:
    """Global orientation sign of ``local_facet`` as seen from ``cell``."""
    return int(mesh.cell_facet_signs[cell, local_facet])


# generators ---------------------------------------------------------------


def _tag_by_predicate(vertices, cells, predicates):
    """Boundary lookup from ``{tag: predicate(facet_vertex_coords) -> bool}``."""
    dim = vertices.shape[1]
    loc = [[j for j in range(dim + 1) if j != i] for i in range(dim + 1)]
    seen = {}
    for c in cells:
        for l in loc:
            key = tuple(sorted(int(c[j]) for j in l))
            seen[key] = seen.get(key, 0) + 1
    lookup = {}
    for key, n in seen.items():
        if n != 1:
            continue
        Y = vertices[list(key)]
        for tag, pred in predicates.items():
            if pred(Y):
                lookup[key] = tag
                break
    return lookup


def generate_structured_triangles(nx: int, ny: int, extent=((0.0, 1.0), (0.0, 1.0)),
                                  diagonal: str = "nw-se") -> Mesh:
    """Rectangle split into ``nx * ny`` quads, each cut along the same
    diagonal into two triangles. Boundary tags: left=1, right=2, bottom=3, top=4.
    """
    (x0, x1), (y0, y1) = extent
    if nx < 1 or ny < 1:
        raise InvalidDomainError("nx and ny must be at least 1")
    if not (x1 > x0 and y1 > y0):
        raise InvalidDomainError(f"rectangle {extent!r} has zero or negative size")
    if diagonal not in ("nw-se", "sw-ne"):
        raise ValueError("diagonal must be 'nw-se' or 'sw-ne'")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    sw = j * (nx + 1) + i
    se = sw + 1
    nw = sw + nx + 1
    ne = nw + 1
    if diagonal == "nw-se":
        cells = np.concatenate([np.column_stack([sw, se, nw]), np.column_stack([se, ne, nw])])
    else:
        cells = np.concatenate([np.column_stack([sw, se, ne]), np.column_stack([sw, ne, nw])])

    tol = 1e-12 * max(x1 - x0, y1 - y0)
    preds = {
        1: lambda P: np.all(np.abs(P[:, 0] - x0) < tol),
        2: lambda P: np.all(np.abs(P[:, 0] - x1) < tol),
        3: lambda P: np.all(np.abs(P[:, 1] - y0) < tol),
        4: lambda P: np.all(np.abs(P[:, 1] - y1) < tol),
    }
    lookup = _tag_by_predicate(vertices, cells, preds)
    return _build(vertices, cells, lookup, tag_names={"left": 1, "right": 2, "bottom": 3, "top": 4})


def generate_annulus(r_inner: float, r_outer: float, n_radial: int, n_angular: int) -> Mesh:
    """Polar triangulation of an annulus with geometric radial grading
    (ratio ``(r_outer/r_inner)**(1/n_radial)``). Tags: inner=1, outer=2.
    """
    if not (0 < r_inner < r_outer):
        raise InvalidDomainError("need 0 < r_inner < r_outer")
    if n_angular < 3:
        raise InvalidTopologyError("n_angular must be at least 3")
    if n_radial < 1:
        raise InvalidTopologyError("n_radial must be at least 1")
    radii = r_inner * (r_outer / r_inner) ** (np.arange(n_radial + 1) / n_radial)
    theta = 2 * np.pi * np.arange(n_angular) / n_angular
    R, T = np.meshgrid(radii, theta, indexing="ij")
    vertices = np.column_stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()])
    k, j = np.meshgrid(np.arange(n_radial), np.arange(n_angular), indexing="ij")
    k, j = k.ravel(), j.ravel()
    a = k * n_angular + j
    b = k * n_angular + (j + 1) % n_angular
    c = a + n_angular
    d = b + n_angular
    cells = np.concatenate([np.column_stack([a, c, b]), np.column_stack([b, c, d])])

    lookup = {}
    for ring, tag in ((0, 1), (n_radial, 2)):
        base = ring * n_angular
        for jj in range(n_angular):
            key = tuple(sorted((base + jj, base + (jj + 1) % n_angular)))
            lookup[key] = tag
    return _build(vertices, cells, lookup, tag_names={"inner": 1, "outer": 2})


def generate_box_tetrahedra(nx: int, ny: int, nz: int,
                            extent=((0.0, 1.0), (0.0, 1.0), (0.0, 1.0))) -> Mesh:
    """Box split into hexahedra, each cut into six tetrahedra sharing the
    main diagonal (conforming across hexes). Tags: xmin=1, xmax=2, ymin=3,
    ymax=4, zmin=5, zmax=6.
    """
    if min(nx, ny, nz) < 1:
        raise InvalidDomainError("nx, ny, nz must be at least 1")
    lo = np.array([e[0] for e in extent], dtype=float)
    hi = np.array([e[1] for e in extent], dtype=float)
    if np.any(hi <= lo):
        raise InvalidDomainError(f"box {extent!r} has zero or negative size")
    xs, ys, zs = (np.linspace(lo[a], hi[a], n + 1) for a, n in enumerate((nx, ny, nz)))
    Z, Y, X = np.meshgrid(zs, ys, xs, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def vid(i, j, k):
        return (k * (ny + 1) + j) * (nx + 1) + i

    k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    corner = {(a, b, c): vid(i + a, j + b, k + c) for a in (0, 1) for b in (0, 1) for c in (0, 1)}
    unit = {0: (1, 0, 0), 1: (0, 1, 0), 2: (0, 0, 1)}
    tets = []
    for perm in ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)):
        p0 = (0, 0, 0)
        p1 = tuple(np.add(p0, unit[perm[0]]))
        p2 = tuple(np.add(p1, unit[perm[1]]))
        tets.append(np.column_stack([corner[p0], corner[p1], corner[p2], corner[(1, 1, 1)]]))
    cells = np.concatenate(tets)

    tol = 1e-12 * (hi - lo).max()
    preds = {}
    for axis in range(3):
        preds[2 * axis + 1] = (lambda a: lambda P: np.all(np.abs(P[:, a] - lo[a]) < tol))(axis)
        preds[2 * axis + 2] = (lambda a: lambda P: np.all(np.abs(P[:, a] - hi[a]) < tol))(axis)
    lookup = _tag_by_predicate(vertices, cells, preds)
    names = {"xmin": 1, "xmax": 2, "ymin": 3, "ymax": 4, "zmin": 5, "zmax": 6}
    return _build(vertices, cells, lookup, tag_names=names)


# Gmsh 2.2 ASCII -------------------------------------------------------------

_GMSH_NODES_PER_TYPE = {15: 1, 1: 2, 2: 3, 4: 4}
_GMSH_DIM = {15: 0, 1: 1, 2: 2, 4: 3}


def read_msh(path) -> Mesh:
    """Read an ASCII Gmsh 2.2 file containing first-order triangles or
    tetrahedra. Boundary facets take the physical tag of the matching
    lower-dimensional element.
    """
    lines = Path(path).read_text().splitlines()
    sections = {}
    i = 0
    while i < len(lines):
        s = lines[i].strip()
        if s.startswith("$") and not s.startswith("$End"):
            name = s[1:]
            end = f"$End{name}"
            j = i + 1
            while j < len(lines) and lines[j].strip() != end:
                j += 1
            if j == len(lines):
                raise MshParseError(f"section ${name} is not terminated by {end}", i + 1)
            sections[name] = (i + 1, lines[i + 1:j])
            i = j + 1
        else:
            if s:
                raise MshParseError(f"unexpected content outside a section: {s!r}", i + 1)
            i += 1

    for required in ("MeshFormat", "Nodes", "Elements"):
        if required not in sections:
            raise MshParseError(f"missing ${required} section")

    start, body = sections["MeshFormat"]
    head = body[0].split() if body else []
    if len(head) < 3 or head[0] not in ("2.2", "2.2.0"):
        raise MshParseError(f"unsupported MSH version {head[0] if head else '?'} (need 2.2)", start + 1)
    if head[1] != "0":
        raise MshParseError("binary MSH files are not supported", start + 1)

    names = {}
    if "PhysicalNames" in sections:
        start, body = sections["PhysicalNames"]
        for off, ln in enumerate(body[1:], start=2):
            parts = ln.split(maxsplit=2)
            if len(parts) != 3:
                raise MshParseError(f"bad physical name entry {ln!r}", start + off)
            names[parts[2].strip().strip('"')] = int(parts[1])

    start, body = sections["Nodes"]
    try:
        nn = int(body[0])
    except (IndexError, ValueError):
        raise MshParseError("bad node count", start + 1) from None
    if len(body) - 1 != nn:
        raise MshParseError(f"expected {nn} nodes, found {len(body) - 1}", start + 1)
    ids = np.empty(nn, dtype=np.int64)
    xyz = np.empty((nn, 3))
    for off, ln in enumerate(body[1:]):
        parts = ln.split()
        if len(parts) != 4:
            raise MshParseError(f"bad node record {ln!r}", start + 2 + off)
        try:
            ids[off] = int(parts[0])
            xyz[off] = [float(v) for v in parts[1:]]
        except ValueError:
            raise MshParseError(f"bad node record {ln!r}", start + 2 + off) from None
    index = {int(n): k for k, n in enumerate(ids)}

    start, body = sections["Elements"]
    try:
        ne = int(body[0])
    except (IndexError, ValueError):
        raise MshParseError("bad element count", start + 1) from None
    if len(body) - 1 != ne:
        raise MshParseError(f"expected {ne} elements, found {len(body) - 1}", start + 1)
    elements = []
    for off, ln in enumerate(body[1:]):
        lineno = start + 2 + off
        try:
            parts = [int(v) for v in ln.split()]
        except ValueError:
            raise MshParseError(f"bad element record {ln!r}", lineno) from None
        if len(parts) < 3:
            raise MshParseError(f"bad element record {ln!r}", lineno)
        etype, ntags = parts[1], parts[2]
        if etype not in _GMSH_NODES_PER_TYPE:
            raise MshParseError(f"unsupported element type {etype}", lineno)
        nodes = parts[3 + ntags:]
        if len(nodes) != _GMSH_NODES_PER_TYPE[etype]:
            raise MshParseError(f"element type {etype} needs {_GMSH_NODES_PER_TYPE[etype]} nodes", lineno)
        try:
            nodes = [index[n] for n in nodes]
        except KeyError as exc:
            raise MshParseError(f"element references unknown node {exc.args[0]}", lineno) from None
        phys = parts[3] if ntags > 0 else 0
        elements.append((_GMSH_DIM[etype], phys, nodes))

    dim = max((e[0] for e in elements), default=0)
    if dim < 2:
        raise MshParseError("no triangles or tetrahedra found")
    cells = np.array([e[2] for e in elements if e[0] == dim], dtype=np.int64)
    lookup = {tuple(sorted(e[2])): e[1] for e in elements if e[0] == dim - 1 and e[1] > 0}

    used = np.unique(cells)
    remap = -np.ones(nn, dtype=np.int64)
    remap[used] = np.arange(len(used))
    vertices = xyz[used, :dim]
    cells = remap[cells]
    lookup = {tuple(sorted(remap[list(k)].tolist())): v for k, v in lookup.items()
              if np.all(remap[list(k)] >= 0)}
    default = max(list(lookup.values()) + list(names.values()) + [0]) + 1
    mesh = _build(vertices, cells, lookup, default_tag=default, tag_names=names)
    if np.any(mesh.facet_tags[mesh.boundary_facets] == default):
        mesh.tag_names.setdefault("untagged", default)
    return mesh


def write_msh(mesh: Mesh, path) -> None:
    """Write ``mesh`` as ASCII Gmsh 2.2 with boundary facets as tagged
    lower-dimensional elements (cells get physical tag 1000)."""
    dim = mesh.dim
    ftype = {2: 1, 3: 2}[dim]
    ctype = {2: 2, 3: 4}[dim]
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat"]
    if mesh.tag_names:
        out += ["$PhysicalNames", str(len(mesh.tag_names))]
        out += [f'{dim - 1} {tid} "{name}"' for name, tid in sorted(mesh.tag_names.items(), key=lambda t: t[1])]
        out += ["$EndPhysicalNames"]
    out += ["$Nodes", str(mesh.n_vertices)]
    pad = np.zeros((mesh.n_vertices, 3))
    pad[:, :dim] = mesh.vertices
    out += [f"{k + 1} {x!r} {y!r} {z!r}" for k, (x, y, z) in enumerate(pad.tolist())]
    out += ["$EndNodes"]
    bf = mesh.boundary_facets
    out += ["$Elements", str(len(bf) + mesh.n_cells)]
    eid = 1
    for f in bf:
        t = int(mesh.facet_tags[f])
        out.append(f"{eid} {ftype} 2 {t} {t} " + " ".join(str(v + 1) for v in mesh.facets[f]))
        eid += 1
    for c in mesh.cells:
        out.append(f"{eid} {ctype} 2 1000 1000 " + " ".join(str(v + 1) for v in c))
        eid += 1
    out += ["$EndElements"]
    Path(path).write_text("\n".join(out) + "\n")
