"""ASCII VTK XML unstructured-grid (.vtu) output, plus a small reader used to
check round trips."""

from __future__ import annotations

import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np

from .mesh import Mesh

__all__ = ["write_vtu", "read_vtu", "boundary_cell_mask"]

_VTK_TYPE = {2: 5, 3: 10}   # triangle, tetrahedron


def boundary_cell_mask(mesh: Mesh) -> np.ndarray:
    """Per-cell boundary tag (largest tag among the cell's boundary facets, 0
    for interior cells)."""
    mask = np.zeros(mesh.n_cells, dtype=np.int64)
    bf = mesh.boundary_facets
    owners = mesh.facet_cells[bf, 0]
    np.maximum.at(mask, owners, mesh.facet_tags[bf])
    return mask


def _fmt(values, integer=False) -> str:
    flat = np.asarray(values).ravel()
    if integer:
        return " ".join(str(int(v)) for v in flat)
    return " ".join(f"{v:.10g}" for v in flat)


def _data_array(parent, name, values, integer=False):
    values = np.asarray(values)
    ncomp = 1 if values.ndim == 1 else values.shape[1]
    if ncomp == 2:   # viewers expect 3-vectors
        values = np.column_stack([values, np.zeros(len(values))])
        ncomp = 3
    el = ET.SubElement(parent, "DataArray", type="Int64" if integer else "Float64", Name=name,
                       NumberOfComponents=str(ncomp), format="ascii")
    el.text = _fmt(values, integer)
    return el


def write_vtu(mesh: Mesh, fields: dict, path, cell_fields=(), boundary_tags: bool = True) -> Path:
    """Write ``fields`` on ``mesh`` to ``path``.

    Arrays with one row per vertex become point data and one row per cell
    become cell data; names listed in ``cell_fields`` are forced to cell data
    (useful when both counts coincide). Vector fields are (n, d) arrays.
    """
    path = Path(path)
    nv, nc, d = mesh.n_vertices, mesh.n_cells, mesh.dim
    point, cell = {}, {}
    for name, vals in fields.items():
        vals = np.asarray(vals, dtype=float)
        n = vals.shape[0]
        if name in cell_fields or (n == nc and n != nv):
            if n != nc:
                raise ValueError(f"cell field {name!r} has {n} rows, mesh has {nc} cells")
            cell[name] = vals
        elif n == nv:
            point[name] = vals
        else:
            raise ValueError(f"field {name!r} has {n} rows; expected {nv} (points) or {nc} (cells)")

    root = ET.Element("VTKFile", type="UnstructuredGrid", version="0.1", byte_order="LittleEndian")
    piece = ET.SubElement(ET.SubElement(root, "UnstructuredGrid"), "Piece",
                          NumberOfPoints=str(nv), NumberOfCells=str(nc))
    pd = ET.SubElement(piece, "PointData")
    for name, vals in point.items():
        _data_array(pd, name, vals)
    cd = ET.SubElement(piece, "CellData")
    for name, vals in cell.items():
        _data_array(cd, name, vals)
    if boundary_tags:
        _data_array(cd, "boundary_tag", boundary_cell_mask(mesh), integer=True)

    pts = mesh.vertices if d == 3 else np.column_stack([mesh.vertices, np.zeros(nv)])
    _data_array(ET.SubElement(piece, "Points"), "Points", pts)
    cells = ET.SubElement(piece, "Cells")
    _data_array(cells, "connectivity", mesh.cells.ravel(), integer=True)
    _data_array(cells, "offsets", (d + 1) * np.arange(1, nc + 1), integer=True)
    types = ET.SubElement(cells, "DataArray", type="UInt8", Name="types", format="ascii")
    types.text = " ".join([str(_VTK_TYPE[d])] * nc)

    ET.indent(root)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        ET.ElementTree(root).write(path, xml_declaration=True, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_vtu(path) -> dict:
    """Parse a file written by :func:`write_vtu`.

    Returns a dict with ``points``, ``cells``, ``point_data`` and ``cell_data``.
    """
    root = ET.parse(path).getroot()
    piece = root.find("UnstructuredGrid/Piece")

    def arrays(node):
        out = {}
        if node is None:
            return out
        for el in node.findall("DataArray"):
            dtype = int if el.get("type", "").startswith(("Int", "UInt")) else float
            vals = np.array((el.text or "").split(), dtype=dtype)
            ncomp = int(el.get("NumberOfComponents", "1"))
            out[el.get("Name")] = vals.reshape(-1, ncomp) if ncomp > 1 else vals
        return out

    cells = arrays(piece.find("Cells"))
    offsets = cells["offsets"]
    width = int(offsets[0]) if len(offsets) else 0
    return {
        "points": arrays(piece.find("Points"))["Points"],
        "cells": cells["connectivity"].reshape(-1, width) if width else cells["connectivity"],
        "point_data": arrays(piece.find("PointData")),
        "cell_data": arrays(piece.find("CellData")),
    }
