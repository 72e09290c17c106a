import numpy as np
import pytest

from darcyvi import generate_annulus, generate_box_tetrahedra, generate_structured_triangles, read_vtu, write_vtu
from darcyvi.mesh import _build
from darcyvi.vtk import boundary_cell_mask


def test_two_triangles(tmp_path):
    mesh = _build(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]), [[0, 1, 2], [0, 2, 3]])
    p = np.array([1.0, 2.0, 3.0, 4.0])
    path = write_vtu(mesh, {"p": p, "q": np.array([0.5, -0.5])}, tmp_path / "two.vtu")
    data = read_vtu(path)
    assert data["points"].shape == (4, 3)
    assert np.array_equal(data["cells"], mesh.cells)
    assert np.array_equal(data["point_data"]["p"], p)
    assert np.array_equal(data["cell_data"]["q"], [0.5, -0.5])
    assert np.array_equal(data["cell_data"]["boundary_tag"], [1, 1])


def test_round_trip_precision(tmp_path, rng):
    mesh = generate_annulus(1.0, 100.0, 3, 9)
    fields = {
        "pressure": 1e5 + rng.standard_normal(mesh.n_vertices),
        "velocity": rng.standard_normal((mesh.n_vertices, 2)) * 1e-7,
        "cellp": rng.standard_normal(mesh.n_cells),
    }
    data = read_vtu(write_vtu(mesh, fields, tmp_path / "a.vtu"))
    assert np.allclose(data["points"][:, :2], mesh.vertices, rtol=1e-9)
    assert np.allclose(data["point_data"]["pressure"], fields["pressure"], rtol=1e-7)
    vel = data["point_data"]["velocity"]
    assert vel.shape == (mesh.n_vertices, 3) and np.all(vel[:, 2] == 0)
    assert np.allclose(vel[:, :2], fields["velocity"], rtol=1e-7)
    assert np.allclose(data["cell_data"]["cellp"], fields["cellp"], rtol=1e-7)


def test_cell_fields_forced(tmp_path):
    # 2x1 square has 6 vertices and 4 cells; a 4-row field is ambiguous only by name
    mesh = generate_structured_triangles(1, 1)   # 4 vertices, 2 cells
    data = read_vtu(write_vtu(mesh, {"a": np.arange(2.0)}, tmp_path / "c.vtu", cell_fields=("a",),
                              boundary_tags=False))
    assert "a" in data["cell_data"] and "boundary_tag" not in data["cell_data"]


def test_field_size_errors(tmp_path):
    mesh = generate_structured_triangles(2, 2)
    with pytest.raises(ValueError, match="rows"):
        write_vtu(mesh, {"bad": np.zeros(5)}, tmp_path / "x.vtu")
    with pytest.raises(ValueError, match="cell field"):
        write_vtu(mesh, {"bad": np.zeros(mesh.n_vertices)}, tmp_path / "x.vtu", cell_fields=("bad",))
    with pytest.raises(OSError, match="cannot write"):
        (tmp_path / "file").write_text("")
        write_vtu(mesh, {}, tmp_path / "file" / "x.vtu")


def test_boundary_mask_3d():
    mesh = generate_box_tetrahedra(3, 3, 3)
    mask = boundary_cell_mask(mesh)
    bf = mesh.boundary_facets
    touching = np.unique(mesh.facet_cells[bf, 0])
    assert np.all(mask[touching] > 0)
    interior = np.setdiff1d(np.arange(mesh.n_cells), touching)
    assert len(interior) > 0 and np.all(mask[interior] == 0)
