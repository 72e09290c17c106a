import numpy as np
import pytest

from darcyvi import (FieldSolution, ProblemSpec, ViscosityModel, discretize, generate_box_tetrahedra,
                     generate_structured_triangles, l2_errors, manufactured_problem, newton_solve,
                     permeability_constant)
from darcyvi.errors import ConfigurationError
from darcyvi.mesh import _build

from conftest import random_state, small_problem


def _fd_jacobian(prob, x, h=1e-7):
    n = len(x)
    J = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h * max(1.0, abs(x[j]))
        Fp = prob.residual(prob.state_from_vector(x + e))
        Fm = prob.residual(prob.state_from_vector(x - e))
        J[:, j] = (Fp - Fm) / (2 * e[j])
    return J


@pytest.mark.parametrize("formulation", ["RT0", "VMS"])
@pytest.mark.parametrize("law", ["linearized", "exponential"])
def test_jacobian_matches_finite_differences(formulation, law, rng):
    spec = small_problem(n=3, source=2.0, p0=0.5, betaB=0.3, law=law)
    prob = discretize(spec, formulation)
    state = random_state(prob, rng, 1.0, 0.5)
    state.p = np.abs(state.p)  # keep the linearized viscosity positive
    J = prob.assemble(state).jacobian().toarray()
    J_fd = _fd_jacobian(prob, state.vector())
    assert np.allclose(J, J_fd, rtol=1e-6, atol=1e-6 * np.abs(J).max())


def test_jacobian_3d_finite_differences(rng):
    mesh = generate_box_tetrahedra(1, 1, 1)
    spec = ProblemSpec(mesh, ViscosityModel(1.0, 0.2), permeability_constant(np.diag([1.0, 2.0, 0.5])),
                       pressure_bcs={t: (lambda x: x[:, 2]) for t in range(1, 7)})
    for formulation in ("RT0", "VMS"):
        prob = discretize(spec, formulation)
        state = random_state(prob, rng, 0.3, 0.3)
        state.p = np.abs(state.p)
        J = prob.assemble(state).jacobian().toarray()
        assert np.allclose(J, _fd_jacobian(prob, state.vector()), rtol=1e-6, atol=1e-7 * np.abs(J).max())


def _linear_pressure_problem(mesh, K):
    a = np.array([0.7, -1.3])

    def p(x):
        return 2.0 + x @ a

    spec = ProblemSpec(mesh, ViscosityModel(1.0), permeability_constant(K),
                       pressure_bcs={t: p for t in np.unique(mesh.facet_tags[mesh.boundary_facets])})
    return spec, p, -np.asarray(K) @ a


@pytest.mark.parametrize("formulation", ["RT0", "VMS"])
def test_linear_pressure_reproduced_exactly(formulation):
    """A linear pressure with constant K gives a constant velocity, which both
    discretizations represent exactly."""
    mesh = generate_structured_triangles(4, 3)
    K = np.array([[1.0, 0.3], [0.3, 0.5]])
    spec, p, u = _linear_pressure_problem(mesh, K)
    prob = discretize(spec, formulation)
    sol, rep = newton_solve(prob, formulation)
    assert rep.snes_iterations == 1
    assert np.allclose(prob.cell_velocity(sol), u, atol=1e-10)
    assert np.allclose(prob.cell_pressure(sol), p(mesh.cell_centroids()), atol=1e-10)


@pytest.mark.parametrize("formulation", ["RT0", "VMS"])
def test_cell_renumbering_invariance(formulation, rng):
    mesh = generate_structured_triangles(4, 4)
    perm = rng.permutation(mesh.n_cells)
    other = _build(mesh.vertices, mesh.cells[perm])
    results = []
    for m in (mesh, other):
        spec = ProblemSpec(m, ViscosityModel(1.0, 0.5), permeability_constant([[1.0, 0.3], [0.3, 0.5]]),
                           source=lambda x: 1.0 + x[:, 0],
                           pressure_bcs={t: (lambda x: x[:, 1]) for t in np.unique(m.facet_tags[m.boundary_facets])})
        prob = discretize(spec, formulation)
        sol, _ = newton_solve(prob, formulation, rtol=1e-12)
        results.append((prob.cell_pressure(sol), prob.cell_velocity(sol)))
    assert np.allclose(results[0][0][perm], results[1][0], atol=1e-10)
    assert np.allclose(results[0][1][perm], results[1][1], atol=1e-10)


def test_rt0_local_mass_balance():
    spec = small_problem(n=4, source=3.0, p0=0.0, betaB=0.5)
    prob = discretize(spec, "RT0")
    sol, _ = newton_solve(prob, "RT0", rtol=1e-12)
    m = prob.mesh
    outflow = np.einsum("ci,ci->c", m.cell_facet_signs, sol.u[m.cell_facets])
    assert np.allclose(outflow, 3.0 * m.cell_volumes(), atol=1e-10)


def test_constrained_rows_are_identity(rng):
    spec = manufactured_problem(3)
    for formulation in ("RT0", "VMS"):
        prob = discretize(spec, formulation)
        J = prob.assemble(random_state(prob, rng)).jacobian().tocsr()
        for i in np.flatnonzero(prob.fixed):
            row = J.getrow(i)
            assert row.nnz >= 1 and row[0, i] == 1.0 and abs(row).sum() == 1.0


def test_manufactured_errors_small():
    spec = manufactured_problem(16, betaB=1.0)
    for formulation, tol in (("RT0", (0.1, 0.1)), ("VMS", (0.02, 0.02))):
        sol, _ = newton_solve(spec, formulation)
        eu, ep = l2_errors(spec, sol)
        assert eu < tol[0] and ep < tol[1]


def test_state_checks():
    spec = small_problem(2)
    prob = discretize(spec, "RT0")
    with pytest.raises(ValueError):
        prob.assemble(FieldSolution(np.zeros(3), np.zeros(prob.n_p), "RT0"))
    with pytest.raises(ConfigurationError):
        discretize(spec, "Q1")
    assert discretize(spec, "rt0") is prob
    with pytest.raises(ConfigurationError):
        l2_errors(spec, prob.initial_state())


def test_orientation_reversal_invariance():
    """Flipping every facet sign flips the flux dofs and leaves the fields unchanged."""
    from dataclasses import replace
    mesh = generate_structured_triangles(4, 4)
    flipped = replace(mesh, cell_facet_signs=-mesh.cell_facet_signs)
    out = []
    for m in (mesh, flipped):
        spec = ProblemSpec(m, ViscosityModel(1.0, 0.5), permeability_constant([[1.0, 0.3], [0.3, 0.5]]),
                           source=lambda x: 1.0 + x[:, 0],
                           flux_bcs={"bottom": lambda x: 0.2 * x[:, 0]},
                           pressure_bcs={t: (lambda x: x[:, 1]) for t in (1, 2, 4)})
        prob = discretize(spec, "RT0")
        sol, _ = newton_solve(prob, "RT0", rtol=1e-12)
        out.append((sol, prob.cell_velocity(sol)))
    assert np.allclose(out[0][0].u, -out[1][0].u, atol=1e-10)
    assert np.allclose(out[0][0].p, out[1][0].p, atol=1e-10)
    assert np.allclose(out[0][1], out[1][1], atol=1e-10)
