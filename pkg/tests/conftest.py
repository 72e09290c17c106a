import numpy as np
import pytest

from darcyvi import (FieldSolution, ProblemSpec, ViscosityModel, generate_structured_triangles,
                     permeability_constant)

ACCEPTANCE_LINES = []


def record_acceptance(number: int, passed: bool, detail: str):
    ACCEPTANCE_LINES.append((number, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_problem(n=4, K=None, source=0.0, p0=0.0, betaB=0.0, law="linearized"):
    """Unit square, constant permeability, pressure data on all sides."""
    mesh = generate_structured_triangles(n, n)
    K = np.array([[1.0, 0.3], [0.3, 0.5]]) if K is None else np.asarray(K, dtype=float)
    return ProblemSpec(mesh, ViscosityModel(1.0, betaB, law), permeability_constant(K),
                       source=lambda x: np.full(len(x), float(source)),
                       source_sign=int(np.sign(source)),
                       pressure_bcs={t: (lambda x: np.full(len(x), float(p0))) for t in (1, 2, 3, 4)})


def random_state(prob, rng, scale_u=1.0, scale_p=1.0):
    u = scale_u * rng.standard_normal(prob.n_u)
    p = scale_p * rng.standard_normal(prob.n_p)
    return FieldSolution(u, p, prob.formulation)
