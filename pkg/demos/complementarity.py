"""What the variational inequality actually solves.

On a 3 x 3 mesh the pressure-only problem is small enough to inspect. With
the velocity eliminated, the constrained problem is a linear complementarity
problem: at each pressure dof either the bound is inactive and the mass
balance holds, or the pressure sits on its bound and the mass balance has a
surplus of one sign. This demo solves it with the library and checks the
conditions by hand.
"""

import numpy as np

from darcyvi import (ProblemSpec, ViscosityModel, compute_bounds, discretize, generate_structured_triangles,
                     newton_solve, permeability_rotated, semismooth_newton_mcp)
from darcyvi.solvers import SolverOptions

mesh = generate_structured_triangles(3, 3)
spec = ProblemSpec(mesh, ViscosityModel(1.0, 0.0), permeability_rotated(np.pi / 6, 1.0, 1e-3),
                   source=lambda x: np.exp(-40 * ((x[:, 0] - 0.5) ** 2 + (x[:, 1] - 0.5) ** 2)),
                   source_sign=1,
                   pressure_bcs={t: (lambda x: np.zeros(len(x))) for t in (1, 2, 3, 4)})

prob = discretize(spec, "RT0")
bounds = compute_bounds(spec, "RT0")
free, _ = newton_solve(spec, "RT0")
vi, report = semismooth_newton_mcp(spec, "RT0", options=SolverOptions(rtol=1e-12))

print("cell   unconstrained p     constrained p    mass residual")
F = prob.residual(vi)[prob.n_u:]
for c in range(mesh.n_cells):
    flag = "active" if vi.p[c] <= bounds.p_lo[c] + 1e-12 else ""
    print(f"{c:4d}  {free.p[c]:16.6e}  {vi.p[c]:16.6e}  {F[c]:14.3e}  {flag}")

active = vi.p <= bounds.p_lo + 1e-12
print(f"\n{active.sum()} active cells; semismooth Newton took {report.snes_iterations} steps")
print("mass balance on inactive cells:", np.abs(F[~active]).max())
print("sign of the surplus on active cells (should be <= 0):", F[active].max() if active.any() else None)
