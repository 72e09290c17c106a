"""Finite element solvers for nonlinear Darcy flow with pressure-dependent
viscosity, with discrete maximum principles enforced through a box-constrained
variational inequality."""

import os as _os

# the TBB layer shipped with some numba builds is too old; prefer OpenMP
_os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

from .errors import *  # noqa: E402,F401,F403
from .mesh import (Mesh, facet_orientation, generate_annulus, generate_box_tetrahedra,  # noqa: E402
                   generate_structured_triangles, read_msh, write_msh)
from .physics import (ATM, PermeabilityField, ProblemSpec, ViscosityModel, box3d_problem,  # noqa: E402
                      circular_reservoir_problem, drag, manufactured_problem, permeability_constant,
                      permeability_rotated, permeability_square_reservoir, square_reservoir_problem,
                      viscosity)
from .assembly import (BlockSystem, DiscreteProblem, FieldSolution, assemble_rt0, assemble_vms,  # noqa: E402
                       discretize, l2_errors)
from .solvers import (BoundsVector, PipelineReport, SolveReport, SolverOptions, compute_bounds,  # noqa: E402
                      detect_violations, newton_solve, semismooth_newton_mcp, vi_pipeline)
from .vtk import read_vtu, write_vtu  # noqa: E402
from .benchmarks import (RunConfig, ScalingRecord, run_box3d, run_circular_reservoir, run_hconv,  # noqa: E402
                         run_square_reservoir, static_scaling_report)

__version__ = "0.1.0"
