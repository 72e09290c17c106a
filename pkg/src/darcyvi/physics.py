"""Material laws and benchmark problem definitions.

Viscosity follows a Barus-type law, either exponential
``mu0 * exp(beta * p)`` or its two-term linearization ``mu0 * (1 + beta * p)``
(the default). The drag coefficient is ``alpha = mu(p) K^{-1}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, DefinitenessError, ModelValidityError
from .mesh import Mesh, generate_annulus, generate_box_tetrahedra, generate_structured_triangles

__all__ = [
    "ViscosityModel",
    "viscosity",
    "drag",
    "PermeabilityField",
    "permeability_constant",
    "permeability_square_reservoir",
    "permeability_rotated",
    "ProblemSpec",
    "manufactured_problem",
    "square_reservoir_problem",
    "circular_reservoir_problem",
    "box3d_problem",
    "ATM",
]

ATM = 101325.0


@dataclass(frozen=True)
class ViscosityModel:
    mu0: float
    betaB: float = 0.0
    law: str = "linearized"

    def __post_init__(self):
        if not self.mu0 > 0:
            raise ModelValidityError(f"mu0 must be positive, got {self.mu0}")
        if self.betaB < 0:
            raise ModelValidityError(f"betaB must be non-negative, got {self.betaB}")
        if self.law not in ("linearized", "exponential"):
            raise ValueError(f"unknown viscosity law {self.law!r}")

    @property
    def law_code(self) -> int:
        return 0 if self.law == "linearized" else 1

    def mu(self, p):
        p = np.asarray(p, dtype=float)
        if self.law == "exponential":
            return self.mu0 * np.exp(self.betaB * p)
        mu = self.mu0 * (1.0 + self.betaB * p)
        if np.any(mu <= 0):
            raise ModelValidityError(
                f"linearized viscosity is non-positive for p = {np.min(p):g} Pa (1 + betaB p <= 0)")
        return mu

    def dmu(self, p):
        p = np.asarray(p, dtype=float)
        if self.law == "exponential":
            return self.betaB * self.mu0 * np.exp(self.betaB * p)
        return np.full_like(p, self.mu0 * self.betaB)


def viscosity(model: ViscosityModel, p):
    """Return ``(mu, dmu/dp)`` at pressure(s) ``p``."""
    return model.mu(p), model.dmu(p)


def drag(model: ViscosityModel, K, p):
    """Drag ``alpha = mu K^{-1}``, its pressure derivative and its inverse.

    ``K`` may be a single tensor or a stack (..., d, d) matching ``p``.
    """
    K = np.asarray(K, dtype=float)
    mu, dmu = viscosity(model, p)
    try:
        Kinv = np.linalg.inv(K)
    except np.linalg.LinAlgError:
        raise DefinitenessError("permeability tensor is singular") from None
    mu = np.asarray(mu)[..., None, None]
    dmu = np.asarray(dmu)[..., None, None]
    return mu * Kinv, dmu * Kinv, K / mu


@dataclass(frozen=True)
class PermeabilityField:
    """Vectorized evaluator ``x (n, d) -> K (n, d, d)`` in m^2."""

    evaluate: Callable
    dim: int
    preset: str = "custom"
    params: dict = field(default_factory=dict)
    scale: float = 1.0  # reference magnitude for the eigenvalue floor

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.evaluate(x)


def permeability_constant(K) -> PermeabilityField:
    K = np.array(K, dtype=float)
    if K.ndim == 0:
        K = K * np.eye(2)
    if not np.allclose(K, K.T):
        raise DefinitenessError("permeability tensor must be symmetric")
    if np.linalg.eigvalsh(K).min() <= 0:
        raise DefinitenessError("permeability tensor must be positive definite")
    return PermeabilityField(lambda x: np.broadcast_to(K, (len(x),) + K.shape).copy(),
                             K.shape[0], "constant", {"K": K.tolist()}, float(np.abs(K).max()))


def permeability_square_reservoir(k0: float, epsilon: float) -> PermeabilityField:
    """``K = k0 [[y^2 + eps x^2, -(1-eps) x y], [-(1-eps) x y, x^2 + eps y^2]]``."""
    if not epsilon > 0:
        raise ConfigurationError("epsilon must be positive")

    def evaluate(x):
        X, Y = x[:, 0], x[:, 1]
        K = np.empty((len(x), 2, 2))
        K[:, 0, 0] = Y * Y + epsilon * X * X
        K[:, 0, 1] = K[:, 1, 0] = -(1 - epsilon) * X * Y
        K[:, 1, 1] = X * X + epsilon * Y * Y
        return k0 * K

    return PermeabilityField(evaluate, 2, "square_reservoir", {"k0": k0, "epsilon": epsilon}, k0)


def permeability_rotated(theta: float, k_major: float, k_minor: float) -> PermeabilityField:
    """``R(theta) diag(k_major, k_minor) R(theta)^T``."""
    if not (k_major > 0 and k_minor > 0):
        raise DefinitenessError("principal permeabilities must be positive")
    c, s = np.cos(theta), np.sin(theta)
    R = np.array([[c, -s], [s, c]])
    K = R @ np.diag([k_major, k_minor]) @ R.T
    K = 0.5 * (K + K.T)
    field_ = permeability_constant(K)
    return PermeabilityField(field_.evaluate, 2, "rotated",
                             {"theta": theta, "k_major": k_major, "k_minor": k_minor}, max(k_major, k_minor))


# problem definitions ------------------------------------------------------------


def _zero_vector(dim):
    return lambda x: np.zeros((len(x), dim))


def _zero_scalar(x):
    return np.zeros(len(x))


@dataclass(eq=False)
class ProblemSpec:
    """Everything needed to discretize one boundary value problem.

    ``flux_bcs`` maps boundary tags to the prescribed outward normal velocity
    and ``pressure_bcs`` to the prescribed pressure; callables take points
    (n, d) and return (n,). Every boundary tag must appear in exactly one map.
    ``body_force`` returns rho*b at points (n, d) -> (n, d).
    """

    mesh: Mesh
    viscosity: ViscosityModel
    permeability: PermeabilityField
    rho: float = 1.0
    body_force: Optional[Callable] = None
    source: Optional[Callable] = None
    flux_bcs: dict = field(default_factory=dict)
    pressure_bcs: dict = field(default_factory=dict)
    exact_velocity: Optional[Callable] = None
    exact_pressure: Optional[Callable] = None
    pressure_reference: Optional[tuple] = None   # (point, value) pin for pure-flux problems
    pressure_range: Optional[tuple] = None        # (min p0, max p0) when sampling nodes is not enough
    source_sign: Optional[int] = None             # +1, 0, -1 if known analytically
    name: str = "custom"
    params: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        d = self.mesh.dim
        if self.body_force is None:
            self.body_force = _zero_vector(d)
        if self.source is None:
            self.source = _zero_scalar
            if self.source_sign is None:
                self.source_sign = 0
        self.flux_bcs = {self.mesh.tag_id(k): v for k, v in self.flux_bcs.items()}
        self.pressure_bcs = {self.mesh.tag_id(k): v for k, v in self.pressure_bcs.items()}
        both = set(self.flux_bcs) & set(self.pressure_bcs)
        if both:
            raise ConfigurationError(f"boundary tags {sorted(both)} carry both flux and pressure data")
        present = set(np.unique(self.mesh.facet_tags[self.mesh.boundary_facets]).tolist())
        missing = present - set(self.flux_bcs) - set(self.pressure_bcs)
        if missing:
            raise ConfigurationError(f"boundary tags {sorted(missing)} have no boundary condition")
        if not self.pressure_bcs and self.pressure_reference is None:
            raise ConfigurationError("pure-flux problem needs a pressure_reference to fix the constant")

    @property
    def dim(self) -> int:
        return self.mesh.dim

    @property
    def has_exact(self) -> bool:
        return self.exact_velocity is not None and self.exact_pressure is not None


def _const(c):
    return lambda x: np.full(len(x), float(c))


def manufactured_problem(n: int = 8, betaB: float = 0.0, law: str = "linearized",
                         mesh: Mesh | None = None) -> ProblemSpec:
    """Unit-square problem with a smooth exact solution and zero normal flux.

    u = (sin(pi x) cos(pi y), -cos(pi x) sin(pi y)), p = sin(pi x) sin(pi y),
    mu0 = rho = 1, K = I, f = 0 and rho*b = alpha(p) u + grad p.
    """
    mesh = mesh or generate_structured_triangles(n, n)
    model = ViscosityModel(1.0, betaB, law)
    pi = np.pi

    def u_exact(x):
        X, Y = x[:, 0], x[:, 1]
        return np.column_stack([np.sin(pi * X) * np.cos(pi * Y), -np.cos(pi * X) * np.sin(pi * Y)])

    def p_exact(x):
        return np.sin(pi * x[:, 0]) * np.sin(pi * x[:, 1])

    def rho_b(x):
        X, Y = x[:, 0], x[:, 1]
        grad = pi * np.column_stack([np.cos(pi * X) * np.sin(pi * Y), np.sin(pi * X) * np.cos(pi * Y)])
        return model.mu(p_exact(x))[:, None] * u_exact(x) + grad

    zero = _const(0.0)
    return ProblemSpec(
        mesh, model, permeability_constant(np.eye(2)), rho=1.0, body_force=rho_b,
        flux_bcs={t: zero for t in (1, 2, 3, 4)},
        exact_velocity=u_exact, exact_pressure=p_exact,
        pressure_reference=(np.array([0.5, 0.5]), p_exact),
        name="manufactured", params={"n": n, "betaB": betaB, "law": law},
    )


def square_reservoir_problem(epsilon: float, h: float = 1.0, betaB: float = 1e-8, mu0: float = 1e-3,
                             k0: float = 1e-13, law: str = "linearized", mesh: Mesh | None = None,
                             length: float = 100.0, source_box=(48.0, 52.0)) -> ProblemSpec:
    """Anisotropic square reservoir with a unit source in a small central box."""
    if mesh is None:
        n = int(round(length / h))
        mesh = generate_structured_triangles(n, n, ((0.0, length), (0.0, length)))
    lo, hi = source_box

    def f(x):
        inside = (x[:, 0] >= lo) & (x[:, 0] <= hi) & (x[:, 1] >= lo) & (x[:, 1] <= hi)
        return inside.astype(float)

    tags = sorted(set(np.unique(mesh.facet_tags[mesh.boundary_facets]).tolist()))
    return ProblemSpec(
        mesh, ViscosityModel(mu0, betaB, law), permeability_square_reservoir(k0, epsilon),
        source=f, source_sign=1, pressure_bcs={t: _const(ATM) for t in tags},
        name="square", params={"epsilon": epsilon, "h": h, "betaB": betaB},
    )


def annulus_levels():
    """(n_radial, n_angular) for the circular-reservoir mesh hierarchy; the
    element counts 2 * n_r * n_a track 2758, 4970, ... 85822."""
    return [(14, 20), (32, 43), (43, 58), (59, 82), (87, 119), (114, 155), (140, 192), (177, 242)]


def circular_reservoir_problem(level: int = 1, betaB: float = 1e-8, mu0: float = 1e-3,
                               law: str = "linearized", mesh: Mesh | None = None,
                               p_in: float = 1e7, p_out: float = 1e5, theta: float = np.pi / 3) -> ProblemSpec:
    """Borehole at r = 1 m held at p_in inside a disc of radius 100 m at p_out."""
    if mesh is None:
        nr, na = annulus_levels()[level]
        mesh = generate_annulus(1.0, 100.0, nr, na)
    K = permeability_rotated(theta, 1e-10, 1e-13)
    return ProblemSpec(
        mesh, ViscosityModel(mu0, betaB, law), K,
        pressure_bcs={"inner": _const(p_in), "outer": _const(p_out)},
        name="circular", params={"level": level, "betaB": betaB, "theta": theta},
    )


def box3d_problem(n: tuple = (25, 25, 12), betaB: float = 1e-8, mu0: float = 1e-3,
                  law: str = "linearized", mesh: Mesh | None = None) -> ProblemSpec:
    """100 x 100 x 50 m box at 1 atm with a sinusoidal injection patch on top."""
    if mesh is None:
        mesh = generate_box_tetrahedra(*n, extent=((0.0, 100.0), (0.0, 100.0), (0.0, 50.0)))

    def top(x):
        X, Y = x[:, 0], x[:, 1]
        inside = (X >= 48) & (X <= 52) & (Y >= 48) & (Y <= 52)
        bump = 1 + 10 * np.sin(np.pi * (X - 48) / 4) * np.sin(np.pi * (Y - 48) / 4)
        return ATM * np.where(inside, bump, 1.0)

    bcs = {t: _const(ATM) for t in ("xmin", "xmax", "ymin", "ymax", "zmin")}
    bcs["zmax"] = top
    K = permeability_constant(np.diag([1e-13, 1e-13, 1e-11]))
    return ProblemSpec(
        mesh, ViscosityModel(mu0, betaB, law), K, pressure_bcs=bcs,
        pressure_range=(ATM, 11 * ATM), name="box3d", params={"n": list(n), "betaB": betaB},
    )
