"""Exception types raised across the package."""


class MeshError(ValueError):
    """Invalid mesh input or topology."""


class InvalidDomainError(MeshError):
    pass


class InvalidTopologyError(MeshError):
    pass


class MshParseError(MeshError):
    """Malformed or unsupported Gmsh file. ``lineno`` is 1-based (0 if unknown)."""

    def __init__(self, message, lineno=0):
        if lineno:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class GeometryError(ValueError):
    """Degenerate cell (zero or negative measure)."""


class ModelValidityError(ValueError):
    """Material law evaluated outside its admissible range (e.g. mu <= 0)."""


class DefinitenessError(ValueError):
    """Permeability tensor not symmetric positive definite."""


class ConfigurationError(ValueError):
    pass


class UnsupportedConstraintError(ValueError):
    pass


class SingularPreconditionerError(RuntimeError):
    pass


class ConvergenceError(RuntimeError):
    """Nonlinear solver did not converge. Carries the partial ``report``."""

    def __init__(self, message, report=None, solution=None):
        super().__init__(message)
        self.report = report
        self.solution = solution


class StagnationError(ConvergenceError):
    pass
