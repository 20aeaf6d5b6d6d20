"""Exception hierarchy shared by all modules."""


class ConmechError(Exception):
    """Base class for every error raised by the package."""


class ConfigurationError(ConmechError):
    """Malformed model data: wrong dimensions, missing derivatives, bad parameters."""


class GeometryError(ConmechError):
    """Singular or indefinite metric at an evaluated point."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class DynamicsError(ConmechError):
    """Singular mass matrix."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class DegenerateConstraintError(ConmechError):
    """Constraint rows that are not functionally independent."""

    def __init__(self, message, condition=None, row=None):
        super().__init__(message)
        self.condition = condition
        self.row = row


class AdmissionError(ConmechError):
    """A state violates the constraints it is supposed to satisfy."""

    def __init__(self, message, constraint=None, value=None):
        super().__init__(message)
        self.constraint = constraint
        self.value = value


class UnsupportedDiagnosticError(ConmechError):
    """A diagnostic was requested for data it is not defined on."""


class StateError(ConmechError):
    """Invalid affine-body state (singular deformation gradient)."""


class StepFailure(ConmechError):
    """A time step could not be completed (projection did not converge)."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class ChartDegeneracyError(ConmechError):
    """Parametrization whose Jacobian loses rank."""
