"""Exception hierarchy.

Data errors (bad files, inconsistent inputs) and numerical errors (no plasma,
singular systems, divergence) are kept apart so the CLI can map them onto
distinct exit codes.
"""


class GSReconError(Exception):
    """Base class for all package errors."""


class DataError(GSReconError, ValueError):
    """Malformed or inconsistent input data."""


class MeshError(DataError):
    pass


class MeasurementError(DataError):
    pass


class NumericalError(GSReconError, ArithmeticError):
    """A numerical procedure could not produce a meaningful result."""


class FactorizationError(NumericalError):
    pass


class NoPlasmaError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    pass
