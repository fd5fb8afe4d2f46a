"""Master-equation steady states for a system weakly coupled to a thermal bath."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConvergenceError,
    DegenerateSpectrumError,
    NonUniqueSteadyStateError,
    NotPSDError,
    QMEError,
    ValidationError,
)

__all__ = [
    "ConvergenceError",
    "DegenerateSpectrumError",
    "NonUniqueSteadyStateError",
    "NotPSDError",
    "QMEError",
    "ValidationError",
    "__version__",
]
