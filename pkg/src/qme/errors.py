"""Exception hierarchy shared by all modules."""


class QMEError(Exception):
    """Base class for library errors."""


class ValidationError(QMEError, ValueError):
    """Bad input: non-Hermitian operators, malformed configs, wrong shapes."""


class NotPSDError(ValidationError):
    def __init__(self, eigenvalue, tol):
        self.eigenvalue = float(eigenvalue)
        self.tol = float(tol)
        super().__init__(
            f"matrix is not PSD: eigenvalue {self.eigenvalue:.3e} < -{self.tol:.3e}"
        )


class DegenerateSpectrumError(QMEError):
    """Perturbative formulas divide by Bohr gaps; raised when two levels coincide."""


class ConvergenceError(QMEError, RuntimeError):
    """A numerical procedure (quadrature, eigen-solve) failed to converge."""


class NonUniqueSteadyStateError(ConvergenceError):
    pass
