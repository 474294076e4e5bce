"""
Exception hierarchy for the spectral ordering toolkit
"""
from typing import Optional, Sequence


class SpectralOrderingError(Exception):
    """Base class for every error raised by the package"""


class MeshError(SpectralOrderingError):
    """Invalid mesh input or mesh query"""


class MeshQualityError(MeshError):
    """Triangulation could not reach the requested size or angle bound"""


class CornerPointError(MeshError):
    """Curvature was requested at a boundary corner"""


class FieldError(SpectralOrderingError):
    """Invalid coefficient field construction or evaluation"""


class DomainGuardError(FieldError):
    """A field was evaluated outside the region where it is admissible"""


class AssemblyError(SpectralOrderingError):
    """Stiffness/mass assembly failed"""


class EigenSolverError(SpectralOrderingError):
    """Generalized eigenproblem could not be solved"""


class MassMatrixError(EigenSolverError):
    """Mass matrix is not positive definite"""


class ConvergenceError(EigenSolverError):
    """Iterative eigensolver stopped before reaching the residual target"""

    def __init__(self, message: str, residuals: Optional[Sequence[float]] = None):
        super().__init__(message)
        self.residuals = list(residuals) if residuals is not None else []


class CertificateError(SpectralOrderingError):
    """Trial space construction or certificate assembly failed"""


class HypothesisError(SpectralOrderingError):
    """A theorem hypothesis required by an operation does not hold"""


class ConfigParseError(SpectralOrderingError):
    """Experiment configuration could not be parsed"""

    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number
