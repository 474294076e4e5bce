"""
Bessel functions of integer order by their power series, and the two zeros
that fix the disk eigenvalues used in disk comparisons
"""
import logging
import math
from typing import Optional

import numpy as np
from scipy.optimize import bisect

from .config import BESSEL_BRACKETS, config
from .errors import SpectralOrderingError

logger = logging.getLogger(__name__)


def _series_coefficients(n: int, terms: int) -> np.ndarray:
    m = np.arange(terms)
    log_denominator = np.array([math.lgamma(k + 1) + math.lgamma(k + n + 1) for k in m])
    return (-1.0) ** m * np.exp(-log_denominator)


def bessel_j(n: int, x, terms: Optional[int] = None):
    """J_n(x) = sum_m (-1)^m / (m! (m+n)!) (x/2)^(2m+n)"""
    terms = config.bessel_terms if terms is None else terms
    if n < 0:
        raise SpectralOrderingError(f"Bessel order must be non-negative, got {n}")
    x = np.asarray(x, dtype=float)
    m = np.arange(terms)
    half = (x[..., None] / 2.0) ** (2 * m + n)
    values = half @ _series_coefficients(n, terms)
    return float(values) if values.ndim == 0 else values


def bessel_j_prime(n: int, x, terms: Optional[int] = None):
    """Term-by-term derivative of the J_n series"""
    terms = config.bessel_terms if terms is None else terms
    x = np.asarray(x, dtype=float)
    m = np.arange(terms)
    powers = 2 * m + n
    coefficients = _series_coefficients(n, terms) * powers / 2.0
    # the constant term of J_0 has zero derivative
    exponents = np.maximum(powers - 1, 0)
    values = ((x[..., None] / 2.0) ** exponents) @ coefficients
    return float(values) if values.ndim == 0 else values


def bessel_zero(kind: str, tolerance: Optional[float] = None, terms: Optional[int] = None) -> float:
    """First zero of J_0 or of J_1' by bisection inside its configured bracket"""
    tolerance = config.bessel_tolerance if tolerance is None else tolerance
    if kind not in BESSEL_BRACKETS:
        raise SpectralOrderingError(f"unknown Bessel zero '{kind}'; known: {sorted(BESSEL_BRACKETS)}")

    if kind == "j0_first_zero":
        def target(x):
            return bessel_j(0, x, terms)
    else:
        def target(x):
            return bessel_j_prime(1, x, terms)

    low, high = BESSEL_BRACKETS[kind]
    if target(low) * target(high) > 0:
        raise SpectralOrderingError(f"bracket [{low}, {high}] does not isolate {kind}")
    root = bisect(target, low, high, xtol=tolerance, rtol=4 * np.finfo(float).eps, maxiter=200)
    logger.debug(f"Bessel zero {kind} = {root:.12f} (tolerance {tolerance:g})")
    return float(root)


def disk_dirichlet_eigenvalue(radius: float) -> float:
    """First Dirichlet eigenvalue of a disk: j_{0,1}^2 / R^2"""
    return bessel_zero("j0_first_zero") ** 2 / radius**2


def disk_second_neumann_eigenvalue(radius: float) -> float:
    """Second Neumann eigenvalue of a disk: j'_{1,1}^2 / R^2"""
    return bessel_zero("j1_prime_first_zero") ** 2 / radius**2
