"""
Configuration settings for the spectral ordering toolkit
"""
import math
from typing import Dict, List, Tuple

from pydantic import Field
from pydantic_settings import BaseSettings
from dotenv import load_dotenv

load_dotenv()


class SpectralConfig(BaseSettings):
    """Default tolerances and solver knobs, overridable with SPECTRAL_* variables"""

    # Hypothesis checks
    analytic_tolerance: float = Field(default=1e-6, gt=0)
    fd_tolerance: float = Field(default=1e-4, gt=0)
    fd_relative_step: float = Field(default=1e-4, gt=0)
    sample_count: int = Field(default=500, ge=1)

    # Assembly
    quadrature_order: int = Field(default=2, ge=1, le=5)

    # Eigensolvers
    dense_threshold: int = Field(default=3000, ge=1)
    residual_tolerance: float = Field(default=1e-8, gt=0)
    cluster_rtol: float = Field(default=1e-6, gt=0)
    arpack_maxiter: int = Field(default=5000, ge=1)
    ode_grid_n: int = Field(default=10_000, ge=10)

    # Certificates and verdicts
    gram_threshold: float = Field(default=1e-8, gt=0)
    certificate_rtol: float = Field(default=1e-6, ge=0)
    verdict_slack: float = Field(default=1e-8, ge=0)
    trace_threshold: float = Field(default=1e-8, gt=0)

    # Mesh generation
    min_angle_degrees: float = Field(default=20.0, gt=0, lt=60)
    mesh_retries: int = Field(default=6, ge=1)

    # Bessel root finder
    bessel_terms: int = Field(default=30, ge=5)
    bessel_tolerance: float = Field(default=1e-10, gt=0)

    # Application
    max_workers: int = Field(default=4, ge=1)
    spectrum_cache_size: int = Field(default=64, ge=1)
    log_level: str = Field(default="INFO")
    show_progress: bool = Field(default=True)

    model_config = {
        "env_file": ".env",
        "env_prefix": "SPECTRAL_",
        "case_sensitive": False,
        "extra": "ignore",
    }


# Checkers attached to each theorem by verify_inequality
THEOREM_HYPOTHESES: Dict[str, List[str]] = {
    "convex_densities": ["convexity_combination", "axis_symmetry"],
    "directional_convexity": ["convexity_combination"],
    "low_dim_gradient": ["directional_invariance"],
    "harmonic_gradient": ["log_harmonic", "harmonic_gradient"],
    "constant_eigenpair": ["constant_eigenpair"],
    "div_curl": ["div_curl"],
    "nehari_bandle": ["log_subharmonic"],
    "trivial": [],
}

# Bracketing intervals for the disk constants: j_{0,1} and j'_{1,1}
BESSEL_BRACKETS: Dict[str, Tuple[float, float]] = {
    "j0_first_zero": (2.0, 3.0),
    "j1_prime_first_zero": (1.5, 2.0),
}

# Rotations of the harmonic phase used for trial families
DEFAULT_ROTATIONS: Tuple[float, ...] = (0.0, math.pi / 4, math.pi / 2, 3 * math.pi / 4)

REPORT_VERSION = "1.0"

# Initialize global config
config = SpectralConfig()
