"""
Spectral Ordering - Core module

This module provides:
- P1 meshes on intervals, polygons and disks
- Coefficient fields and hypothesis checkers
- Finite element assembly and eigensolvers
- Inequality verdicts, trial-subspace certificates and the boundary identity check
- The experiment runner and its reports
"""

from .config import config, SpectralConfig
from .errors import SpectralOrderingError, ConfigParseError
from .geometry import Mesh, make_interval, make_polygon_mesh, make_disk_mesh, refinement_chain
from .fields import CoefficientSet, ScalarField, MatrixField, construct_harmonic_phase
from .fem import BoundaryCondition, OperatorPair, assemble, operator_pairs
from .eigen import Spectrum, solve_lowest, solve_interval_ode
from .verify import (
    Verdict,
    verify_inequality,
    certify_ordering,
    verify_ibp_identity,
    nehari_bandle_check,
    polya_comparison_1d,
)
from .experiment_config import ExperimentConfig, load_experiment_config, parse_experiment_config
from .experiment_runner import ExperimentRunner, run_experiment
from .report_generator import ReportGenerator

__version__ = "1.0.0"
__all__ = [
    "config",
    "SpectralConfig",
    "SpectralOrderingError",
    "ConfigParseError",
    "Mesh",
    "make_interval",
    "make_polygon_mesh",
    "make_disk_mesh",
    "refinement_chain",
    "CoefficientSet",
    "ScalarField",
    "MatrixField",
    "construct_harmonic_phase",
    "BoundaryCondition",
    "OperatorPair",
    "assemble",
    "operator_pairs",
    "Spectrum",
    "solve_lowest",
    "solve_interval_ode",
    "Verdict",
    "verify_inequality",
    "certify_ordering",
    "verify_ibp_identity",
    "nehari_bandle_check",
    "polya_comparison_1d",
    "ExperimentConfig",
    "load_experiment_config",
    "parse_experiment_config",
    "ExperimentRunner",
    "run_experiment",
    "ReportGenerator",
]
