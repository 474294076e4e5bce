"""
Spectral Ordering - Neumann/Dirichlet eigenvalue inequalities for weighted elliptic operators
"""

__version__ = "1.0.0"
__author__ = "Spectral Ordering Team"
__description__ = "Finite element spectra and ordering verdicts for weighted elliptic operators"
