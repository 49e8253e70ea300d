"""Quantum walks on lossy and PT-symmetric SSH dimer lattices."""

__version__ = "0.1.0"

from .lattice import BlochState, Boundary, LatticeSpec, localized_state
from .results import MeanDispResult

__all__ = ["BlochState", "Boundary", "LatticeSpec", "MeanDispResult", "localized_state", "__version__"]
