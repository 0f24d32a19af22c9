"""Quantum-like dynamics from real, non-negative cyclic kernels."""

__version__ = "0.1.0"
