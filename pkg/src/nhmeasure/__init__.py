"""Measurements on systems evolving under effective non-Hermitian Hamiltonians."""

__version__ = "0.1.0"
