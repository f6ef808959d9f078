"""Numerics for the SK correlation matrix in the replica-symmetric phase."""
__version__ = "0.1.0"
