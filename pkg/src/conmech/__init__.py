"""Constrained Lagrangian mechanics: ideal, Appell-Chetaev and vakonomic reactions, affine bodies."""

__version__ = "0.1.0"
