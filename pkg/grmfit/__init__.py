"""Graded response model estimation with Laplace and Gauss-Hermite EM backends."""

__version__ = "0.1.0"
