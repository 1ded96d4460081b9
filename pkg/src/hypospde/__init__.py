"""Hypoellipticity diagnostics for Galerkin-truncated semilinear SPDEs with additive noise."""

__version__ = "0.1.0"
