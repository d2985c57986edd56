"""Closed-form Gaussian checks."""

from .gaussian_world import GaussianWorld, run_theory_checks

__all__ = ["GaussianWorld", "run_theory_checks"]
