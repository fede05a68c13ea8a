"""Cubic B-spline evaluation for the age-varying transition rate."""

from __future__ import annotations

import numpy as np
from scipy.interpolate import BSpline

from .model import SplineConfig


def spline_eval(coeffs, age, config: SplineConfig | None = None):
    """Evaluate the clamped cubic spline at age (scalar or array).

    Ages are clamped to the boundary knots before evaluation, so the spline
    is constant outside its support.  With all coefficients equal the basis
    partition of unity makes the result that constant everywhere.
    """
    if config is None:
        config = SplineConfig()
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (config.n_coefficients,):
        raise ValueError(
            f"expected {config.n_coefficients} spline coefficients, got {coeffs.shape}")
    lo, hi = config.boundary
    x = np.clip(np.asarray(age, dtype=float), lo, hi)
    sp = BSpline(config.knot_vector(), coeffs, config.degree, extrapolate=False)
    out = sp(x)
    return float(out) if np.isscalar(age) else out


def basis_matrix(ages, config: SplineConfig | None = None) -> np.ndarray:
    """Rows of basis function values at each (clamped) age: (n_ages, n_coeffs)."""
    if config is None:
        config = SplineConfig()
    lo, hi = config.boundary
    x = np.clip(np.asarray(ages, dtype=float), lo, hi)
    n = config.n_coefficients
    cols = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        cols.append(BSpline(config.knot_vector(), e, config.degree,
                            extrapolate=False)(x))
    return np.column_stack(cols)
