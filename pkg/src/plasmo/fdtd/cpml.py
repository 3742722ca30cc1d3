"""Convolutional PML coefficients along the propagation axis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORDER = 3
KAPPA_MAX = 1.0
ALPHA_MAX = 0.05


@dataclass
class CpmlAxis:
    """Recursive-convolution coefficients at a set of positions.

    psi <- b * psi + a * d_field, and the stretched derivative is
    d_field / kappa + psi.  Only the ``index`` positions inside the layer
    carry state.
    """

    index: np.ndarray
    a: np.ndarray
    b: np.ndarray
    kappa: np.ndarray


def depth(x: np.ndarray, length: float, thickness: float) -> np.ndarray:
    """Normalised penetration (0 at the inner face, 1 at the outer wall)."""
    left = (thickness - x) / thickness
    right = (x - (length - thickness)) / thickness
    return np.clip(np.maximum(left, right), 0.0, 1.0)


def coefficients(x: np.ndarray, length: float, thickness: float, dx: float, dt: float) -> CpmlAxis:
    d = depth(x, length, thickness)
    sigma_max = 0.8 * (ORDER + 1) / dx  # vacuum impedance is 1 in program units
    sigma = sigma_max * d**ORDER
    kappa = 1.0 + (KAPPA_MAX - 1.0) * d**ORDER
    alpha = ALPHA_MAX * (1.0 - d)
    b = np.exp(-(sigma / kappa + alpha) * dt)
    denom = sigma * kappa + kappa**2 * alpha
    a = np.where(sigma > 0, sigma * (b - 1.0) / np.where(denom > 0, denom, 1.0), 0.0)
    index = np.nonzero(d > 0)[0]
    return CpmlAxis(index, a[index], b[index], kappa[index])
