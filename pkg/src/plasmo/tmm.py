"""Characteristic-matrix solution of planar stacks at normal incidence.

Fields are normalised so that the tangential E in the substrate is 1; the
optical admittance of a medium is its complex index in units of the vacuum
admittance.  Used as the analytic reference for the FDTD engine.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError
from .materials import MaterialModel, StackSpec, complex_index


@dataclass(frozen=True)
class RtaPoint:
    wavelength_vac: float
    R: float
    T: float
    A: float
    per_layer_A: tuple[float, ...] = field(default_factory=tuple)

    def as_row(self):
        return (self.wavelength_vac, self.R, self.T, self.A, *self.per_layer_A)


def _matrices(index, thickness_nm, wavelength_nm):
    """Characteristic matrices, shape (..., 2, 2), for complex index arrays."""
    delta = 2.0 * np.pi * index * thickness_nm / wavelength_nm
    c, s = np.cos(delta), np.sin(delta)
    m = np.empty(np.shape(delta) + (2, 2), dtype=complex)
    m[..., 0, 0] = c
    m[..., 0, 1] = -1j * s / index
    m[..., 1, 0] = -1j * index * s
    m[..., 1, 1] = c
    return m


def layer_matrix(model: MaterialModel, thickness_nm: float, wavelength_vac: float) -> np.ndarray:
    """2x2 characteristic matrix of one homogeneous layer."""
    if not thickness_nm >= 0:
        raise InvalidArgumentError(f"thickness must be >= 0 nm, got {thickness_nm}")
    n = complex_index(model, np.array([float(wavelength_vac)]))[0]
    return _matrices(n, float(thickness_nm), float(wavelength_vac))


def _solve(stack: StackSpec, wl: np.ndarray):
    """Vectorised R, T and per-layer absorptance over a wavelength array."""
    eta0 = complex_index(stack.ambient, wl)
    eta_s = complex_index(stack.substrate, wl)
    # tangential (E, H) at the back face of the current layer, walking frontwards
    e = np.ones_like(eta_s)
    h = eta_s.copy()
    flux = [np.real(e * np.conj(h))]
    for layer in reversed(stack.layers):
        m = _matrices(complex_index(layer.material, wl), layer.thickness_nm, wl)
        e, h = m[:, 0, 0] * e + m[:, 0, 1] * h, m[:, 1, 0] * e + m[:, 1, 1] * h
        flux.append(np.real(e * np.conj(h)))
    flux = flux[::-1]  # flux[j] is the net flux entering layer j; flux[-1] enters the substrate
    denom = eta0 * e + h
    r = (eta0 * e - h) / denom
    # incident amplitude is (eta0*E + H) / (2*eta0); incident flux is Re(eta0)|E_inc|^2
    incident = np.real(eta0) * np.abs(denom / (2.0 * eta0)) ** 2
    R = np.abs(r) ** 2
    T = flux[-1] / incident
    per_layer = np.array([(flux[j] - flux[j + 1]) / incident for j in range(len(stack.layers))])
    return R, T, per_layer.reshape(len(stack.layers), wl.size)


def _points(stack, wl):
    R, T, per_layer = _solve(stack, wl)
    A = 1.0 - R - T
    return [
        RtaPoint(float(wl[i]), float(R[i]), float(T[i]), float(A[i]), tuple(float(a) for a in per_layer[:, i]))
        for i in range(wl.size)
    ]


def rta(stack: StackSpec, wavelength_vac: float) -> RtaPoint:
    """Reflectance, transmittance and absorptance at one vacuum wavelength (nm)."""
    return _points(stack, np.array([float(wavelength_vac)]))[0]


def spectrum(stack: StackSpec, wavelengths: Sequence[float]) -> list[RtaPoint]:
    wl = np.asarray(wavelengths, dtype=float).ravel()
    if wl.size == 0:
        raise InvalidArgumentError("wavelength list is empty")
    try:
        return _points(stack, wl)
    except Exception as exc:
        # redo point by point so the error names the wavelength that failed
        for w in wl:
            try:
                _points(stack, np.array([w]))
            except Exception as inner:
                raise type(inner)(f"at {w} nm: {inner}") from inner
        raise exc


def spectrum_arrays(stack: StackSpec, wavelengths) -> dict[str, np.ndarray]:
    """Column arrays R, T, A and per_layer_A (layers x wavelengths)."""
    wl = np.asarray(wavelengths, dtype=float).ravel()
    R, T, per_layer = _solve(stack, wl)
    return {"wavelength_nm": wl, "R": R, "T": T, "A": 1.0 - R - T, "per_layer_A": per_layer}


def film_transmittance(stack: StackSpec, layer_name: str, wavelength_vac: float) -> float:
    """Transmittance of the stack relative to the same stack with one layer removed.

    Divides out the reflection and absorption of the surrounding layers so
    that -ln(T) / d measures the attenuation inside the named film.
    """
    i = stack.layer_index(layer_name)
    bare = StackSpec(stack.ambient, stack.layers[:i] + stack.layers[i + 1 :], stack.substrate)
    return rta(stack, wavelength_vac).T / rta(bare, wavelength_vac).T


def extinction_from_transmittance(T, d_nm, wavelength_vac):
    """Effective extinction coefficient k = alpha*lambda/(4*pi) with alpha = -ln(T)/d."""
    T = np.asarray(T, dtype=float)
    if np.any(T <= 0) or np.any(T > 1):
        raise InvalidArgumentError("transmittance must lie in (0, 1]")
    if not np.all(np.asarray(d_nm) > 0):
        raise InvalidArgumentError("thickness must be > 0")
    k = -np.log(T) / np.asarray(d_nm, dtype=float) * np.asarray(wavelength_vac, dtype=float) / (4 * np.pi)
    return float(k) if k.ndim == 0 else k


def format_spectrum_csv(points: Sequence[RtaPoint]) -> str:
    n_layers = len(points[0].per_layer_A) if points else 0
    header = ["wavelength_nm", "R", "T", "A"] + [f"A_layer_{i + 1}" for i in range(n_layers)]
    lines = [",".join(header)]
    for p in points:
        lines.append(",".join("%.9e" % v for v in p.as_row()))
    return "\n".join(lines) + "\n"


def write_spectrum_csv(points: Sequence[RtaPoint], path) -> None:
    Path(path).write_text(format_spectrum_csv(points), newline="\n")
