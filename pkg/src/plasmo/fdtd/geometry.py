"""Rasterization of a planar stack onto the FDTD grid."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import GeometryError
from ..materials import ConstantIndexModel, DrudeLorentzModel, MaterialModel, StackSpec
from ..units import conductivity_si_to_program, ev_to_omega, wavelength_nm_to_omega
from .config import SimConfig


@dataclass
class Pole:
    """One auxiliary current.  ``weight`` is per x-column: w_p^2 (Drude) or delta-eps (Lorentz)."""

    kind: str  # "drude" or "lorentz"
    omega0: float
    gamma: float
    weight: np.ndarray
    label: str = ""

    @property
    def columns(self) -> slice:
        nz = np.nonzero(self.weight)[0]
        return slice(int(nz[0]), int(nz[-1]) + 1) if nz.size else slice(0, 0)


@dataclass
class Layout:
    nx: int
    ny: int
    dx: float
    pml: int
    source_col: int
    reflection_face: int
    transmission_face: int
    stack_front: float  # um
    stack_back: float  # um
    layer_bounds: list = field(default_factory=list)  # (x0, x1) um per layer


@dataclass
class Medium:
    eps_inf: np.ndarray  # (nx,)
    sigma: np.ndarray  # (nx,) program units
    poles: list
    fractions: np.ndarray  # (nx, n_layers + 2): ambient, layers..., substrate
    warnings: list = field(default_factory=list)

    @property
    def lossy_columns(self) -> np.ndarray:
        """Columns whose averaged material can absorb (non-zero eps'')."""
        lossy = self.sigma > 0
        for p in self.poles:
            lossy |= p.weight > 0
        return lossy


def interval_fractions(edges: np.ndarray, a: float, b: float) -> np.ndarray:
    """Fraction of each cell [edges[i], edges[i+1]] covered by [a, b]."""
    def covered(x):
        return np.clip(x, a, b) - a

    return np.diff(covered(edges)) / np.diff(edges)


def build_layout(stack: StackSpec, config: SimConfig) -> Layout:
    nx, ny = config.shape
    dx = config.dx
    pml = config.pml_cells
    x_in = pml * dx
    x_out = (nx - pml) * dx
    front = x_in + config.stack_offset
    back = front + stack.total_thickness_nm * 1e-3
    t_face = int(round((x_out - config.transmission_offset) / dx))
    if back >= t_face * dx - dx:
        raise GeometryError(
            f"stack ({stack.total_thickness_nm:g} nm) does not fit between x={front:.3f} um "
            f"and the transmission plane at x={t_face * dx:.3f} um"
        )
    bounds, x = [], front
    for layer in stack.layers:
        bounds.append((x, x + layer.thickness_nm * 1e-3))
        x += layer.thickness_nm * 1e-3
    return Layout(
        nx=nx,
        ny=ny,
        dx=dx,
        pml=pml,
        source_col=int(np.floor((x_in + config.source_offset) / dx)),
        reflection_face=int(round((x_in + config.reflection_offset) / dx)),
        transmission_face=t_face,
        stack_front=front,
        stack_back=back,
        layer_bounds=bounds,
    )


def _check_half_space(model: MaterialModel, role: str):
    if not isinstance(model, ConstantIndexModel):
        raise GeometryError(f"{role} must be a constant-index medium, got {type(model).__name__}")


def rasterize(stack: StackSpec, config: SimConfig, layout: Layout | None = None) -> Medium:
    """Filling-fraction averaged material columns along the propagation axis."""
    _check_half_space(stack.ambient, "ambient")
    _check_half_space(stack.substrate, "substrate")
    layout = layout or build_layout(stack, config)
    edges = np.arange(layout.nx + 1) * layout.dx
    lx = layout.nx * layout.dx
    regions = [(stack.ambient, 0.0, layout.stack_front, "ambient")]
    regions += [(l.material, a, b, l.name or f"layer{i + 1}") for i, (l, (a, b)) in enumerate(zip(stack.layers, layout.layer_bounds))]
    regions += [(stack.substrate, layout.stack_back, lx, "substrate")]

    fractions = np.stack([interval_fractions(edges, a, b) for _, a, b, _ in regions], axis=1)
    eps_inf = np.zeros(layout.nx)
    sigma = np.zeros(layout.nx)
    poles = []
    warnings = []
    for (model, a, b, label), frac in zip(regions, fractions.T):
        eps_inf += frac * model.eps_inf
        if not isinstance(model, DrudeLorentzModel):
            continue
        if b - a < layout.dx:
            warnings.append(
                f"layer {label!r} ({(b - a) * 1e3:.3g} nm) is thinner than one cell "
                f"({layout.dx * 1e3:.3g} nm); represented by filling-fraction averaging"
            )
        sigma += frac * conductivity_si_to_program(model.static_conductivity)
        if model.drude_plasma_energy > 0:
            poles.append(
                Pole(
                    "drude",
                    0.0,
                    float(ev_to_omega(model.drude_damping_energy)),
                    frac * float(ev_to_omega(model.drude_plasma_energy)) ** 2,
                    f"{label}:drude",
                )
            )
        for k, pole in enumerate(model.lorentz_poles):
            if pole.strength > 0:
                poles.append(
                    Pole(
                        "lorentz",
                        float(ev_to_omega(pole.resonance_energy)),
                        float(ev_to_omega(pole.damping_energy)),
                        frac * pole.strength,
                        f"{label}:lorentz{k}",
                    )
                )
    return Medium(eps_inf, sigma, poles, fractions, warnings)


def column_permittivity(medium: Medium, wavelength_nm: float) -> np.ndarray:
    """Continuous-frequency permittivity of every averaged column."""
    w = float(wavelength_nm_to_omega(wavelength_nm))
    eps = medium.eps_inf + 1j * medium.sigma / w
    for p in medium.poles:
        if p.kind == "drude":
            eps = eps - p.weight / (w * (w + 1j * p.gamma))
        else:
            eps = eps + p.weight * p.omega0**2 / (p.omega0**2 - w**2 - 1j * p.gamma * w)
    return eps
