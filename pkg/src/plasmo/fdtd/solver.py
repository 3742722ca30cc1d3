"""2D TMz Yee solver with ADE dispersion, CPML along x and running DFT monitors.

Grid (program units, c = eps0 = mu0 = 1):

* Ez[i, j] at cell centres ((i + 1/2) dx, (j + 1/2) dx), integer time steps.
* Hy[f, j] on x-faces f = 0..nx at (f dx, (j + 1/2) dx); the faces f = 0 and
  f = nx see a perfectly conducting wall behind the PML.
* Hx[i, j] at ((i + 1/2) dx, (j + 1) dx); y is periodic.
* H lives at half-integer time steps, as do the polarisation currents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DivergenceError, GeometryError, InvalidArgumentError, MonitorLookupError
from ..materials import StackSpec
from ..units import wavelength_nm_to_omega
from . import cpml
from .config import SimConfig
from .geometry import Layout, Medium, build_layout, rasterize

CHECK_EVERY = 100


@dataclass
class GaussianSource:
    """Sine carrier under a Gaussian envelope.

    The carrier sits at the band centre in frequency and the power spectrum
    falls to 1/e^2 at both band edges.
    """

    fc: float
    tau: float
    t0: float

    @classmethod
    def for_band(cls, band_nm):
        f_lo, f_hi = 1e3 / band_nm[1], 1e3 / band_nm[0]
        half_width = 0.5 * (f_hi - f_lo)
        # |S(f)|^2 ~ exp(-(2 pi (f - fc) tau)^2), = e^-2 at fc +- half_width
        tau = math.sqrt(2.0) / (2.0 * math.pi * half_width)
        return cls(0.5 * (f_lo + f_hi), tau, 6.0 * tau)

    @property
    def t_end(self) -> float:
        return 2.0 * self.t0

    def __call__(self, t: float) -> float:
        if t > self.t_end:
            return 0.0
        s = t - self.t0
        return math.sin(2.0 * math.pi * self.fc * s) * math.exp(-0.5 * (s / self.tau) ** 2)


@dataclass
class DftMonitor:
    """Running Fourier amplitudes over the columns [col0, col1).

    Ez and Hx cover those cells, Hy covers faces col0..col1.  Amplitudes are
    sum_n field(t_n) exp(i w t_n) dt with each field sampled at its own time.
    """

    col0: int
    col1: int
    wavelengths: np.ndarray
    omega: np.ndarray
    ez: np.ndarray
    hx: np.ndarray
    hy: np.ndarray

    @classmethod
    def create(cls, col0, col1, ny, wavelengths):
        wl = np.asarray(wavelengths, dtype=float)
        w = wavelength_nm_to_omega(wl)
        n = col1 - col0
        return cls(
            col0,
            col1,
            wl,
            w,
            np.zeros((wl.size, n, ny), complex),
            np.zeros((wl.size, n, ny), complex),
            np.zeros((wl.size, n + 1, ny), complex),
        )

    def index(self, wavelength_nm: float) -> int:
        hits = np.nonzero(np.isclose(self.wavelengths, wavelength_nm, rtol=0, atol=1e-9))[0]
        if not hits.size:
            raise MonitorLookupError(
                f"{wavelength_nm} nm is not monitored; available: "
                + ", ".join(f"{w:g}" for w in self.wavelengths),
                available=self.wavelengths,
            )
        return int(hits[0])


class _DrudeState:
    def __init__(self, pole, dt, ny):
        self.cols = pole.columns
        w = pole.weight[self.cols][:, None]
        self.decay = math.exp(-pole.gamma * dt)
        gain = (1.0 - self.decay) / pole.gamma if pole.gamma > 0 else dt
        self.drive = w * gain
        self.j = np.zeros((self.cols.stop - self.cols.start, ny))

    def advance(self, ez):
        self.j *= self.decay
        self.j += self.drive * ez[self.cols]
        return self.j


class _LorentzState:
    def __init__(self, pole, dt, ny):
        self.cols = pole.columns
        self.dt = dt
        w = pole.weight[self.cols][:, None]
        den = 1.0 + 0.5 * pole.gamma * dt
        self.c1 = (2.0 - (pole.omega0 * dt) ** 2) / den
        self.c2 = (1.0 - 0.5 * pole.gamma * dt) / den
        self.c3 = w * (pole.omega0 * dt) ** 2 / den
        shape = (self.cols.stop - self.cols.start, ny)
        self.p = np.zeros(shape)
        self.p_old = np.zeros(shape)
        self.j = np.zeros(shape)

    def advance(self, ez):
        p_new = self.c1 * self.p - self.c2 * self.p_old + self.c3 * ez[self.cols]
        np.subtract(p_new, self.p, out=self.j)
        self.j /= self.dt
        self.p_old, self.p = self.p, p_new
        return self.j


@dataclass
class Simulation:
    config: SimConfig
    stack: StackSpec
    layout: Layout
    medium: Medium
    source: GaussianSource
    monitor: DftMonitor
    absorber_bounds: tuple[float, float]
    ez: np.ndarray = None
    hx: np.ndarray = None
    hy: np.ndarray = None
    n: int = 0
    metadata: dict = field(default_factory=dict)
    probe_peak: float = 0.0
    window_peak: float = 0.0
    decayed: bool = False
    result: object = None
    maps: list = None

    def __post_init__(self):
        nx, ny = self.layout.nx, self.layout.ny
        dx, dt = self.layout.dx, self.config.dt
        self.ez = np.zeros((nx, ny))
        self.hx = np.zeros((nx, ny))
        self.hy = np.zeros((nx + 1, ny))
        eps, sig = self.medium.eps_inf, self.medium.sigma
        self._ca = ((eps - 0.5 * sig * dt) / (eps + 0.5 * sig * dt))[:, None]
        self._cb = (dt / (eps + 0.5 * sig * dt))[:, None]
        self._poles = [
            (_DrudeState if p.kind == "drude" else _LorentzState)(p, dt, ny)
            for p in self.medium.poles
            if p.columns.stop > p.columns.start
        ]
        lx, pml = nx * dx, self.config.pml_thickness
        self._pml_h = cpml.coefficients(np.arange(nx + 1) * dx, lx, pml, dx, dt)
        self._pml_e = cpml.coefficients((np.arange(nx) + 0.5) * dx, lx, pml, dx, dt)
        self._psi_h = np.zeros((self._pml_h.index.size, ny))
        self._psi_e = np.zeros((self._pml_e.index.size, ny))
        self._jtot = np.zeros((nx, ny))

    @property
    def time(self) -> float:
        return self.n * self.config.dt

    @property
    def has_dispersion(self) -> bool:
        return bool(self._poles)

    def curl_step(self, src: float | None = None):
        """Advance every field by one leapfrog cycle (no DFT bookkeeping)."""
        dx, dt = self.layout.dx, self.config.dt
        ez, hx, hy = self.ez, self.hx, self.hy

        # H: n - 1/2 -> n + 1/2
        dez = np.empty_like(hy)
        dez[1:-1] = ez[1:] - ez[:-1]
        dez[0] = ez[0]
        dez[-1] = -ez[-1]
        dez /= dx
        ph = self._pml_h
        if ph.index.size:
            self._psi_h *= ph.b[:, None]
            self._psi_h += ph.a[:, None] * dez[ph.index]
            dez[ph.index] = dez[ph.index] / ph.kappa[:, None] + self._psi_h
        hy += dt * dez
        hx -= (dt / dx) * (np.roll(ez, -1, axis=1) - ez)

        # polarisation currents at n + 1/2, driven by E^n
        jtot = self._jtot
        jtot.fill(0.0)
        for pole in self._poles:
            jtot[pole.cols] += pole.advance(ez)
        if src is None:
            src = self.source((self.n + 0.5) * dt)
        if src:
            jtot[self.layout.source_col] += src / dx

        # E: n -> n + 1
        dhy = (hy[1:] - hy[:-1]) / dx
        pe = self._pml_e
        if pe.index.size:
            self._psi_e *= pe.b[:, None]
            self._psi_e += pe.a[:, None] * dhy[pe.index]
            dhy[pe.index] = dhy[pe.index] / pe.kappa[:, None] + self._psi_e
        curl = dhy - (hx - np.roll(hx, 1, axis=1)) / dx - jtot
        ez *= self._ca
        ez += self._cb * curl
        self.n += 1

    def accumulate(self):
        """Add the current E^n and H^(n-1/2) samples to the DFT monitor."""
        m = self.monitor
        dt = self.config.dt
        pe = np.exp(1j * m.omega * self.n * dt) * dt
        ph = np.exp(1j * m.omega * (self.n - 0.5) * dt) * dt
        c0, c1 = m.col0, m.col1
        m.ez += pe[:, None, None] * self.ez[None, c0:c1]
        m.hx += ph[:, None, None] * self.hx[None, c0:c1]
        m.hy += ph[:, None, None] * self.hy[None, c0 : c1 + 1]


def _absorber_bounds(stack: StackSpec, layout: Layout, absorber: str | None):
    names = [l.name for l in stack.layers]
    if absorber is None and "metal" in names:
        absorber = "metal"
    if absorber is not None:
        if absorber not in names:
            raise InvalidArgumentError(f"no layer named {absorber!r}; layers are {names}")
        return layout.layer_bounds[names.index(absorber)]
    if stack.layers:
        return (layout.stack_front, layout.stack_back)
    # empty stack: a thin slab of vacuum in the middle of the monitored span
    mid = 0.5 * (layout.reflection_face + layout.transmission_face) * layout.dx
    return (mid - 2 * layout.dx, mid + 2 * layout.dx)


def build_simulation(stack: StackSpec, config: SimConfig, absorber: str | None = None) -> Simulation:
    """Rasterize ``stack`` and set up fields, source and monitors.

    ``absorber`` names the layer wrapped by the flux box ("metal" by default
    when present).
    """
    layout = build_layout(stack, config)
    medium = rasterize(stack, config, layout)
    if not config.monitor_wavelengths:
        raise InvalidArgumentError("at least one monitor wavelength is required")
    c0 = layout.reflection_face - 1
    c1 = layout.transmission_face + 1
    if c0 <= layout.pml or c1 >= layout.nx - layout.pml:
        raise GeometryError("monitor planes overlap the PML; enlarge the cell or thin the PML")
    monitor = DftMonitor.create(c0, c1, layout.ny, config.monitor_wavelengths)
    sim = Simulation(
        config=config,
        stack=stack,
        layout=layout,
        medium=medium,
        source=GaussianSource.for_band(config.source_band),
        monitor=monitor,
        absorber_bounds=_absorber_bounds(stack, layout, absorber),
    )
    sim.metadata = {
        "geometry": (
            "normal incidence along x; layers uniform along y (periodic); "
            "ambient -> layers -> substrate, illuminated from the ambient side"
        ),
        "polarization": "TMz (Ez, Hx, Hy)",
        "grid": [layout.nx, layout.ny],
        "dx_um": layout.dx,
        "dt": config.dt,
        "warnings": list(medium.warnings),
    }
    return sim


def step(sim: Simulation) -> Simulation:
    """One leapfrog cycle plus DFT accumulation and probe bookkeeping."""
    if sim.n >= sim.config.max_steps:
        raise InvalidArgumentError(f"max_steps ({sim.config.max_steps}) already reached")
    sim.curl_step()
    sim.accumulate()
    probe = float(np.max(np.abs(sim.ez[sim.layout.transmission_face])))
    sim.probe_peak = max(sim.probe_peak, probe)
    sim.window_peak = max(sim.window_peak, probe)
    if sim.n % CHECK_EVERY == 0 and not (np.isfinite(sim.ez).all() and np.isfinite(sim.hy).all()):
        raise DivergenceError(f"non-finite field at step {sim.n}", step=sim.n)
    return sim


def run_fields(sim: Simulation, progress=None) -> Simulation:
    """Step until the probe has decayed (checked every CHECK_EVERY steps) or max_steps."""
    t_end = sim.source.t_end
    while sim.n < sim.config.max_steps:
        step(sim)
        if sim.n % CHECK_EVERY == 0:
            if progress is not None:
                progress(sim)
            if sim.time > t_end and sim.probe_peak > 0:
                if sim.window_peak < sim.config.decay_threshold * sim.probe_peak:
                    sim.decayed = True
                    break
            sim.window_peak = 0.0
    if not sim.decayed:
        sim.metadata["warnings"].append(
            f"fields had not decayed to {sim.config.decay_threshold:g} of peak after {sim.n} steps"
        )
    sim.metadata["steps"] = sim.n
    return sim
