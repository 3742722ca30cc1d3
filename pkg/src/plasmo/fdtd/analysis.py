"""Spectra and absorbed-power maps from the DFT monitors."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import GeometryError, InvalidArgumentError
from ..materials import empty_stack, manifest_hash
from .config import SimConfig
from .geometry import column_permittivity
from .solver import Simulation, build_simulation, run_fields


@dataclass
class IncidentField:
    """Fourier amplitudes of the bare source wave on the reflection plane."""

    ez: np.ndarray  # (W, ny) face-averaged Ez
    hy: np.ndarray  # (W, ny)
    power: np.ndarray  # (W,) line power through the plane

    def to_npz(self, path):
        np.savez(path, ez=self.ez, hy=self.hy, power=self.power)

    @classmethod
    def from_npz(cls, path):
        with np.load(path) as f:
            return cls(f["ez"], f["hy"], f["power"])


@dataclass
class SpectralResult:
    wavelengths: np.ndarray  # nm, increasing
    absorbed_power: np.ndarray  # volume integral of W_abs over the domain
    absorbed_flux: np.ndarray  # net flux into the box around the absorber layer
    R: np.ndarray
    T: np.ndarray
    absorbed_power_box: np.ndarray  # volume integral of W_abs inside the same box
    steps: int = 0
    decayed: bool = True
    warnings: list = field(default_factory=list)

    @property
    def A(self) -> np.ndarray:
        """Absorptance from the flux balance 1 - R - T."""
        return 1.0 - self.R - self.T

    def rows(self):
        for i, w in enumerate(self.wavelengths):
            yield {
                "wavelength_nm": float(w),
                "absorbed_power": float(self.absorbed_power[i]),
                "absorbed_flux": float(self.absorbed_flux[i]),
                "R": float(self.R[i]),
                "T": float(self.T[i]),
            }


@dataclass
class AbsorptionMap:
    wavelength_vac: float
    values: np.ndarray  # (nx, ny); first axis is the propagation axis
    dx: float  # um, same along both axes

    @property
    def total(self) -> float:
        return float(self.values.sum() * self.dx**2)

    def to_csv(self, path):
        np.savetxt(path, self.values, fmt="%.9e", delimiter=",", newline="\n")

    @classmethod
    def from_csv(cls, path, wavelength_vac, dx):
        return cls(float(wavelength_vac), np.atleast_2d(np.loadtxt(path, delimiter=",")), float(dx))


# ---------------------------------------------------------------- normalization

_CACHE: dict[str, IncidentField] = {}
_CACHE_LOCK = threading.Lock()


def _face_fields(sim: Simulation, face: int):
    m = sim.monitor
    f = face - m.col0  # local face index; local cells f-1 and f straddle it
    e = 0.5 * (m.ez[:, f - 1] + m.ez[:, f])
    return e, m.hy[:, f]


def _line_power(e, h, dx):
    """Power through an x-face per unit z, summed over y: integral of -1/2 Re(Ez Hy*)."""
    return -0.5 * np.real(e * np.conj(h)).sum(axis=-1) * dx


def incident_field(config: SimConfig, cache_dir=None) -> IncidentField:
    """Empty-stack reference run, cached in memory and optionally on disk."""
    key = config.digest()
    with _CACHE_LOCK:
        if key in _CACHE:
            return _CACHE[key]
    path = Path(cache_dir) / f"incident-{key[:16]}.npz" if cache_dir else None
    if path is not None and path.exists():
        inc = IncidentField.from_npz(path)
    else:
        sim = run_fields(build_simulation(empty_stack(), config))
        e, h = _face_fields(sim, sim.layout.reflection_face)
        inc = IncidentField(e, h, _line_power(e, h, sim.layout.dx))
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            inc.to_npz(path)
    with _CACHE_LOCK:
        _CACHE[key] = inc
    return inc


def clear_cache():
    with _CACHE_LOCK:
        _CACHE.clear()


# ---------------------------------------------------------------- post-processing


def _require_done(sim: Simulation):
    if sim.result is None:
        raise InvalidArgumentError("simulation has not been run")


def _w_abs(sim: Simulation, k: int) -> np.ndarray:
    """Unnormalised W_abs = 1/2 w eps''|E|^2 on the full grid for monitor index k."""
    m = sim.monitor
    w = m.omega[k]
    eps2 = column_permittivity(sim.medium, m.wavelengths[k]).imag
    lossy = sim.medium.lossy_columns & (eps2 > 0)
    out = np.zeros((sim.layout.nx, sim.layout.ny))
    cols = np.nonzero(lossy)[0]
    if cols.size:
        if cols[0] < m.col0 or cols[-1] >= m.col1:
            raise GeometryError("lossy cells lie outside the monitored region")
        local = cols - m.col0
        out[cols] = 0.5 * w * eps2[cols, None] * np.abs(m.ez[k, local]) ** 2
    return out


def _box_faces(sim: Simulation, box):
    """Validate a (x0, x1, y0, y1) box in um and snap it to faces and rows."""
    x0, x1, y0, y1 = box
    lay = sim.layout
    f0, f1 = int(round(x0 / lay.dx)), int(round(x1 / lay.dx))
    j0, j1 = int(round(y0 / lay.dx)), int(round(y1 / lay.dx))
    if not (lay.pml < f0 < f1 < lay.nx - lay.pml):
        raise GeometryError(f"flux box x-range [{x0}, {x1}] um overlaps the PML")
    if not (sim.monitor.col0 < f0 and f1 < sim.monitor.col1):
        raise GeometryError(
            f"flux box x-range [{x0}, {x1}] um lies outside the monitored span "
            f"[{(sim.monitor.col0 + 1) * lay.dx:.3f}, {(sim.monitor.col1 - 1) * lay.dx:.3f}] um"
        )
    if j1 <= j0:
        raise GeometryError("flux box must have positive height")
    return f0, f1, j0, j1


def _box_flux(sim: Simulation, f0, f1, j0, j1) -> np.ndarray:
    """Net inward time-averaged power through the box edges, per monitor wavelength."""
    m = sim.monitor
    dx = sim.layout.dx
    ny = sim.layout.ny
    rows = np.arange(j0, j1) % ny
    flux = np.zeros(m.wavelengths.size)
    for face, sign in ((f0, 1.0), (f1, -1.0)):
        e, h = _face_fields(sim, face)
        flux += sign * _line_power(e[:, rows], h[:, rows], dx)
    if j1 - j0 < ny:
        # y-edges: S_y = 1/2 Re(Ez Hx*), Hx row j sits between Ez rows j and j+1
        cols = slice(f0 - m.col0, f1 - m.col0)
        for edge, sign in ((j0, 1.0), (j1, -1.0)):
            below, above = (edge - 1) % ny, edge % ny
            e = 0.5 * (m.ez[:, cols, below] + m.ez[:, cols, above])
            h = m.hx[:, cols, below]
            flux += sign * 0.5 * np.real(e * np.conj(h)).sum(axis=-1) * dx
    return flux


def absorber_box(sim: Simulation):
    """Box spanning the whole period and snapped outwards around the absorber layer."""
    a, b = sim.absorber_bounds
    dx = sim.layout.dx
    x0 = np.floor(a / dx + 1e-9) * dx
    x1 = np.ceil(b / dx - 1e-9) * dx
    return (x0, x1, 0.0, sim.layout.ny * dx)


def finalize(sim: Simulation, incident: IncidentField):
    """Normalise the accumulated DFT data into a SpectralResult and maps."""
    lay, m = sim.layout, sim.monitor
    p_inc = incident.power
    e_r, h_r = _face_fields(sim, lay.reflection_face)
    R = -_line_power(e_r - incident.ez, h_r - incident.hy, lay.dx) / p_inc
    e_t, h_t = _face_fields(sim, lay.transmission_face)
    T = _line_power(e_t, h_t, lay.dx) / p_inc

    f0, f1, j0, j1 = _box_faces(sim, absorber_box(sim))
    absorbed_flux = _box_flux(sim, f0, f1, j0, j1) / p_inc
    maps, volume, in_box = [], [], []
    for k in range(m.wavelengths.size):
        values = _w_abs(sim, k) / p_inc[k]
        maps.append(AbsorptionMap(float(m.wavelengths[k]), values, lay.dx))
        volume.append(values.sum() * lay.dx**2)
        in_box.append(values[f0:f1].sum() * lay.dx**2)
    order = np.argsort(m.wavelengths)
    result = SpectralResult(
        wavelengths=m.wavelengths[order],
        absorbed_power=np.array(volume)[order],
        absorbed_flux=absorbed_flux[order],
        R=R[order],
        T=T[order],
        absorbed_power_box=np.array(in_box)[order],
        steps=sim.n,
        decayed=sim.decayed,
        warnings=list(sim.metadata.get("warnings", [])),
    )
    sim.result = result
    sim.maps = [maps[i] for i in order]
    sim._p_inc = p_inc
    return result, sim.maps


def run(sim: Simulation, cache_dir=None, progress=None):
    """Step to decay, normalise by the (cached) empty-stack run and return (spectra, maps)."""
    if not sim.config.monitor_wavelengths:
        raise InvalidArgumentError("at least one monitor wavelength is required")
    incident = incident_field(sim.config, cache_dir)
    run_fields(sim, progress)
    return finalize(sim, incident)


def absorbed_power_map(sim: Simulation, wavelength: float) -> AbsorptionMap:
    _require_done(sim)
    target = sim.monitor.wavelengths[sim.monitor.index(wavelength)]
    return next(mp for mp in sim.maps if mp.wavelength_vac == target)


def flux_spectrum(sim: Simulation, box) -> np.ndarray:
    """Net inward flux through a rectangular box, as a fraction of the incident power.

    ``box`` is (x0, x1, y0, y1) in um; returned in monitor (increasing) order.
    """
    _require_done(sim)
    f0, f1, j0, j1 = _box_faces(sim, box)
    flux = _box_flux(sim, f0, f1, j0, j1) / sim._p_inc
    return flux[np.argsort(sim.monitor.wavelengths)]


def box_volume_power(sim: Simulation, box) -> np.ndarray:
    """Volume integral of the normalised W_abs inside ``box`` (same snapping as flux_spectrum)."""
    _require_done(sim)
    f0, f1, j0, j1 = _box_faces(sim, box)
    rows = np.arange(j0, j1) % sim.layout.ny
    return np.array([mp.values[f0:f1][:, rows].sum() * mp.dx**2 for mp in sim.maps])


def run_metadata(sim: Simulation) -> dict:
    return {
        "config": sim.config.to_dict(),
        "stack": sim.stack.to_dict(),
        "materials_manifest_hash": manifest_hash(),
        **sim.metadata,
    }


def write_run_metadata(sim: Simulation, path):
    Path(path).write_text(json.dumps(run_metadata(sim), indent=2) + "\n")
