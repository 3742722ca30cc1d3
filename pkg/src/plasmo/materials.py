"""Dielectric functions of the stack materials and the planar stack types.

Time convention is exp(-i*omega*t) throughout, so a positive imaginary
permittivity means loss.  Public functions take vacuum wavelengths in nm and
oscillator energies in eV.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from scipy.optimize import least_squares

from .errors import FitQualityError, InvalidArgumentError, ParseError, PassivityError
from .units import conductivity_si_to_program, wavelength_nm_to_ev, wavelength_nm_to_omega

DEFAULT_FIT_THRESHOLD = 0.25
MAX_LORENTZ_POLES = 4


@dataclass(frozen=True)
class LorentzPole:
    strength: float  # delta-eps, dimensionless
    resonance_energy: float  # eV
    damping_energy: float  # eV


@dataclass(frozen=True)
class DrudeLorentzModel:
    """eps_inf - wp^2/(w(w + i g)) + sum_k de_k w0_k^2/(w0_k^2 - w^2 - i g_k w) + i sigma/(eps0 w)."""

    eps_inf: float
    drude_plasma_energy: float
    drude_damping_energy: float
    lorentz_poles: tuple[LorentzPole, ...] = ()
    static_conductivity: float = 0.0
    name: str = ""

    def __post_init__(self):
        if not self.eps_inf >= 1.0:
            raise InvalidArgumentError(f"eps_inf must be >= 1, got {self.eps_inf}")
        if self.drude_plasma_energy < 0:
            raise InvalidArgumentError("drude_plasma_energy must be >= 0")
        if not self.drude_damping_energy > 0:
            raise InvalidArgumentError("drude_damping_energy must be > 0")
        if self.static_conductivity < 0:
            raise InvalidArgumentError("static_conductivity must be >= 0")
        object.__setattr__(self, "lorentz_poles", tuple(self.lorentz_poles))
        for pole in self.lorentz_poles:
            if pole.strength < 0 or not pole.damping_energy > 0 or not pole.resonance_energy > 0:
                raise InvalidArgumentError(f"non-passive Lorentz pole {pole}")

    def permittivity(self, wavelength_nm):
        energy = wavelength_nm_to_ev(_check_wavelength(wavelength_nm))
        eps = self.eps_inf - self.drude_plasma_energy**2 / (
            energy * (energy + 1j * self.drude_damping_energy)
        )
        for pole in self.lorentz_poles:
            w0 = pole.resonance_energy
            eps = eps + pole.strength * w0**2 / (w0**2 - energy**2 - 1j * pole.damping_energy * energy)
        if self.static_conductivity:
            omega = wavelength_nm_to_omega(wavelength_nm)
            eps = eps + 1j * conductivity_si_to_program(self.static_conductivity) / omega
        return eps

    def to_dict(self):
        d = asdict(self)
        d["kind"] = "drude_lorentz"
        d["lorentz_poles"] = [asdict(p) for p in self.lorentz_poles]
        return d


@dataclass(frozen=True)
class ConstantIndexModel:
    refractive_index: float
    name: str = ""

    def __post_init__(self):
        if not self.refractive_index >= 1.0:
            raise InvalidArgumentError(f"refractive_index must be >= 1, got {self.refractive_index}")

    @property
    def eps_inf(self):
        return self.refractive_index**2

    def permittivity(self, wavelength_nm):
        wl = _check_wavelength(wavelength_nm)
        return np.full(np.shape(wl), self.refractive_index**2 + 0j)[()]

    def to_dict(self):
        return {"kind": "constant_index", **asdict(self)}


MaterialModel = Union[DrudeLorentzModel, ConstantIndexModel]


def _check_wavelength(wavelength_nm):
    wl = np.asarray(wavelength_nm, dtype=float)
    if np.any(~(wl > 0)):
        raise InvalidArgumentError(f"wavelength must be positive, got {wavelength_nm}")
    return wl


def permittivity(model: MaterialModel, wavelength_nm):
    """Complex relative permittivity eps' + i eps'' at a vacuum wavelength (nm)."""
    return model.permittivity(wavelength_nm)


def refractive_index(eps):
    """Return (n, k) with (n + ik)^2 = eps and k >= 0.

    Raises PassivityError for eps'' < 0.
    """
    eps = np.asarray(eps, dtype=complex)
    if np.any(eps.imag < 0):
        raise PassivityError(f"permittivity with negative imaginary part: {eps[eps.imag < 0]}")
    # abs() folds a signed zero so the principal branch never lands on k < 0
    root = np.sqrt(eps.real + 1j * np.abs(eps.imag))
    return root.real[()], root.imag[()]


def complex_index(model: MaterialModel, wavelength_nm):
    n, k = refractive_index(permittivity(model, wavelength_nm))
    return n + 1j * np.asarray(k)


def model_from_dict(d) -> MaterialModel:
    kind = d.get("kind")
    if kind == "constant_index":
        return ConstantIndexModel(float(d["refractive_index"]), d.get("name", ""))
    if kind == "drude_lorentz":
        poles = tuple(LorentzPole(**p) for p in d.get("lorentz_poles", ()))
        return DrudeLorentzModel(
            eps_inf=float(d["eps_inf"]),
            drude_plasma_energy=float(d["drude_plasma_energy"]),
            drude_damping_energy=float(d["drude_damping_energy"]),
            lorentz_poles=poles,
            static_conductivity=float(d.get("static_conductivity", 0.0)),
            name=d.get("name", ""),
        )
    raise InvalidArgumentError(f"unknown material kind {kind!r}")


# ---------------------------------------------------------------- tables


@dataclass(frozen=True)
class OpticsTable:
    wavelength_nm: np.ndarray
    n: np.ndarray
    k: np.ndarray
    name: str = ""

    def __post_init__(self):
        wl = np.asarray(self.wavelength_nm, dtype=float)
        n = np.asarray(self.n, dtype=float)
        k = np.asarray(self.k, dtype=float)
        if not (wl.shape == n.shape == k.shape) or wl.ndim != 1:
            raise InvalidArgumentError("wavelength, n and k must be 1-D arrays of equal length")
        if wl.size < 2:
            raise InvalidArgumentError("an optics table needs at least 2 rows")
        if np.any(np.diff(wl) <= 0):
            raise InvalidArgumentError("table wavelengths must be strictly increasing")
        if np.any(k < 0):
            raise InvalidArgumentError("extinction coefficients must be >= 0")
        object.__setattr__(self, "wavelength_nm", wl)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "k", k)

    @property
    def permittivity(self):
        return (self.n + 1j * self.k) ** 2

    def interpolate(self, wavelength_nm):
        """Linear interpolation of (n, k)."""
        return (
            np.interp(wavelength_nm, self.wavelength_nm, self.n),
            np.interp(wavelength_nm, self.wavelength_nm, self.k),
        )

    def restrict(self, band):
        lo, hi = band
        m = (self.wavelength_nm >= lo) & (self.wavelength_nm <= hi)
        return OpticsTable(self.wavelength_nm[m], self.n[m], self.k[m], self.name)


def read_optics_csv(path, name="") -> OpticsTable:
    return parse_optics_csv(Path(path).read_text(), name=name or Path(path).stem)


def parse_optics_csv(text: str, name="") -> OpticsTable:
    """Parse `wavelength_nm,n,k` CSV text with a header row."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["wavelength_nm", "n", "k"]:
        raise ParseError("expected header 'wavelength_nm,n,k'", line=1)
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            rows.append([float(v) for v in row])
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
        if len(row) != 3:
            raise ParseError(f"expected 3 columns, got {len(row)}", line=lineno)
    arr = np.array(rows, dtype=float).reshape(-1, 3)
    return OpticsTable(arr[:, 0], arr[:, 1], arr[:, 2], name)


def write_optics_csv(table: OpticsTable, path):
    with open(path, "w", newline="\n") as f:
        f.write("wavelength_nm,n,k\n")
        for w, n, k in zip(table.wavelength_nm, table.n, table.k):
            f.write(f"{float(w)!r},{float(n)!r},{float(k)!r}\n")


def embedded_table(name: str) -> OpticsTable:
    """Bundled optics tables: 'Au', 'Ag' (Johnson & Christy 1972) and 'ITO'."""
    files = {"Au": "au_johnson_christy.csv", "Ag": "ag_johnson_christy.csv", "ITO": "ito_reference.csv"}
    try:
        fname = files[name]
    except KeyError:
        raise InvalidArgumentError(f"no embedded table {name!r}; have {sorted(files)}") from None
    text = resources.files("plasmo.data").joinpath(fname).read_text()
    return parse_optics_csv(text, name=name)


# ---------------------------------------------------------------- fitting


@dataclass(frozen=True)
class FitResult:
    model: DrudeLorentzModel
    rms_residual: float  # pooled RMS over the n and k residuals in the band
    max_residual: float  # largest |dn| or |dk| at a table point in the band
    band: tuple[float, float]
    n_points: int


# smallest damping the fitter may return; keeps every loss term strictly passive
MIN_FIT_DAMPING_EV = 1e-3


def _params(x):
    """Map unconstrained fit variables to physical parameters."""
    p = np.exp(np.asarray(x, dtype=float))
    p[0] += 1.0  # eps_inf >= 1
    p[2] += MIN_FIT_DAMPING_EV
    p[5::3] += MIN_FIT_DAMPING_EV
    return p


def _unpack(x, n_lorentz, name=""):
    p = _params(x)
    poles = tuple(LorentzPole(p[3 + 3 * k], p[4 + 3 * k], p[5 + 3 * k]) for k in range(n_lorentz))
    return DrudeLorentzModel(p[0], p[1], p[2], poles, name=name)


def _plasma_energy_guess(table: OpticsTable) -> float:
    eps1 = table.n**2 - table.k**2
    energy = wavelength_nm_to_ev(table.wavelength_nm)
    sign_change = np.nonzero(np.diff(np.sign(eps1)) != 0)[0]
    if sign_change.size:
        # eps' zero crossing of a free-electron gas with eps_inf = 1 sits at w_p
        i = sign_change[-1]
        e0, e1 = energy[i], energy[i + 1]
        y0, y1 = eps1[i], eps1[i + 1]
        return float(e0 + (e1 - e0) * y0 / (y0 - y1))
    # no crossing tabulated: invert the lossless Drude law at the longest wavelength
    return float(energy[-1] * math.sqrt(max(1.0 - eps1[-1], 1.0)))


def _initial_guesses(table: OpticsTable, band, n_lorentz):
    """Deterministic starting points, tried in order.

    The first seeds the poles strictly inside the band, the second spreads
    them over the band including both edges so that an absorption edge just
    outside the band can still be reached.
    """
    wp = _plasma_energy_guess(table)
    e_lo, e_hi = sorted(wavelength_nm_to_ev(np.array(band, dtype=float)))
    layouts = [e_lo + (np.arange(n_lorentz) + 1) * (e_hi - e_lo) / (n_lorentz + 1)]
    if n_lorentz:
        layouts.append(np.linspace(e_hi, e_lo, n_lorentz) if n_lorentz > 1 else np.array([e_hi]))
    starts = []
    for energies in layouts:
        x0 = [0.0, math.log(wp), math.log(0.1)]
        for e_res in energies:
            x0 += [0.0, math.log(e_res), math.log(0.5)]
        starts.append(np.array(x0))
    return starts


def fit_drude_lorentz(
    table: OpticsTable,
    n_lorentz: int,
    band: Sequence[float],
    threshold: float = DEFAULT_FIT_THRESHOLD,
    name: str = "",
) -> FitResult:
    """Least-squares Drude-Lorentz fit of a tabulated dielectric function.

    Minimises sum |eps_model - eps_table|^2 over the table rows inside ``band``
    with a Levenberg-Marquardt solver on log-parameters (which keeps every
    strength positive, every damping above MIN_FIT_DAMPING_EV and eps_inf >= 1).
    Raises FitQualityError when the pooled RMS (n, k) residual exceeds
    ``threshold``.
    """
    if not 0 <= n_lorentz <= MAX_LORENTZ_POLES:
        raise InvalidArgumentError(f"n_lorentz must be in [0, {MAX_LORENTZ_POLES}]")
    lo, hi = float(band[0]), float(band[1])
    if not (lo < hi and lo >= table.wavelength_nm[0] and hi <= table.wavelength_nm[-1]):
        raise InvalidArgumentError(
            f"band {band} not inside table range "
            f"[{table.wavelength_nm[0]}, {table.wavelength_nm[-1]}]"
        )
    sub = table.restrict((lo, hi))
    n_params = 3 + 3 * n_lorentz
    if sub.wavelength_nm.size * 2 < n_params:
        raise InvalidArgumentError("too few table rows in band for the requested model")
    target = sub.permittivity
    energy = wavelength_nm_to_ev(sub.wavelength_nm)

    def residual(x):
        p = _params(x)
        eps = p[0] - p[1] ** 2 / (energy * (energy + 1j * p[2]))
        for k in range(n_lorentz):
            de, w0, g = p[3 + 3 * k : 6 + 3 * k]
            eps = eps + de * w0**2 / (w0**2 - energy**2 - 1j * g * energy)
        r = eps - target
        return np.concatenate([r.real, r.imag])

    def jacobian(x):
        ex = np.exp(x)
        p = _params(x)
        drude = energy * (energy + 1j * p[2])
        cols = [
            np.full(energy.shape, ex[0], dtype=complex),
            -2.0 * p[1] ** 2 / drude,
            1j * p[1] ** 2 / (energy * (energy + 1j * p[2]) ** 2) * ex[2],
        ]
        for k in range(n_lorentz):
            de, w0, g = p[3 + 3 * k : 6 + 3 * k]
            den = w0**2 - energy**2 - 1j * g * energy
            cols.append(de * w0**2 / den)
            cols.append(de * 2.0 * w0**2 * (-energy**2 - 1j * g * energy) / den**2)
            cols.append(de * w0**2 * 1j * energy / den**2 * ex[5 + 3 * k])
        jac = np.stack(cols, axis=1)
        return np.concatenate([jac.real, jac.imag])

    def solve(x0, max_nfev=None):
        return least_squares(
            residual, x0, jac=jacobian, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_nfev
        )

    sol = None
    for x0 in _initial_guesses(sub, (lo, hi), n_lorentz):
        trial = solve(x0, 4000 * n_params)
        if sol is None or trial.cost < sol.cost:
            sol = trial
    # a restart from the optimum resets the trust region and polishes the last digits
    polish = solve(sol.x)
    if polish.cost <= sol.cost:
        sol = polish
    model = _unpack(sol.x, n_lorentz, name=name or table.name)
    n_fit, k_fit = refractive_index(model.permittivity(sub.wavelength_nm))
    dev = np.concatenate([n_fit - sub.n, k_fit - sub.k])
    rms = float(np.sqrt(np.mean(dev**2)))
    result = FitResult(model, rms, float(np.max(np.abs(dev))), (lo, hi), int(sub.wavelength_nm.size))
    if not rms <= threshold:
        raise FitQualityError(
            f"Drude-Lorentz fit RMS (n,k) residual {rms:.4g} exceeds threshold {threshold}", rms
        )
    return result


# ---------------------------------------------------------------- stacks


@dataclass(frozen=True)
class Layer:
    material: MaterialModel
    thickness_nm: float
    name: str = ""

    def __post_init__(self):
        if not self.thickness_nm > 0:
            raise InvalidArgumentError(f"layer thickness must be > 0 nm, got {self.thickness_nm}")


@dataclass(frozen=True)
class StackSpec:
    """Planar stack: semi-infinite ambient, ordered layers, semi-infinite substrate.

    Light arrives from the ambient side at normal incidence.
    """

    ambient: MaterialModel
    layers: tuple[Layer, ...]
    substrate: MaterialModel
    illumination: str = "from_ambient"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.illumination != "from_ambient":
            raise InvalidArgumentError("only illumination='from_ambient' is supported")

    @property
    def total_thickness_nm(self):
        return float(sum(layer.thickness_nm for layer in self.layers))

    def reversed(self) -> StackSpec:
        return StackSpec(self.substrate, tuple(reversed(self.layers)), self.ambient)

    def layer_index(self, name):
        for i, layer in enumerate(self.layers):
            if layer.name == name:
                return i
        raise KeyError(name)

    def to_dict(self):
        return {
            "ambient": self.ambient.to_dict(),
            "layers": [
                {"name": l.name, "thickness_nm": l.thickness_nm, "material": l.material.to_dict()}
                for l in self.layers
            ],
            "substrate": self.substrate.to_dict(),
            "illumination": self.illumination,
        }


# ---------------------------------------------------------------- built-ins

MANIFEST_NAME = "materials.json"
PAPER_ITO_NM = 200.0
PAPER_SIO2_NM = 500.0
METALS = ("Au", "Ag")


def manifest_text() -> str:
    return resources.files("plasmo.data").joinpath(MANIFEST_NAME).read_text()


def manifest_hash() -> str:
    """git-style blob hash of the bundled materials manifest."""
    data = manifest_text().encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


_BUILTINS: dict[str, MaterialModel] | None = None


def builtin_materials() -> dict[str, MaterialModel]:
    global _BUILTINS
    if _BUILTINS is None:
        manifest = json.loads(manifest_text())
        _BUILTINS = {name: model_from_dict(entry["model"]) for name, entry in manifest["materials"].items()}
    return dict(_BUILTINS)


def material(name: str) -> MaterialModel:
    models = builtin_materials()
    for key in models:
        if key.lower() == name.lower():
            return models[key]
    raise InvalidArgumentError(f"unknown material {name!r}; have {sorted(models)}")


def paper_stack(metal: str | MaterialModel, thickness_nm: float) -> StackSpec:
    """air | ITO 200 nm | metal | SiO2 500 nm | air, lit from the ITO side."""
    metal_model = material(metal) if isinstance(metal, str) else metal
    air = material("Air")
    return StackSpec(
        ambient=air,
        layers=(
            Layer(material("ITO"), PAPER_ITO_NM, "ITO"),
            Layer(metal_model, float(thickness_nm), "metal"),
            Layer(material("SiO2"), PAPER_SIO2_NM, "SiO2"),
        ),
        substrate=air,
    )


def empty_stack() -> StackSpec:
    air = ConstantIndexModel(1.0, "Air")
    return StackSpec(air, (), air)


# fit recipes that produced the bundled manifest
BUILTIN_FITS = {
    "Au": {"table": "Au", "band": (300.0, 1500.0), "n_lorentz": 1},
    "Ag": {"table": "Ag", "band": (300.0, 1500.0), "n_lorentz": 1},
    "ITO": {"table": "ITO", "band": (280.0, 2000.0), "n_lorentz": 1},
}


def build_manifest() -> dict:
    """Refit the bundled tables and assemble the materials manifest."""
    out = {
        "description": (
            "Optical models for the plasmonic stack. Au and Ag are Drude-Lorentz fits to "
            "Johnson & Christy (1972). ITO is fitted to a representative reference table "
            "(not measured data). SiO2 is a constant index."
        ),
        "units": {"energies": "eV", "static_conductivity": "S/m", "thickness": "nm"},
        "materials": {},
    }
    for name, recipe in BUILTIN_FITS.items():
        res = fit_drude_lorentz(
            embedded_table(recipe["table"]), recipe["n_lorentz"], recipe["band"], name=name
        )
        out["materials"][name] = {
            "model": res.model.to_dict(),
            "fit": {
                "table": recipe["table"],
                "band_nm": list(recipe["band"]),
                "n_lorentz": recipe["n_lorentz"],
                "rms_residual": res.rms_residual,
                "max_residual": res.max_residual,
            },
        }
    out["materials"]["SiO2"] = {"model": ConstantIndexModel(1.45, "SiO2").to_dict()}
    out["materials"]["Air"] = {"model": ConstantIndexModel(1.0, "Air").to_dict()}
    return out
