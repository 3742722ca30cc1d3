"""Parameter sweeps, the on-disk dataset format and preprocessing helpers."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tmm
from .errors import (
    DegenerateFeatureError,
    EncodingError,
    FormatError,
    ImputationError,
    InvalidArgumentError,
    SplitError,
    SweepError,
)
from .materials import METALS, manifest_hash, paper_stack

ONE_HOT_ORDER = ("Au", "Ag")
ENGINES = ("tmm", "fdtd")
MAP_SHAPE = (64, 48)
RECORD_FIELDS = (
    "material",
    "thickness_nm",
    "wavelength_nm",
    "absorbed_power",
    "absorbed_flux",
    "map_path",
    "valid",
    "imputed",
)


def _default_wavelengths():
    return tuple(float(w) for w in np.linspace(300.0, 1500.0, 25))


@dataclass(frozen=True)
class SweepPlan:
    materials: tuple[str, ...] = METALS
    thicknesses: tuple[float, ...] = (10.0, 20.0, 30.0, 40.0, 50.0)
    wavelengths: tuple[float, ...] = field(default_factory=_default_wavelengths)
    engine: str = "tmm"
    profile: str = "desk"

    def __post_init__(self):
        for name in ("materials", "thicknesses", "wavelengths"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "thicknesses", tuple(float(t) for t in self.thicknesses))
        object.__setattr__(self, "wavelengths", tuple(float(w) for w in self.wavelengths))
        if not (self.materials and self.thicknesses and self.wavelengths):
            raise InvalidArgumentError("materials, thicknesses and wavelengths must be non-empty")
        unknown = set(self.materials) - set(METALS)
        if unknown:
            raise InvalidArgumentError(f"unknown materials {sorted(unknown)}; choose from {METALS}")
        if any(not 5.0 <= t <= 60.0 for t in self.thicknesses):
            raise InvalidArgumentError("thicknesses must lie in [5, 60] nm")
        if any(w <= 0 for w in self.wavelengths):
            raise InvalidArgumentError("wavelengths must be positive")
        if self.engine not in ENGINES:
            raise InvalidArgumentError(f"engine must be one of {ENGINES}")
        if self.profile not in ("desk", "paper"):
            raise InvalidArgumentError("profile must be 'desk' or 'paper'")

    def cases(self):
        return [(m, t) for m in self.materials for t in self.thicknesses]

    def to_dict(self):
        return asdict(self)


@dataclass
class SampleRecord:
    material: str
    thickness: float
    wavelength: float
    absorbed_power: float
    absorbed_flux: float
    map_path: str = ""
    valid: bool = True
    imputed: bool = False


@dataclass(frozen=True)
class ScalerParams:
    mean: tuple[float, ...]
    std: tuple[float, ...]

    def to_dict(self):
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["mean"]), tuple(d["std"]))


# ---------------------------------------------------------------- engines


def sim_config_for(plan: SweepPlan):
    """FDTD settings for a plan: the profile with monitors and source band on the plan's wavelengths."""
    from .fdtd import profile

    wl = plan.wavelengths
    return profile(plan.profile, source_band=(min(wl), max(wl)), monitor_wavelengths=wl)


def case_key(plan: SweepPlan, material_name: str, thickness: float) -> str:
    payload = {
        "engine": plan.engine,
        "stack": paper_stack(material_name, thickness).to_dict(),
        "wavelengths": list(plan.wavelengths),
        "materials_manifest": manifest_hash(),
    }
    if plan.engine == "fdtd":
        payload["config"] = sim_config_for(plan).to_dict()
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _tmm_case(plan, material_name, thickness, out_dir):
    stack = paper_stack(material_name, thickness)
    arr = tmm.spectrum_arrays(stack, plan.wavelengths)
    metal = stack.layer_index("metal")
    return {
        "absorbed_power": arr["A"].tolist(),
        "absorbed_flux": arr["per_layer_A"][metal].tolist(),
        "map_paths": [""] * len(plan.wavelengths),
        "warnings": [],
    }


def downsample(values: np.ndarray, shape=MAP_SHAPE) -> np.ndarray:
    """Area-average resampling of a 2D grid onto ``shape`` (overlap-weighted)."""
    out = values
    for axis, n_out in enumerate(shape):
        n_in = out.shape[axis]
        edges_in = np.linspace(0.0, 1.0, n_in + 1)
        edges_out = np.linspace(0.0, 1.0, n_out + 1)
        lo = np.maximum(edges_out[:-1, None], edges_in[None, :-1])
        hi = np.minimum(edges_out[1:, None], edges_in[None, 1:])
        weight = np.clip(hi - lo, 0.0, None) * n_out  # rows sum to 1
        out = np.moveaxis(np.tensordot(weight, np.moveaxis(out, axis, 0), axes=1), 0, axis)
    return out


def _fdtd_case(plan, material_name, thickness, out_dir):
    from .fdtd import build_simulation, run

    config = sim_config_for(plan)
    sim = build_simulation(paper_stack(material_name, thickness), config)
    res, maps = run(sim, cache_dir=Path(out_dir) / "cache")
    lay = sim.layout
    interior = slice(lay.pml, lay.nx - lay.pml)
    paths, small = [], []
    for amap in maps:
        rel = f"maps/{material_name}_{thickness:g}nm_{amap.wavelength_vac:g}nm.csv"
        amap.to_csv(Path(out_dir) / rel)
        paths.append(rel)
        small.append(downsample(amap.values[interior]))
    order = np.argsort(np.argsort(plan.wavelengths))  # result is sorted; map back to plan order
    return {
        "absorbed_power": res.absorbed_power[order].tolist(),
        "absorbed_flux": res.absorbed_flux[order].tolist(),
        # kept for the volume-vs-flux consistency check
        "flux_balance": res.A[order].tolist(),
        "absorbed_power_box": res.absorbed_power_box[order].tolist(),
        "map_paths": [paths[i] for i in order],
        "small_maps": np.stack([small[i] for i in order]),
        "warnings": res.warnings,
    }


_ENGINE_FUNCS = {"tmm": _tmm_case, "fdtd": _fdtd_case}


def _run_case(args):
    plan, material_name, thickness, out_dir, key = args
    try:
        out = _ENGINE_FUNCS[plan.engine](plan, material_name, thickness, out_dir)
        out["ok"] = True
    except Exception as exc:  # recorded as invalid rows; the sweep carries on
        n = len(plan.wavelengths)
        out = {
            "absorbed_power": [math.nan] * n,
            "absorbed_flux": [math.nan] * n,
            "map_paths": [""] * n,
            "warnings": [f"{type(exc).__name__}: {exc}"],
            "ok": False,
        }
    small = out.pop("small_maps", None)
    if small is not None:
        np.save(Path(out_dir) / "cases" / f"{key}.npy", small)
    out.update(material=material_name, thickness=thickness, key=key)
    (Path(out_dir) / "cases" / f"{key}.json").write_text(json.dumps(out))
    return out


@dataclass
class Manifest:
    plan: SweepPlan
    records: list
    new_cases: int
    wall_time: float
    warnings: dict
    path: Path

    @property
    def n_records(self):
        return len(self.records)


def run_sweep(plan: SweepPlan, out_dir, workers: int = 1, seed: int = 0) -> Manifest:
    """Run every (material, thickness) case, skipping cases already on disk."""
    out_dir = Path(out_dir)
    (out_dir / "cases").mkdir(parents=True, exist_ok=True)
    (out_dir / "maps").mkdir(exist_ok=True)
    t0 = time.perf_counter()
    jobs, done = [], {}
    for material_name, thickness in plan.cases():
        key = case_key(plan, material_name, thickness)
        path = out_dir / "cases" / f"{key}.json"
        if path.exists():
            done[key] = json.loads(path.read_text())
        else:
            jobs.append((plan, material_name, thickness, str(out_dir), key))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for out in pool.map(_run_case, jobs):
                done[out["key"]] = out
    else:
        for job in jobs:
            out = _run_case(job)
            done[out["key"]] = out

    records, warnings, small_maps, meta = [], {}, [], []
    any_ok = False
    for material_name, thickness in plan.cases():
        key = case_key(plan, material_name, thickness)
        case = done[key]
        any_ok |= bool(case["ok"])
        if case["warnings"]:
            warnings[f"{material_name}/{thickness:g}nm"] = case["warnings"]
        for i, wl in enumerate(plan.wavelengths):
            p, f = case["absorbed_power"][i], case["absorbed_flux"][i]
            ok = bool(case["ok"]) and math.isfinite(p) and math.isfinite(f)
            records.append(SampleRecord(material_name, thickness, wl, p, f, case["map_paths"][i], ok))
        npy = out_dir / "cases" / f"{key}.npy"
        if npy.exists():
            small_maps.append(np.load(npy))
            meta += [(material_name, thickness, wl) for wl in plan.wavelengths]
    if not any_ok:
        raise SweepError("every sweep case failed: " + "; ".join(w for ws in warnings.values() for w in ws))

    write_records(records, out_dir / "records.csv")
    if small_maps:
        np.savez(
            out_dir / "maps_64x48.npz",
            maps=np.concatenate(small_maps),
            material=np.array([m for m, _, _ in meta]),
            thickness=np.array([t for _, t, _ in meta]),
            wavelength=np.array([w for _, _, w in meta]),
        )
    wall = time.perf_counter() - t0
    valid = [r for r in records if r.valid]
    _, scaler = standardize(
        np.array([[r.thickness, r.wavelength] for r in valid]), allow_constant=True
    )
    manifest = {
        "plan": plan.to_dict(),
        "engine_profile": sim_config_for(plan).to_dict() if plan.engine == "fdtd" else {"engine": "tmm"},
        "materials_manifest_hash": manifest_hash(),
        "scaler": {"features": ["thickness_nm", "wavelength_nm"], **scaler.to_dict()},
        "one_hot_order": list(ONE_HOT_ORDER),
        "seed": seed,
        "wall_time_s": wall,
        "new_cases": len(jobs),
        "warnings": warnings,
        "maps_cache": "maps_64x48.npz" if small_maps else None,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return Manifest(plan, records, len(jobs), wall, warnings, out_dir / "manifest.json")


# ---------------------------------------------------------------- record I/O


def _fmt(x: float) -> str:
    return "%.9e" % x


def write_records(records: Sequence[SampleRecord], path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow(
                [
                    r.material,
                    _fmt(r.thickness),
                    _fmt(r.wavelength),
                    _fmt(r.absorbed_power),
                    _fmt(r.absorbed_flux),
                    r.map_path,
                    int(r.valid),
                    int(r.imputed),
                ]
            )


def read_records(path) -> list[SampleRecord]:
    path = Path(path)
    if path.is_dir():
        path = path / "records.csv"
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if tuple(header or ()) != RECORD_FIELDS:
            raise FormatError(f"{path}: unexpected records header {header}")
        out = []
        for row in reader:
            out.append(
                SampleRecord(
                    row[0],
                    float(row[1]),
                    float(row[2]),
                    float(row[3]),
                    float(row[4]),
                    row[5],
                    row[6] == "1",
                    row[7] == "1",
                )
            )
    return out


def load_map_cache(out_dir):
    """(maps, material, thickness, wavelength) from the downsampled map cache."""
    with np.load(Path(out_dir) / "maps_64x48.npz") as f:
        return f["maps"], f["material"], f["thickness"], f["wavelength"]


# ---------------------------------------------------------------- preprocessing


def standardize(values, params: ScalerParams | None = None, allow_constant=False):
    """z = (x - mean) / std per column, population std.  Returns (z, params)."""
    x = np.asarray(values, dtype=float)
    squeeze = x.ndim == 1
    x2 = x[:, None] if squeeze else x
    if params is None:
        if x2.shape[0] < 2:
            raise DegenerateFeatureError("need at least 2 values to fit a scaler")
        mean = x2.mean(axis=0)
        std = x2.std(axis=0)
        if np.any(std == 0):
            if not allow_constant:
                raise DegenerateFeatureError(f"zero-variance feature column(s) {np.nonzero(std == 0)[0].tolist()}")
            std = np.where(std == 0, 1.0, std)
        params = ScalerParams(tuple(mean.tolist()), tuple(std.tolist()))
    z = (x2 - np.array(params.mean)) / np.array(params.std)
    return (z[:, 0] if squeeze else z), params


def unstandardize(z, params: ScalerParams):
    z = np.asarray(z, dtype=float)
    squeeze = z.ndim == 1
    z2 = z[:, None] if squeeze else z
    x = z2 * np.array(params.std) + np.array(params.mean)
    return x[:, 0] if squeeze else x


def one_hot(material_name: str) -> np.ndarray:
    try:
        i = ONE_HOT_ORDER.index(material_name)
    except ValueError:
        raise EncodingError(f"unknown material {material_name!r}; expected one of {ONE_HOT_ORDER}") from None
    v = np.zeros(len(ONE_HOT_ORDER))
    v[i] = 1.0
    return v


def impute_local_average(records: Sequence[SampleRecord]) -> list[SampleRecord]:
    """Fill invalid targets with the mean of the nearest valid neighbours in wavelength.

    Works per (material, thickness) series; at a series edge the single
    nearest valid neighbour is copied.  Valid records are returned unchanged.
    """
    out = list(records)
    series: dict = {}
    for i, r in enumerate(out):
        series.setdefault((r.material, r.thickness), []).append(i)
    for key, idx in series.items():
        idx = sorted(idx, key=lambda i: out[i].wavelength)
        ok = [i for i in idx if out[i].valid]
        if len(ok) < 2:
            raise ImputationError(f"series {key[0]} {key[1]:g} nm has {len(ok)} valid records; need 2")
        pos = {i: k for k, i in enumerate(idx)}
        valid_pos = np.array([pos[i] for i in ok])
        for i in idx:
            if out[i].valid:
                continue
            p = pos[i]
            below = valid_pos[valid_pos < p]
            above = valid_pos[valid_pos > p]
            neighbours = ([idx[below[-1]]] if below.size else []) + ([idx[above[0]]] if above.size else [])
            power = float(np.mean([out[j].absorbed_power for j in neighbours]))
            flux = float(np.mean([out[j].absorbed_flux for j in neighbours]))
            out[i] = replace(out[i], absorbed_power=power, absorbed_flux=flux, imputed=True)
    return out


def split(n_records: int, ratios: Sequence[float], seed: int) -> list[np.ndarray]:
    """Seeded shuffle, then contiguous partitions sized by floor + largest remainder."""
    ratios = np.asarray(ratios, dtype=float)
    if abs(ratios.sum() - 1.0) > 1e-9 or np.any(ratios < 0):
        raise SplitError(f"ratios must be non-negative and sum to 1, got {ratios.tolist()}")
    exact = ratios * n_records
    sizes = np.floor(exact + 1e-9).astype(int)
    remainder = n_records - sizes.sum()
    # hand the leftover records to the largest fractional parts, earlier partitions first on ties
    order = sorted(range(len(ratios)), key=lambda k: (-(exact[k] - sizes[k]), k))
    for k in order[:remainder]:
        sizes[k] += 1
    if np.any(sizes == 0):
        raise SplitError(f"split of {n_records} records by {ratios.tolist()} leaves an empty partition")
    perm = np.random.default_rng(seed).permutation(n_records)
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return [perm[bounds[k] : bounds[k + 1]] for k in range(len(sizes))]


def feature_matrix(records: Sequence[SampleRecord], scaler: ScalerParams | None = None):
    """Model inputs [z(thickness), z(wavelength), one-hot...] and the scaler used."""
    raw = np.array([[r.thickness, r.wavelength] for r in records], dtype=float)
    z, scaler = standardize(raw, scaler)
    onehot = np.array([one_hot(r.material) for r in records])
    return np.hstack([z, onehot]), scaler


def targets(records: Sequence[SampleRecord]) -> np.ndarray:
    return np.array([[r.absorbed_power, r.absorbed_flux] for r in records], dtype=float)


def default_workers() -> int:
    value = os.environ.get("PLASMO_WORKERS", "")
    try:
        return max(1, int(value)) if value else 1
    except ValueError:
        raise InvalidArgumentError(f"PLASMO_WORKERS must be an integer, got {value!r}") from None
