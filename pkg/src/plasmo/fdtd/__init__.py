"""Two-dimensional dispersive FDTD engine for planar stacks."""

from .analysis import (
    AbsorptionMap,
    SpectralResult,
    absorbed_power_map,
    absorber_box,
    box_volume_power,
    clear_cache,
    flux_spectrum,
    incident_field,
    run,
    run_metadata,
    write_run_metadata,
)
from .config import SimConfig, profile
from .geometry import interval_fractions, rasterize
from .solver import GaussianSource, Simulation, build_simulation, step

__all__ = [
    "AbsorptionMap",
    "GaussianSource",
    "SimConfig",
    "Simulation",
    "SpectralResult",
    "absorbed_power_map",
    "absorber_box",
    "box_volume_power",
    "build_simulation",
    "clear_cache",
    "flux_spectrum",
    "incident_field",
    "interval_fractions",
    "profile",
    "rasterize",
    "run",
    "run_metadata",
    "step",
    "write_run_metadata",
]
