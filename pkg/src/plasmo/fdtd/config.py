"""Simulation settings and the two engine profiles."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..errors import InvalidArgumentError

PROFILES = ("desk", "paper")


def _default_monitors():
    return tuple(float(w) for w in np.linspace(400.0, 1200.0, 33))


@dataclass(frozen=True)
class SimConfig:
    """FDTD settings.  Lengths in um, wavelengths in nm.

    x (the first cell dimension) is the propagation axis; y is periodic.
    """

    cell_size: tuple[float, float] = (4.0, 2.75)
    resolution: float = 50.0
    pml_thickness: float = 1.0
    courant: float = 0.5
    source_band: tuple[float, float] = (400.0, 1200.0)
    monitor_wavelengths: tuple[float, ...] = field(default_factory=_default_monitors)
    decay_threshold: float = 1e-6
    max_steps: int = 200_000
    # layout, measured from the inner edge of the entrance PML
    source_offset: float = 0.1
    reflection_offset: float = 0.2
    stack_offset: float = 0.4
    transmission_offset: float = 0.1  # measured back from the exit PML

    def __post_init__(self):
        object.__setattr__(self, "cell_size", tuple(float(v) for v in self.cell_size))
        object.__setattr__(self, "source_band", tuple(float(v) for v in self.source_band))
        object.__setattr__(
            self, "monitor_wavelengths", tuple(float(w) for w in self.monitor_wavelengths)
        )
        if len(self.cell_size) != 2 or min(self.cell_size) <= 0:
            raise InvalidArgumentError("cell_size must be two positive lengths")
        if not self.resolution > 0:
            raise InvalidArgumentError("resolution must be > 0")
        if not 0 < self.courant <= 1 / math.sqrt(2):
            raise InvalidArgumentError("courant number must lie in (0, 1/sqrt(2)]")
        if not 0 < self.pml_thickness < self.cell_size[0] / 2:
            raise InvalidArgumentError("pml_thickness must be positive and < half the propagation length")
        lo, hi = self.source_band
        if not 0 < lo < hi:
            raise InvalidArgumentError("source_band must be increasing positive wavelengths")
        if any(w <= 0 for w in self.monitor_wavelengths):
            raise InvalidArgumentError("monitor wavelengths must be positive")
        if not 0 < self.decay_threshold < 1:
            raise InvalidArgumentError("decay_threshold must lie in (0, 1)")
        if self.max_steps < 1:
            raise InvalidArgumentError("max_steps must be >= 1")

    @property
    def dx(self) -> float:
        return 1.0 / self.resolution

    @property
    def dt(self) -> float:
        return self.courant * self.dx

    @property
    def shape(self) -> tuple[int, int]:
        # tolerance keeps 4.0 * 50 from becoming 201 through round-off
        return tuple(int(math.ceil(s * self.resolution - 1e-9)) for s in self.cell_size)

    @property
    def pml_cells(self) -> int:
        return int(round(self.pml_thickness * self.resolution))

    def with_(self, **changes) -> SimConfig:
        return replace(self, **changes)

    def to_dict(self):
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def profile(name: str, **overrides) -> SimConfig:
    """'desk': 50 cells/um, 400-1200 nm.  'paper': 150 cells/um, 300-1500 nm."""
    if name == "desk":
        base = SimConfig()
    elif name == "paper":
        base = SimConfig(
            resolution=150.0,
            source_band=(300.0, 1500.0),
            monitor_wavelengths=tuple(float(w) for w in np.linspace(300.0, 1500.0, 25)),
        )
    else:
        raise InvalidArgumentError(f"unknown profile {name!r}; choose from {PROFILES}")
    return replace(base, **overrides) if overrides else base
