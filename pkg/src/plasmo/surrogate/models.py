"""MLP and CNN surrogates and the wrapper that carries their scalers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..dataset import ONE_HOT_ORDER, ScalerParams, one_hot, standardize, unstandardize
from ..errors import ShapeError
from .layers import BatchNorm, Conv2d, Dense, Dropout, ReLU, Reshape, Sequential, Upsample2x

N_INPUTS = 4  # z(thickness), z(wavelength), one-hot[Au, Ag]
MLP_TARGETS = ("absorbed_power", "absorbed_flux")


def build_mlp(hidden=(128, 128, 128), n_in=N_INPUTS, n_out=2, dropout=0.2, batchnorm=True, seed=0) -> Sequential:
    """Dense -> ReLU -> BatchNorm -> Dropout per hidden layer, linear output."""
    rng = np.random.default_rng(seed)
    layers, width = [], n_in
    for i, h in enumerate(hidden):
        layers += [Dense(f"dense{i}", width, h, rng), ReLU(f"relu{i}")]
        if batchnorm:
            layers.append(BatchNorm(f"bn{i}", h))
        if dropout > 0:
            layers.append(Dropout(f"dropout{i}", dropout))
        width = h
    layers.append(Dense("out", width, n_out, rng))
    return Sequential(layers)


def build_cnn(coarse=(8, 6), channels=(16, 13, 8, 8), n_in=N_INPUTS, dropout=0.3, seed=0) -> Sequential:
    """Dense expansion to a coarse grid, then per stage {2x upsample, 3x3 conv, ReLU, BatchNorm, dropout}.

    ``channels[0]`` is the coarse-grid depth and each later entry the output
    width of one stage, so the output grid is coarse * 2**(len(channels) - 1).
    """
    rng = np.random.default_rng(seed)
    h, w = coarse
    c0 = channels[0]
    layers = [Dense("expand", n_in, c0 * h * w, rng), ReLU("relu_expand"), Reshape("grid", (c0, h, w))]
    for i, (c_in, c_out) in enumerate(zip(channels[:-1], channels[1:])):
        layers += [
            Upsample2x(f"up{i}"),
            Conv2d(f"conv{i}", c_in, c_out, rng),
            ReLU(f"relu{i}"),
            BatchNorm(f"bn{i}", c_out),
        ]
        if dropout > 0:
            layers.append(Dropout(f"dropout{i}", dropout))
    layers.append(Conv2d("out", channels[-1], 1, rng))
    return Sequential(layers)


@dataclass
class Surrogate:
    """A trained network plus the scalers that map raw design parameters to its inputs.

    ``x_scaler`` standardizes (thickness_nm, wavelength_nm); ``y_scaler`` maps
    network outputs back to target units (one entry per MLP target, or a single
    entry shared by every map pixel).
    """

    kind: str  # "mlp" | "cnn"
    net: Sequential
    x_scaler: ScalerParams | None = None
    y_scaler: ScalerParams | None = None
    one_hot_order: tuple = ONE_HOT_ORDER
    info: dict = field(default_factory=dict)

    def features(self, thickness_nm, wavelength_nm, materials) -> np.ndarray:
        t = np.atleast_1d(np.asarray(thickness_nm, dtype=float))
        w = np.atleast_1d(np.asarray(wavelength_nm, dtype=float))
        mats = [materials] if isinstance(materials, str) else list(materials)
        t, w = np.broadcast_arrays(t, w)
        if len(mats) == 1:
            mats = mats * t.size
        if len(mats) != t.size:
            raise ShapeError(f"{len(mats)} materials for {t.size} parameter rows")
        raw = np.column_stack([t, w])
        z = standardize(raw, self.x_scaler)[0] if self.x_scaler else raw
        return np.hstack([z, np.array([one_hot(m) for m in mats])])

    def predict_features(self, x) -> np.ndarray:
        """Inference on already-scaled features; output in target units."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = self.net.forward(x, train=False)
        if self.kind == "cnn":
            out = out[:, 0]
            if self.y_scaler:
                out = out * self.y_scaler.std[0] + self.y_scaler.mean[0]
            return out
        return unstandardize(out, self.y_scaler) if self.y_scaler else out

    def predict(self, thickness_nm, wavelength_nm, materials) -> np.ndarray:
        return self.predict_features(self.features(thickness_nm, wavelength_nm, materials))

    def predict_records(self, records) -> np.ndarray:
        return self.predict(
            [r.thickness for r in records], [r.wavelength for r in records], [r.material for r in records]
        )
