"""Network layers with hand-written forward and backward passes.

Every layer caches what its backward pass needs during ``forward`` and
raises UsageError if ``backward`` is called without a cached forward.
Image tensors are channels-first: (batch, channels, height, width).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError, UsageError


class Layer:
    kind = "layer"

    def __init__(self, name: str):
        self.name = name
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.state: dict[str, np.ndarray] = {}  # non-trained buffers (batch-norm running stats)
        self._cache = None

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def _cached(self):
        if self._cache is None:
            raise UsageError(f"{self.name}: backward called without a cached forward pass")
        cache, self._cache = self._cache, None
        return cache

    def config(self) -> dict:
        return {"kind": self.kind, "name": self.name}


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Dense(Layer):
    kind = "dense"

    def __init__(self, name, n_in, n_out, rng=None):
        super().__init__(name)
        self.n_in, self.n_out = n_in, n_out
        rng = rng or np.random.default_rng(0)
        self.params = {"W": _glorot(rng, (n_in, n_out), n_in, n_out), "b": np.zeros(n_out)}

    def forward(self, x, train=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"{self.name} expects input (batch, {self.n_in}), got {x.shape}")
        self._cache = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        x = self._cached()
        self.grads = {"W": x.T @ dout, "b": dout.sum(axis=0)}
        return dout @ self.params["W"].T

    def config(self):
        return {**super().config(), "n_in": self.n_in, "n_out": self.n_out}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False, rng=None):
        mask = x > 0
        self._cache = mask
        return np.where(mask, x, 0.0)

    def backward(self, dout):
        return np.where(self._cached(), dout, 0.0)


class BatchNorm(Layer):
    """Per-feature (2D input) or per-channel (4D input) batch normalization."""

    kind = "batchnorm"

    def __init__(self, name, n_features, momentum=0.9, eps=1e-5):
        super().__init__(name)
        self.n_features, self.momentum, self.eps = n_features, momentum, eps
        self.params = {"gamma": np.ones(n_features), "beta": np.zeros(n_features)}
        self.state = {"mean": np.zeros(n_features), "var": np.ones(n_features)}

    def _flat(self, x):
        if x.ndim == 2 and x.shape[1] == self.n_features:
            return x
        if x.ndim == 4 and x.shape[1] == self.n_features:
            return x.transpose(0, 2, 3, 1).reshape(-1, self.n_features)
        raise ShapeError(f"{self.name} expects {self.n_features} features/channels, got {x.shape}")

    @staticmethod
    def _unflat(y, like):
        if like.ndim == 2:
            return y
        n, c, h, w = like.shape
        return y.reshape(n, h, w, c).transpose(0, 3, 1, 2)

    def forward(self, x, train=False, rng=None):
        xf = self._flat(x)
        if train:
            mean = xf.mean(axis=0)
            var = xf.var(axis=0)
            m = self.momentum
            self.state["mean"] = m * self.state["mean"] + (1 - m) * mean
            self.state["var"] = m * self.state["var"] + (1 - m) * var
        else:
            mean, var = self.state["mean"], self.state["var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (xf - mean) * inv_std
        self._cache = (xhat, inv_std, train, x)
        return self._unflat(self.params["gamma"] * xhat + self.params["beta"], x)

    def backward(self, dout):
        xhat, inv_std, train, x = self._cached()
        df = self._flat(dout)
        self.grads = {"gamma": (df * xhat).sum(axis=0), "beta": df.sum(axis=0)}
        dxhat = df * self.params["gamma"]
        if train:
            n = df.shape[0]
            dx = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        else:
            dx = dxhat * inv_std
        return self._unflat(dx, x)

    def config(self):
        return {**super().config(), "n_features": self.n_features, "momentum": self.momentum, "eps": self.eps}


class Dropout(Layer):
    """Inverted dropout: kept units are scaled by 1/(1-rate) in training, identity at inference."""

    kind = "dropout"

    def __init__(self, name, rate):
        super().__init__(name)
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"{name}: dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            self._cache = 1.0
            return x
        if rng is None:
            raise UsageError(f"{self.name}: training-mode dropout needs a random generator")
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        self._cache = mask
        return x * mask

    def backward(self, dout):
        return dout * self._cached()

    def config(self):
        return {**super().config(), "rate": self.rate}


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, name, shape):
        super().__init__(name)
        self.shape = tuple(shape)

    def forward(self, x, train=False, rng=None):
        if int(np.prod(x.shape[1:])) != int(np.prod(self.shape)):
            raise ShapeError(f"{self.name} cannot reshape {x.shape[1:]} to {self.shape}")
        self._cache = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, dout):
        return dout.reshape(self._cached())

    def config(self):
        return {**super().config(), "shape": list(self.shape)}


class Upsample2x(Layer):
    """Nearest-neighbour 2x upsampling of both spatial axes."""

    kind = "upsample2x"

    def forward(self, x, train=False, rng=None):
        if x.ndim != 4:
            raise ShapeError(f"{self.name} expects (batch, channels, h, w), got {x.shape}")
        self._cache = True
        return x.repeat(2, axis=2).repeat(2, axis=3)

    def backward(self, dout):
        self._cached()
        n, c, h, w = dout.shape
        return dout.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def _im2col(x):
    """(n, c, h, w) -> (n*h*w, 9c) zero-padded 3x3 patches, ordered like W[o].ravel()."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    return sliding_window_view(xp, (3, 3), axis=(2, 3)).transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * 9)


def _conv(cols, shape, W):
    n, _, h, w = shape
    out = cols @ W.reshape(W.shape[0], -1).T
    return out.reshape(n, h, w, W.shape[0]).transpose(0, 3, 1, 2)


class Conv2d(Layer):
    """3x3 convolution, stride 1, zero padding 1 (output keeps the input size)."""

    kind = "conv2d"

    def __init__(self, name, c_in, c_out, rng=None):
        super().__init__(name)
        self.c_in, self.c_out = c_in, c_out
        rng = rng or np.random.default_rng(0)
        self.params = {
            "W": _glorot(rng, (c_out, c_in, 3, 3), 9 * c_in, 9 * c_out),
            "b": np.zeros(c_out),
        }

    def forward(self, x, train=False, rng=None):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ShapeError(f"{self.name} expects (batch, {self.c_in}, h, w), got {x.shape}")
        cols = _im2col(x)
        self._cache = (cols, x.shape)
        return _conv(cols, x.shape, self.params["W"]) + self.params["b"][:, None, None]

    def backward(self, dout):
        cols, shape = self._cached()
        W = self.params["W"]
        d = dout.transpose(0, 2, 3, 1).reshape(-1, self.c_out)
        self.grads = {"W": (d.T @ cols).reshape(W.shape), "b": d.sum(axis=0)}
        # the input gradient of a same-padded 3x3 correlation is the same correlation
        # of dout with the kernel flipped in space and transposed in channels
        W_adj = W[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        return _conv(_im2col(dout), shape[:1] + dout.shape[1:], W_adj)

    def config(self):
        return {**super().config(), "c_in": self.c_in, "c_out": self.c_out}


LAYER_KINDS = {cls.kind: cls for cls in (Dense, ReLU, BatchNorm, Dropout, Reshape, Upsample2x, Conv2d)}


def layer_from_config(cfg: dict) -> Layer:
    cfg = dict(cfg)
    cls = LAYER_KINDS[cfg.pop("kind")]
    name = cfg.pop("name")
    if cls is Reshape:
        return Reshape(name, cfg["shape"])
    return cls(name, **cfg)


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, train=False, rng=None):
        x = np.asarray(x, dtype=float)
        for layer in self.layers:
            x = layer.forward(x, train, rng)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def parameters(self):
        """(qualified name, array) for every trainable array, in a fixed order."""
        return [(f"{l.name}.{k}", v) for l in self.layers for k, v in l.params.items()]

    def gradients(self):
        out = []
        for layer in self.layers:
            for k in layer.params:
                if k not in layer.grads:
                    raise UsageError(f"{layer.name}: no gradient for {k}; run backward first")
                out.append((f"{layer.name}.{k}", layer.grads[k]))
        return out

    def buffers(self):
        return [(f"{l.name}.{k}", v) for l in self.layers for k, v in l.state.items()]

    def arrays(self):
        return self.parameters() + self.buffers()

    def get_weights(self):
        return [v.copy() for _, v in self.arrays()]

    def set_weights(self, values):
        slots = [(l, l.params, k) for l in self.layers for k in l.params]
        slots += [(l, l.state, k) for l in self.layers for k in l.state]
        if len(values) != len(slots):
            raise ShapeError(f"expected {len(slots)} arrays, got {len(values)}")
        for (layer, store, k), v in zip(slots, values):
            if np.shape(v) != store[k].shape:
                raise ShapeError(f"{layer.name}.{k}: expected shape {store[k].shape}, got {np.shape(v)}")
            store[k][...] = v

    def config(self):
        return [l.config() for l in self.layers]

    @classmethod
    def from_config(cls, cfg):
        return cls([layer_from_config(c) for c in cfg])
