"""Versioned model files: magic, version, JSON header, little-endian float64 payload."""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..dataset import ScalerParams
from ..errors import FormatError
from .layers import Sequential
from .models import Surrogate

MAGIC = b"PLASMOSG"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")  # magic, version, header length


def _payload(model: Surrogate) -> tuple[bytes, list]:
    arrays = model.net.arrays()
    layout = [{"name": name, "shape": list(a.shape)} for name, a in arrays]
    blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    return blob, layout


def dumps(model: Surrogate) -> bytes:
    blob, layout = _payload(model)
    header = {
        "kind": model.kind,
        "layers": model.net.config(),
        "arrays": layout,
        "x_scaler": model.x_scaler.to_dict() if model.x_scaler else None,
        "y_scaler": model.y_scaler.to_dict() if model.y_scaler else None,
        "one_hot_order": list(model.one_hot_order),
        "info": model.info,
        "payload_bytes": len(blob),
        "payload_sha256": hashlib.sha256(blob).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True).encode()
    return _PREFIX.pack(MAGIC, VERSION, len(head)) + head + blob


def loads(data: bytes) -> Surrogate:
    if len(data) < _PREFIX.size:
        raise FormatError("model file is truncated (no header)")
    magic, version, n_head = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise FormatError("not a plasmo model file (bad magic)")
    if version != VERSION:
        raise FormatError(f"unsupported model file version {version}; this build reads {VERSION}")
    start = _PREFIX.size
    if len(data) < start + n_head:
        raise FormatError("model file is truncated (header)")
    try:
        header = json.loads(data[start : start + n_head])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"model header is not valid JSON: {exc}") from None
    blob = data[start + n_head :]
    if len(blob) != header["payload_bytes"]:
        raise FormatError(f"model payload has {len(blob)} bytes, header says {header['payload_bytes']}")
    if hashlib.sha256(blob).hexdigest() != header["payload_sha256"]:
        raise FormatError("model payload hash mismatch")
    net = Sequential.from_config(header["layers"])
    values, offset = [], 0
    for entry in header["arrays"]:
        n = int(np.prod(entry["shape"], dtype=int))
        values.append(np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(entry["shape"]))
        offset += 8 * n
    names = [name for name, _ in net.arrays()]
    if names != [e["name"] for e in header["arrays"]]:
        raise FormatError("model arrays do not match the architecture descriptor")
    net.set_weights(values)
    scaler = lambda d: ScalerParams.from_dict(d) if d else None  # noqa: E731
    return Surrogate(
        header["kind"],
        net,
        scaler(header["x_scaler"]),
        scaler(header["y_scaler"]),
        tuple(header["one_hot_order"]),
        header.get("info", {}),
    )


def save_model(model: Surrogate, path):
    Path(path).write_bytes(dumps(model))


def load_model(path) -> Surrogate:
    return loads(Path(path).read_bytes())
