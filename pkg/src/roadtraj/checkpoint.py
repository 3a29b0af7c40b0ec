"""Deterministic checkpoint container.

Layout: 8-byte magic, little-endian uint32 header length, a JSON header
(format version, full model config, parameter index with shapes/dtypes),
then the raw row-major parameter bytes in index order. No timestamps or
compression, so identical models produce identical files byte for byte.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .autodiff import ParamStore, Tensor
from .errors import DataError
from .model import ModelConfig, TrajectoryModel

MAGIC = b"RDTRAJCK"
FORMAT_VERSION = 1


def save_checkpoint(path, model):
    params = model.params
    index = []
    blobs = []
    for name, t in params.items():
        arr = np.ascontiguousarray(t.data)
        index.append({"name": name, "shape": list(arr.shape), "dtype": str(arr.dtype)})
        blobs.append(arr.tobytes())
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "params": index,
    }
    payload = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        for blob in blobs:
            fh.write(blob)


def _read_header(fh, path):
    magic = fh.read(len(MAGIC))
    if magic != MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<I", fh.read(4))
    header = json.loads(fh.read(hlen).decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise DataError(
            f"{path}: unsupported checkpoint format version "
            f"{header.get('format_version')}"
        )
    return header


def read_checkpoint_config(path):
    """Read just the model config, without loading parameters."""
    with open(path, "rb") as fh:
        header = _read_header(fh, path)
    return ModelConfig.from_dict(header["config"])


def load_checkpoint(path, net):
    with open(path, "rb") as fh:
        header = _read_header(fh, path)
        config = ModelConfig.from_dict(header["config"])
        store = ParamStore(dtype=np.float32)
        for entry in header["params"]:
            dtype = np.dtype(entry["dtype"])
            shape = tuple(entry["shape"])
            nbytes = dtype.itemsize * int(np.prod(shape)) if shape else dtype.itemsize
            raw = fh.read(nbytes)
            if len(raw) != nbytes:
                raise DataError(f"{path}: truncated parameter {entry['name']!r}")
            arr = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
            store.register(entry["name"], Tensor(arr, requires_grad=True))
    return TrajectoryModel(config, net, store)
