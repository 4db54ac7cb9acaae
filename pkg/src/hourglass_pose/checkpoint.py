"""Checkpoint container.

Layout::

    [8 bytes]  little-endian uint64 N
    [N bytes]  UTF-8 JSON header
    [payload]  little-endian float32 tensors, row-major, in header order

Header keys: ``format_version`` (1), ``config`` (ModelConfig fields),
``tensors`` (list of ``{name, dtype: "f32", shape, byte_offset,
byte_length}`` with offsets relative to the payload start) and an optional
free-form ``extra`` object.
"""

from __future__ import annotations

import json
import os
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .errors import CorruptCheckpointError
from .model import HourglassPose, ModelConfig

FORMAT_VERSION = 1
_F32 = np.dtype("<f4")


def write_tensors(path, config, tensors, extra=None):
    """Write ``tensors`` (name -> array) with a ``config`` dict; atomic on POSIX."""
    entries, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype=_F32).tobytes()
        entries.append({
            "name": name,
            "dtype": "f32",
            "shape": list(np.shape(arr)),
            "byte_offset": offset,
            "byte_length": len(data),
        })
        blobs.append(data)
        offset += len(data)
    header = {"format_version": FORMAT_VERSION, "config": config, "tensors": entries}
    if extra is not None:
        header["extra"] = extra
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def read_tensors(path):
    """Return ``(header, OrderedDict name -> float32 array)``."""
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise CorruptCheckpointError(f"{path}: file shorter than the 8-byte length prefix")
    (n,) = struct.unpack("<Q", raw[:8])
    if 8 + n > len(raw):
        raise CorruptCheckpointError(f"{path}: header length {n} exceeds file size {len(raw)}")
    try:
        header = json.loads(raw[8 : 8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable header ({exc})") from exc
    if not isinstance(header, dict) or header.get("format_version") != FORMAT_VERSION:
        raise CorruptCheckpointError(f"{path}: unsupported format_version {header.get('format_version')!r}")
    payload = memoryview(raw)[8 + n :]
    out = OrderedDict()
    expected_end = 0
    for entry in header.get("tensors", []):
        try:
            name, shape = entry["name"], tuple(int(s) for s in entry["shape"])
            off, length, dtype = int(entry["byte_offset"]), int(entry["byte_length"]), entry["dtype"]
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptCheckpointError(f"{path}: malformed tensor entry {entry!r}") from exc
        if dtype != "f32":
            raise CorruptCheckpointError(f"{path}: {name} has unsupported dtype {dtype!r}")
        if length != 4 * int(np.prod(shape, dtype=np.int64)):
            raise CorruptCheckpointError(f"{path}: {name} byte_length {length} does not match shape {shape}")
        if off < 0 or off + length > len(payload):
            raise CorruptCheckpointError(f"{path}: {name} lies outside the payload (truncated file?)")
        out[name] = np.frombuffer(payload[off : off + length], dtype=_F32).reshape(shape).copy()
        expected_end = max(expected_end, off + length)
    if expected_end != len(payload):
        raise CorruptCheckpointError(f"{path}: payload is {len(payload)} bytes, header describes {expected_end}")
    return header, out


def save_checkpoint(model, path, extra=None):
    """Write the model's config, parameters and running statistics."""
    write_tensors(path, model.config.to_dict(), model.state(), extra=extra)


def load_checkpoint(path):
    """Return ``(ModelConfig, parameter store)``."""
    header, store = read_tensors(path)
    try:
        config = ModelConfig.from_dict(header["config"])
    except (KeyError, TypeError) as exc:
        raise CorruptCheckpointError(f"{path}: missing or invalid config") from exc
    return config, store


def load_model(path, dtype=np.float32):
    config, store = load_checkpoint(path)
    model = HourglassPose(config, dtype=dtype)
    try:
        model.load_state(store)
    except ValueError as exc:
        raise CorruptCheckpointError(f"{path}: {exc}") from exc
    return model
