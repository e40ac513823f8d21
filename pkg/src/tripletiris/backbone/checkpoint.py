"""Checkpoint files.

Layout (all integers little-endian)::

    b"TFCK" | u32 version | u32 config_len | config JSON (utf-8)
    | u32 n_tensors | n x (u16 name_len, name, u8 ndim, ndim x u32 dims,
      float32 data) | u32 CRC32 of everything before it

The config JSON carries the architecture and the softmax head's class names.
Parameters are stored as float32, so a float32 model round-trips exactly.
"""

import json
import struct

import numpy as np

from .._binio import Reader, pack_string, seal, unseal, write_atomic
from ..errors import ConfigMismatchError, FormatError
from .model import BackboneConfig, BackboneModel, parameter_shapes

MAGIC = b"TFCK"
VERSION = 1


def save_checkpoint(model: BackboneModel, path) -> None:
    header = json.dumps(
        {"config": model.config.to_dict(), "head_classes": list(model.head_classes)},
        sort_keys=True,
    ).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(header)), header, struct.pack("<I", len(model.params))]
    for name, value in model.params.items():
        parts.append(pack_string(name))
        parts.append(struct.pack("<B", value.ndim))
        parts.append(struct.pack(f"<{value.ndim}I", *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    write_atomic(path, seal(b"".join(parts)))


def load_checkpoint(path, config: BackboneConfig | None = None) -> BackboneModel:
    """Read a checkpoint; if ``config`` is given it must match the stored one."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = Reader(unseal(blob, MAGIC, VERSION, "checkpoint"), "checkpoint")
    (hlen,) = r.unpack("<I")
    try:
        header = json.loads(bytes(r.take(hlen)).decode("utf-8"))
        stored = BackboneConfig.from_dict(header["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"checkpoint config block is invalid: {exc}") from exc
    if config is not None and config != stored:
        raise ConfigMismatchError(f"checkpoint config {stored} does not match requested {config}")
    (count,) = r.unpack("<I")
    params = {}
    for _ in range(count):
        name = r.string()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        n = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(r.take(4 * n), dtype="<f4").astype(np.float32)
        params[name] = data.reshape(shape)
    r.done()
    expected = parameter_shapes(stored)
    if list(params) != list(expected):
        raise FormatError("checkpoint tensors do not match its config")
    return BackboneModel(stored, params, tuple(header.get("head_classes", ())))
