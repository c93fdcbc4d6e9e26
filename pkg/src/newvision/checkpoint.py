"""Checkpoint container and its binary file format.

Layout: 4-byte magic "MEDK", u32 little-endian format version (currently 1),
u32 little-endian JSON header length, the JSON header, then each tensor's
raw little-endian f32 bytes, row-major, in exactly the header's order.
The header carries the model config, step counters, corpus fingerprint,
capability flags, and the name/shape table; optimizer moments ride along
as extra tensors prefixed m:/v: so a resumed run is bit-identical.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import errors
from .model import MEDConfig, param_shapes

MAGIC = b"MEDK"
VERSION = 1


@dataclass
class Checkpoint:
    config: MEDConfig
    params: dict[str, np.ndarray]
    step: int = 0
    adam_t: int = 0
    moments: Optional[dict] = None  # {"m": {name: arr}, "v": {name: arr}}
    fingerprint: str = ""
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = param_shapes(self.config)
        if list(self.params) != list(shapes):
            raise errors.ConfigError(
                "checkpoint parameter names do not match the config")
        for name, arr in self.params.items():
            if tuple(arr.shape) != shapes[name]:
                raise errors.ShapeMismatch(
                    f"{name}: {arr.shape} vs config {shapes[name]}")
        if self.moments is not None:
            for kind in ("m", "v"):
                if list(self.moments[kind]) != list(self.params):
                    raise errors.ConfigError(
                        f"moment '{kind}' names do not match parameters")


def _entries(ckpt: Checkpoint):
    for name, arr in ckpt.params.items():
        yield f"param:{name}", arr
    if ckpt.moments is not None:
        for kind in ("m", "v"):
            for name, arr in ckpt.moments[kind].items():
                yield f"{kind}:{name}", arr


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    entries = list(_entries(ckpt))
    header = {
        "config": ckpt.config.to_dict(),
        "step": int(ckpt.step),
        "adam_t": int(ckpt.adam_t),
        "fingerprint": ckpt.fingerprint,
        "flags": dict(ckpt.flags),
        "tensors": [{"name": n, "shape": list(a.shape)}
                    for n, a in entries],
    }
    blob = json.dumps(header, separators=(",", ":")).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for _, arr in entries:
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    os.replace(tmp, path)


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise errors.TruncatedFile(f"{what}: wanted {n} bytes, "
                                   f"got {len(buf)}")
    return buf


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise errors.BadMagic(f"not a checkpoint file: {magic!r}")
        version = struct.unpack("<I", _read_exact(f, 4, "version"))[0]
        if version != VERSION:
            raise errors.UnsupportedVersion(
                f"format version {version}, supported: {VERSION}")
        hlen = struct.unpack("<I", _read_exact(f, 4, "header length"))[0]
        raw = _read_exact(f, hlen, "header")
        try:
            header = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise errors.TruncatedFile(f"header not decodable: {e}") from e

        tensors: dict[str, np.ndarray] = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            buf = _read_exact(f, count * 4, entry["name"])
            arr = np.frombuffer(buf, dtype="<f4").astype(np.float32)
            tensors[entry["name"]] = arr.reshape(shape)
        if f.read(1):
            raise errors.TruncatedFile("file longer than its header claims")

    config = MEDConfig.from_dict(header["config"])
    params = {n[len("param:"):]: a for n, a in tensors.items()
              if n.startswith("param:")}
    moments = None
    if any(n.startswith("m:") for n in tensors):
        moments = {kind: {n[len(kind) + 1:]: a for n, a in tensors.items()
                          if n.startswith(f"{kind}:")}
                   for kind in ("m", "v")}
    return Checkpoint(config=config, params=params,
                      step=int(header["step"]),
                      adam_t=int(header.get("adam_t", 0)),
                      moments=moments,
                      fingerprint=header.get("fingerprint", ""),
                      flags=dict(header.get("flags", {})))
