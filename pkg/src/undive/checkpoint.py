"""The ``UDCK`` checkpoint container.

Layout::

    b"UDCK" | u32 version | u32 metadata length | metadata (UTF-8 JSON) |
    float32 little-endian arrays in the order listed by metadata["arrays"]
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .imgcore import FormatError

MAGIC = b"UDCK"
VERSION = 1
STAGES = ("prior", "spatial", "temporal")


@dataclass
class ModelCheckpoint:
    stage: str
    params: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        self.params = {k: np.ascontiguousarray(v, dtype=np.float32) for k, v in self.params.items()}

    def to_bytes(self) -> bytes:
        arrays = [{"name": k, "shape": list(v.shape)} for k, v in self.params.items()]
        meta = json.dumps({"stage": self.stage, "arrays": arrays, "meta": self.meta}, sort_keys=True)
        head = meta.encode("utf-8")
        body = b"".join(v.astype("<f4").tobytes() for v in self.params.values())
        return MAGIC + struct.pack("<II", VERSION, len(head)) + head + body

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ModelCheckpoint":
        if len(blob) < 12 or blob[:4] != MAGIC:
            raise FormatError("not a UDCK checkpoint")
        version, n = struct.unpack("<II", blob[4:12])
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        try:
            head = json.loads(blob[12 : 12 + n].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError("corrupt checkpoint metadata") from exc
        offset = 12 + n
        params = {}
        for entry in head["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape, dtype=np.int64))
            chunk = blob[offset : offset + 4 * count]
            if len(chunk) != 4 * count:
                raise FormatError(f"truncated array {entry['name']}")
            params[entry["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(shape).copy()
            offset += 4 * count
        if offset != len(blob):
            raise FormatError("trailing bytes after declared arrays")
        return cls(stage=head["stage"], params=params, meta=head["meta"])

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ModelCheckpoint":
        return cls.from_bytes(Path(path).read_bytes())

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def subset(self, prefix: str) -> dict[str, np.ndarray]:
        """Parameters under ``prefix.`` with the prefix stripped."""
        p = prefix + "."
        return {k[len(p) :]: v for k, v in self.params.items() if k.startswith(p)}


def state_to_numpy(module: torch.nn.Module, prefix: str = "") -> dict[str, np.ndarray]:
    out = {}
    for k, v in module.state_dict().items():
        out[prefix + k] = v.detach().cpu().numpy().astype(np.float32)
    return out


def load_numpy_state(module: torch.nn.Module, params: dict[str, np.ndarray]) -> None:
    state = {k: torch.from_numpy(np.array(v)) for k, v in params.items()}
    module.load_state_dict(state, strict=True)


def param_hash(module: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()
