"""Checkpoint container.

``b"CKPT"``, little-endian u32 header length, a compact sorted-key JSON
header, then one TNSR blob per name in ``header["tensors"]``. Parameters are
stored under their dotted names, Adam moments under ``adam.m/<name>`` and
``adam.v/<name>``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..model import CountingModel, ModelConfig
from ..numcore import AdamState, tnsr

MAGIC = b"CKPT"


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    adam: AdamState = field(default_factory=AdamState)
    epoch: int = 0

    @classmethod
    def capture(cls, model: CountingModel, adam: AdamState, epoch: int) -> "Checkpoint":
        params = {k: p.data.copy() for k, p in model.parameters().items()}
        moments = AdamState(adam.step, {k: v.copy() for k, v in adam.m.items()},
                            {k: v.copy() for k, v in adam.v.items()})
        return cls(model.cfg, params, moments, epoch)

    def to_bytes(self) -> bytes:
        names = list(self.params)
        tensors = names + [f"adam.m/{n}" for n in names if n in self.adam.m] + [f"adam.v/{n}" for n in names if n in self.adam.v]
        header = {
            "config": self.config.to_dict(),
            "config_hash": self.config.hash(),
            "epoch": self.epoch,
            "adam_step": self.adam.step,
            "tensors": tensors,
        }
        hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        chunks = [MAGIC, struct.pack("<I", len(hb)), hb]
        for name in tensors:
            if name.startswith("adam.m/"):
                arr = self.adam.m[name[7:]]
            elif name.startswith("adam.v/"):
                arr = self.adam.v[name[7:]]
            else:
                arr = self.params[name]
            chunks.append(tnsr.encode(arr))
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Checkpoint":
        if buf[:4] != MAGIC:
            raise tnsr.FormatError("bad checkpoint magic", 0)
        (hlen,) = struct.unpack_from("<I", buf, 4)
        try:
            header = json.loads(buf[8 : 8 + hlen])
        except json.JSONDecodeError as exc:
            raise tnsr.FormatError(f"bad checkpoint header: {exc.msg}", 8 + exc.pos) from exc
        pos = 8 + hlen
        params, m, v = {}, {}, {}
        for name in header["tensors"]:
            arr, pos = tnsr.decode(buf, pos)
            if name.startswith("adam.m/"):
                m[name[7:]] = arr
            elif name.startswith("adam.v/"):
                v[name[7:]] = arr
            else:
                params[name] = arr
        if pos != len(buf):
            raise tnsr.FormatError("trailing bytes after checkpoint", pos)
        cfg = ModelConfig.from_dict(header["config"])
        if cfg.hash() != header["config_hash"]:
            raise ValueError("checkpoint config hash does not match its config")
        return cls(cfg, params, AdamState(header["adam_step"], m, v), header["epoch"])

    def save(self, path) -> str:
        data = self.to_bytes()
        Path(path).write_bytes(data)
        return hashlib.sha256(data).hexdigest()

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def build_model(self) -> CountingModel:
        model = CountingModel(self.config)
        named = model.parameters()
        missing = set(named) - set(self.params)
        if missing:
            raise ValueError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        for name, p in named.items():
            arr = self.params[name]
            if arr.shape != p.shape:
                raise ValueError(f"parameter {name}: checkpoint shape {arr.shape} vs model {p.shape}")
            p.data = arr.astype(p.data.dtype)
        return model
