"""Binary checkpoint format with bit-exact round trips.

Layout (little-endian):

    bytes 0..3    magic ``MNCK``
    bytes 4..7    format version (u32)
    bytes 8..11   header length in bytes (u32)
    header        UTF-8 JSON: architecture config, run seed, training
                  cursor (epoch, best validation loss, alpha state) and a
                  tensor directory of {name, shape, offset, kind}
    blob          raw float32 data, one tensor after another

Raw float32 bytes round-trip exactly; no timestamps are embedded, so a
rerun with the same seed produces a byte-identical file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError
from .model import MiniNet, ModelConfig

MAGIC = b"MNCK"
VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    seed: int
    cursor: dict = field(default_factory=dict)
    tensors: dict = field(default_factory=dict)  # name -> float32 ndarray
    kinds: dict = field(default_factory=dict)    # name -> "param" | "buffer"

    @classmethod
    def from_model(cls, model: MiniNet, cursor: dict | None = None) -> "Checkpoint":
        tensors = {}
        kinds = {}
        for name, t in model.named_parameters():
            tensors[name] = t.data.copy()
            kinds[name] = "param"
        for name, b in model.named_buffers():
            tensors[name] = b.copy()
            kinds[name] = "buffer"
        return cls(model.config, model.seed, dict(cursor or {}), tensors, kinds)

    def build_model(self) -> MiniNet:
        model = MiniNet(self.config, seed=self.seed)
        restore_model(model, self)
        return model


def restore_model(model: MiniNet, ckpt: Checkpoint) -> None:
    if model.config != ckpt.config:
        raise CheckpointError(
            f"checkpoint architecture {ckpt.config.to_dict()} does not match "
            f"requested config {model.config.to_dict()}"
        )
    expected = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    for name, arr in ckpt.tensors.items():
        if name in expected:
            target = expected.pop(name).data
        elif name in buffers:
            target = buffers.pop(name)
        else:
            raise CheckpointError(f"checkpoint tensor {name!r} has no home in the model")
        if target.shape != arr.shape:
            raise CheckpointError(
                f"checkpoint tensor {name!r} shape {arr.shape} does not match "
                f"model shape {target.shape}"
            )
        target[...] = arr
    leftovers = list(expected) + list(buffers)
    if leftovers:
        raise CheckpointError(f"checkpoint is missing tensors: {leftovers[:3]}")


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    directory = []
    offset = 0
    blobs = []
    for name, arr in ckpt.tensors.items():
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        directory.append({"name": name, "shape": list(arr.shape),
                          "offset": offset, "kind": ckpt.kinds.get(name, "param")})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({
        "config": ckpt.config.to_dict(),
        "seed": ckpt.seed,
        "cursor": ckpt.cursor,
        "tensors": directory,
        "blob_bytes": offset,
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(VERSION.to_bytes(4, "little"))
        fh.write(len(header).to_bytes(4, "little"))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != MAGIC:
        raise CheckpointError(
            f"{path}: not a checkpoint (bad magic); version check failed"
        )
    version = int.from_bytes(data[4:8], "little")
    if version != VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {version}, expected {VERSION}"
        )
    header_len = int.from_bytes(data[8:12], "little")
    if len(data) < 12 + header_len:
        raise CheckpointError(f"{path}: truncated checkpoint (header cut short)")
    try:
        header = json.loads(data[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint header: {exc}") from None
    blob = data[12 + header_len:]
    if len(blob) < int(header.get("blob_bytes", 0)):
        raise CheckpointError(f"{path}: truncated checkpoint (data cut short)")

    config = ModelConfig.from_dict(header["config"])
    if expected_config is not None and config != expected_config:
        raise CheckpointError(
            f"{path}: checkpoint architecture {config.to_dict()} does not match "
            f"requested config {expected_config.to_dict()}"
        )
    tensors = {}
    kinds = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(blob):
            raise CheckpointError(
                f"{path}: truncated checkpoint (tensor {entry['name']!r} cut short)"
            )
        arr = np.frombuffer(blob[start:end], dtype="<f4").reshape(shape).copy()
        tensors[entry["name"]] = arr
        kinds[entry["name"]] = entry.get("kind", "param")
    return Checkpoint(config, int(header["seed"]), dict(header.get("cursor", {})),
                      tensors, kinds)
