"""Checkpoint container.

Layout::

    b"CPLM1" | uint64 LE header length | JSON header | float32 LE payload

The header carries the model config, epoch, slopes and a parameter manifest
(name, shape, byte offset into the payload) in payload order.
"""

from __future__ import annotations

import base64
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError
from .model import ModelConfig, TransformerLM

MAGIC = b"CPLM1"


@dataclass
class Checkpoint:
    epoch: int
    weights: dict[str, np.ndarray]
    config: ModelConfig
    schedule_slope_at_save: float | None = None
    train_slope: float | None = None
    schedule: dict | None = None
    rng_state: bytes = b""
    extra: dict = field(default_factory=dict)

    @property
    def inference_slopes(self) -> list[float] | None:
        """Per-head slopes the weights were trained under during their last epoch."""
        return self.extra.get("inference_slopes")

    def build(self, dtype=torch.float32) -> TransformerLM:
        model = TransformerLM(self.config)
        state = {k: torch.from_numpy(v.copy()) for k, v in self.weights.items()}
        missing, unexpected = model.load_state_dict(state, strict=False)
        if missing or unexpected:
            raise CheckpointError(f"parameter mismatch: missing={missing} unexpected={unexpected}")
        return model.to(dtype).eval()


def save_checkpoint(path, model: TransformerLM, epoch: int, *, slope=None, train_slope=None,
                    schedule=None, rng_state: bytes | None = None, extra=None) -> Path:
    path = Path(path)
    manifest = []
    chunks = []
    offset = 0
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"parameter {name} has non-finite values")
        blob = arr.tobytes(order="C")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)})
        chunks.append(blob)
        offset += len(blob)
    if rng_state is None:
        rng_state = torch.get_rng_state().numpy().tobytes()
    header = {
        "format": MAGIC.decode(),
        "config": model.config.to_dict(),
        "epoch": epoch,
        "slope": slope,
        "train_slope": train_slope,
        "schedule": schedule,
        "rng_state": base64.b64encode(rng_state).decode("ascii"),
        "params": manifest,
        "extra": extra or {},
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for blob in chunks:
            fh.write(blob)
    tmp.replace(path)
    return path


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:len(MAGIC)]!r}")
    (n,) = struct.unpack_from("<Q", data, len(MAGIC))
    start = len(MAGIC) + 8
    header = json.loads(data[start : start + n].decode("utf-8"))
    payload = memoryview(data)[start + n :]
    weights = {}
    for entry in header["params"]:
        lo, hi = entry["offset"], entry["offset"] + entry["nbytes"]
        if hi > len(payload):
            raise CheckpointError(f"{path}: truncated payload for {entry['name']}")
        arr = np.frombuffer(payload[lo:hi], dtype="<f4").reshape(entry["shape"])
        if entry["name"] in weights:
            raise CheckpointError(f"{path}: duplicate parameter {entry['name']}")
        weights[entry["name"]] = arr
    return Checkpoint(
        epoch=header["epoch"],
        weights=weights,
        config=ModelConfig(**header["config"]),
        schedule_slope_at_save=header.get("slope"),
        train_slope=header.get("train_slope"),
        schedule=header.get("schedule"),
        rng_state=base64.b64decode(header.get("rng_state", "")),
        extra=header.get("extra", {}),
    )
