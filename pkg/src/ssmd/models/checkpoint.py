"""Versioned checkpoint container.

Layout: magic ``SSMD1``, a little-endian uint32 header length, a JSON header
(format version, model kind, S, D, named block shapes, dims), then the raw
parameter blocks as little-endian float64 in header order.  A JSON sidecar
``<path>.json`` duplicates the hyperparameters for humans and scripts.
Tabular oracles use the same container with a single ``joint`` block.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from ..core import SequenceSpec
from .hybrid import HybridConfig, HybridModel
from .tabular import TabularModel

MAGIC = b"SSMD1"


class CheckpointError(ValueError):
    pass


def _write(path: Path, header: dict, blocks: list[tuple[str, np.ndarray]]):
    header = dict(header)
    header["blocks"] = [{"name": n, "shape": list(a.shape)} for n, a in blocks]
    raw = json.dumps(header).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(raw)))
        f.write(raw)
        for _, a in blocks:
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    with open(str(path) + ".json", "w") as f:
        json.dump({k: v for k, v in header.items() if k != "blocks"}, f, indent=2)


def _read(path: Path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a checkpoint")
        (n,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(n).decode())
        blocks = {}
        for spec in header["blocks"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(8 * count)
            if len(buf) != 8 * count:
                raise CheckpointError(f"{path}: truncated block {spec['name']}")
            blocks[spec["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        if f.read(1):
            raise CheckpointError(f"{path}: trailing bytes")
    return header, blocks


def save_model(model, path):
    path = Path(path)
    if isinstance(model, TabularModel):
        header = {
            "version": 1,
            "kind": "tabular",
            "S": model.spec.S,
            "D": model.spec.D,
            "hyper": {"draft_mode": model.draft_mode, "eps": model.eps},
        }
        _write(path, header, [("joint", model.joint)])
    elif isinstance(model, HybridModel):
        header = {
            "version": 1,
            "kind": "hybrid",
            "S": model.spec.S,
            "D": model.spec.D,
            "hyper": model.cfg.to_dict(),
        }
        blocks = [(n, p.detach().numpy()) for n, p in model.net.named_parameters()]
        _write(path, header, blocks)
    else:
        raise CheckpointError(f"cannot checkpoint {type(model).__name__}")


def load_model(path):
    header, blocks = _read(Path(path))
    spec = SequenceSpec(S=int(header["S"]), D=int(header["D"]))
    if header["kind"] == "tabular":
        hyper = header["hyper"]
        return TabularModel(
            spec, blocks["joint"], draft_mode=hyper["draft_mode"], eps=hyper["eps"]
        )
    if header["kind"] == "hybrid":
        cfg = HybridConfig(**header["hyper"])
        model = HybridModel(spec, cfg)
        state = {n: torch.from_numpy(a) for n, a in blocks.items()}
        model.net.load_state_dict(state)
        return model
    raise CheckpointError(f"unknown model kind {header['kind']!r}")
