"""Binary checkpoint: parameters, Adam moments and RNG state.

Layout::

    8 bytes   magic b"DSEGCKPT"
    uint32    format version (little-endian)
    uint32    header length H
    H bytes   UTF-8 JSON header: widths, tensor names and shapes, Adam step,
              epoch, hyperparameters, bit-generator state
    ...       float32 tensors, row-major, in header order: parameters, then
              first moments, then second moments
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .model import LAYERS, ModelParameters, Widths

MAGIC = b"DSEGCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class TrainState:
    params: ModelParameters
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int
    epoch: int
    rng_state: dict
    hyper: dict

    @classmethod
    def fresh(cls, params: ModelParameters, rng: np.random.Generator, hyper: dict) -> "TrainState":
        zeros = {k: np.zeros_like(t) for k, t in params.tensors()}
        return cls(params, zeros, {k: z.copy() for k, z in zeros.items()}, 0, 0,
                   rng.bit_generator.state, hyper)


def _names() -> list[str]:
    return [f"{layer}.{kind}" for layer in LAYERS for kind in ("W", "b")]


def save(state: TrainState, path) -> None:
    tensors = dict(state.params.tensors())
    names = _names()
    header = {
        "widths": asdict(state.params.widths),
        "tensors": [[n, list(tensors[n].shape)] for n in names],
        "step": state.step,
        "epoch": state.epoch,
        "rng_state": state.rng_state,
        "hyper": state.hyper,
    }
    hb = json.dumps(header, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(hb)), hb]
    for group in (tensors, state.m, state.v):
        for n in names:
            parts.append(np.ascontiguousarray(group[n], dtype="<f4").tobytes())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def load(path, dtype=np.float32) -> TrainState:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[16 : 16 + hlen])
    off = 16 + hlen
    groups = []
    for _ in range(3):
        g = {}
        for name, shape in header["tensors"]:
            count = int(np.prod(shape))
            if off + 4 * count > len(data):
                raise CheckpointError(f"{path}: truncated at tensor {name}")
            g[name] = np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(shape).astype(dtype)
            off += 4 * count
        groups.append(g)
    p, m, v = groups
    widths = Widths(**header["widths"])
    params = ModelParameters(
        widths,
        {layer: p[f"{layer}.W"] for layer in LAYERS},
        {layer: p[f"{layer}.b"] for layer in LAYERS},
    )
    params.check()
    return TrainState(params, m, v, int(header["step"]), int(header["epoch"]),
                      header["rng_state"], header.get("hyper", {}))


def load_params(path, dtype=np.float32) -> ModelParameters:
    return load(path, dtype).params
