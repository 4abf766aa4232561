"""Binary tensor containers and JSON manifests.

A ``.raft`` file holds one float64 tensor:

    bytes 0..3   magic ``b"RAFT"``
    bytes 4..7   format version, u32 little-endian (currently 1)
    bytes 8..11  rank, u32 little-endian
    then         rank extents, u64 little-endian each
    then         payload, float64 row-major little-endian

Manifests are JSON files describing a set of containers -- either a full
parameter set (layer names, types, orientation counts, kernel sizes,
reductions) or a demo output (pyramid levels).  All JSON is written with
sorted keys and no timestamps, so identical inputs produce byte-identical
files; that is what makes the demo-determinism check meaningful.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .groupequiv import GroupConvParams, LiftConvParams, ReFeatureMap
from .pyramid import PyramidConfig, PyramidParams, init_pyramid, named_parameters
from .reaff import ChannelMLPParams, MSCAMParams, PlainIAFFParams, ReAFFParams, ReMParams
from .reca import ReCAParams, SEParams
from .tensor import Tensor

__all__ = [
    "FormatError",
    "write_raft",
    "read_raft",
    "write_json",
    "save_pyramid_params",
    "load_pyramid_params",
    "save_feature_maps",
]

MAGIC = b"RAFT"
VERSION = 1
_HEADER = struct.Struct("<4sII")


class FormatError(ValueError):
    """A container file violates the documented byte layout."""


def write_raft(path, value) -> None:
    """Serialize a Tensor / ndarray to one container file."""
    arr = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
    # note: ascontiguousarray would promote rank-0 tensors to rank 1
    arr = np.asarray(arr, dtype="<f8", order="C")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        f.write(arr.tobytes())


def read_raft(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, rank = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    offset = _HEADER.size
    if len(raw) < offset + 8 * rank:
        raise FormatError(f"{path}: truncated extents for rank {rank}")
    shape = struct.unpack_from(f"<{rank}Q", raw, offset)
    offset += 8 * rank
    count = int(np.prod(shape, dtype=np.uint64)) if rank else 1
    expected = offset + 8 * count
    if len(raw) != expected:
        raise FormatError(f"{path}: payload is {len(raw) - offset} bytes, expected {8 * count}")
    return np.frombuffer(raw, dtype="<f8", offset=offset).astype(np.float64).reshape(shape)


def write_json(path, payload: dict) -> None:
    """Canonical JSON: sorted keys, fixed separators, trailing newline."""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _tensor_filename(dotted: str) -> str:
    """params.stages[0][1].weight -> stages.0.1.weight.raft"""
    name = dotted.removeprefix("params.")
    return name.replace("[", ".").replace("]", "") + ".raft"


def _layer_records(name: str, obj) -> list[dict]:
    """Flatten nested parameter objects into manifest layer descriptions."""
    if obj is None:
        return []
    if isinstance(obj, LiftConvParams):
        k_out, c_in, kh, _ = obj.weight.shape
        return [{"name": name, "type": "lift_conv", "k_out": k_out, "c_in": c_in,
                 "kernel_size": kh}]
    if isinstance(obj, GroupConvParams):
        k_out, k_in, n, kh, _ = obj.weight.shape
        return [{"name": name, "type": "group_conv", "k_out": k_out, "k_in": k_in,
                 "orientations": n, "kernel_size": kh}]
    if isinstance(obj, ReCAParams):
        return [{"name": name, "type": "reca", "channels": obj.channels,
                 "orientations": obj.orientations, "r": obj.r}]
    if isinstance(obj, SEParams):
        reduced, c = obj.w1.shape
        return [{"name": name, "type": "se", "channels": c, "r": c // reduced}]
    if isinstance(obj, ChannelMLPParams):
        reduced, c = obj.w1.shape
        return [{"name": name, "type": "channel_mlp", "channels": c, "r": c // reduced}]
    if isinstance(obj, (ReMParams, MSCAMParams, ReAFFParams, PlainIAFFParams)):
        out = []
        for f in dataclasses.fields(obj):
            out.extend(_layer_records(f"{name}.{f.name}", getattr(obj, f.name)))
        return out
    if isinstance(obj, (tuple, list)):
        out = []
        for i, item in enumerate(obj):
            out.extend(_layer_records(f"{name}[{i}]", item))
        return out
    raise FormatError(f"cannot describe parameter object of type {type(obj).__name__}")


def save_pyramid_params(params: PyramidParams, out_dir) -> Path:
    """Write every tensor as a container plus one manifest.json; returns the dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for dotted, tensor in named_parameters(params):
        filename = _tensor_filename(dotted)
        write_raft(out / filename, tensor)
        entries.append({"name": dotted.removeprefix("params."), "file": filename,
                        "shape": list(tensor.shape)})
    layers = []
    for field in ("stem", "stages", "lateral", "smooth", "attention"):
        layers.extend(_layer_records(field, getattr(params, field)))
    write_json(out / "manifest.json", {
        "kind": "pyramid-params",
        "version": VERSION,
        "config": dataclasses.asdict(params.config),
        "layers": layers,
        "tensors": entries,
    })
    return out


def load_pyramid_params(in_dir) -> PyramidParams:
    """Rebuild a parameter set from save_pyramid_params output.

    The structure is reconstructed from the config echo, then every tensor is
    overwritten from its container; a round trip is value-exact.
    """
    src = Path(in_dir)
    manifest = json.loads((src / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("kind") != "pyramid-params":
        raise FormatError(f"{src}: manifest kind {manifest.get('kind')!r}")
    params = init_pyramid(PyramidConfig(**manifest["config"]))
    stored = {e["name"]: e["file"] for e in manifest["tensors"]}
    for dotted, tensor in named_parameters(params):
        key = dotted.removeprefix("params.")
        if key not in stored:
            raise FormatError(f"{src}: manifest missing tensor {key}")
        container = src / stored[key]
        if not container.is_file():
            raise FormatError(f"{src}: missing container {stored[key]}")
        arr = read_raft(container)
        if arr.shape != tensor.shape:
            raise FormatError(
                f"{src}: tensor {key} shaped {arr.shape}, expected {tensor.shape}"
            )
        tensor.data[...] = arr
    return params


def save_feature_maps(maps: list[ReFeatureMap], out_dir, extra: dict | None = None) -> Path:
    """Write pyramid levels as level0.raft.., plus a manifest echoing metadata."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    levels = []
    for i, fm in enumerate(maps):
        filename = f"level{i}.raft"
        write_raft(out / filename, fm.data)
        levels.append({
            "file": filename,
            "shape": list(fm.shape),
            "kernel_channels": fm.kernel_channels,
            "orientations": fm.orientations,
        })
    payload = {"kind": "feature-maps", "version": VERSION, "levels": levels}
    if extra:
        payload.update(extra)
    write_json(out / "manifest.json", payload)
    return out
