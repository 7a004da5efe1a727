"""Denoiser checkpoints: a JSON manifest next to a raw little-endian float32 blob.

Values are stored and loaded as float32: load(save(p)) == p bit for bit when p
is float32, and any save/load/save cycle reproduces the blob byte for byte.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .denoiser import DenoiserConfig, Params, param_shapes

FORMAT_VERSION = 1
DTYPE = "<f4"


@dataclass
class Checkpoint:
    params: Params
    config: DenoiserConfig
    meta: dict = field(default_factory=dict)


def _paths(path) -> tuple[Path, Path]:
    path = Path(path)
    if path.suffix != ".json":
        path = path.with_name(path.name + ".json")
    return path, path.with_suffix(".bin")


def save_checkpoint(path, params: Params, config: DenoiserConfig, meta: dict | None = None) -> Path:
    manifest_path, blob_path = _paths(path)
    expected = param_shapes(config)
    if expected.keys() != params.keys():
        raise ValueError("parameter names do not match the denoiser config")
    tensors, chunks, offset = [], [], 0
    for name, shape in expected.items():
        arr = np.asarray(params[name])
        if arr.shape != shape:
            raise ValueError(f"{name}: shape {arr.shape} != {shape}")
        data = np.ascontiguousarray(arr, dtype=DTYPE).tobytes()
        tensors.append({"name": name, "shape": list(shape), "offset": offset, "count": int(arr.size)})
        chunks.append(data)
        offset += len(data)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    blob_path.write_bytes(b"".join(chunks))
    manifest = {
        "format_version": FORMAT_VERSION,
        "dtype": "float32-le",
        "blob": blob_path.name,
        "config": config.to_dict(),
        "tensors": tensors,
        "meta": meta or {},
    }
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest_path


def load_checkpoint(path) -> Checkpoint:
    manifest_path, _ = _paths(path)
    if not manifest_path.exists():
        raise FileNotFoundError(f"checkpoint manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {manifest.get('format_version')}")
    blob = (manifest_path.parent / manifest["blob"]).read_bytes()
    params = {}
    for t in manifest["tensors"]:
        arr = np.frombuffer(blob, dtype=DTYPE, count=t["count"], offset=t["offset"])
        params[t["name"]] = arr.reshape(t["shape"]).copy()
    config = DenoiserConfig(**manifest["config"])
    if param_shapes(config).keys() != params.keys():
        raise ValueError("checkpoint tensors do not match its config")
    return Checkpoint(params=params, config=config, meta=manifest.get("meta", {}))
