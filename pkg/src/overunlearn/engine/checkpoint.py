"""Checkpoint round-tripping: JSON manifest + one raw little-endian blob per tensor.

The manifest records the architecture (layer kinds and hyperparameters), the
init seed, the dtype, and the shape plus file name of every parameter tensor
(named by layer index), so any other implementation can rebuild the model
from the directory.
"""

import json
from pathlib import Path

import numpy as np

from .layers import LayerSpec
from .model import ModelState

MANIFEST_NAME = "manifest.json"
_DTYPE_CODES = {"float64": "<f8", "float32": "<f4"}


class CheckpointError(ValueError):
    pass


def save_model(model: ModelState, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    dtype_name = np.dtype(model.dtype).name
    if dtype_name not in _DTYPE_CODES:
        raise CheckpointError(f"unsupported dtype {dtype_name}")
    entries = []
    for i, layer_params in enumerate(model.params):
        for name in sorted(layer_params):
            arr = layer_params[name]
            fname = f"layer{i:02d}_{name}.bin"
            (path / fname).write_bytes(
                np.ascontiguousarray(arr).astype(_DTYPE_CODES[dtype_name]).tobytes()
            )
            entries.append({"layer": i, "name": name,
                            "shape": list(arr.shape), "file": fname})
    manifest = {
        "format": "overunlearn-checkpoint",
        "version": 1,
        "input_shape": list(model.input_shape),
        "class_count": model.class_count,
        "rng_seed": model.rng_seed,
        "dtype": dtype_name,
        "layers": [spec.to_dict() for spec in model.layers],
        "params": entries,
    }
    (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_model(path) -> ModelState:
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.exists():
        raise FileNotFoundError(f"missing checkpoint manifest: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != "overunlearn-checkpoint":
        raise CheckpointError(f"not a checkpoint manifest: {manifest_path}")
    dtype_name = manifest["dtype"]
    code = _DTYPE_CODES.get(dtype_name)
    if code is None:
        raise CheckpointError(f"unsupported dtype {dtype_name!r} in {manifest_path}")
    layers = [LayerSpec.from_dict(d) for d in manifest["layers"]]
    params = [dict() for _ in layers]
    itemsize = np.dtype(code).itemsize
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        blob_path = path / entry["file"]
        if not blob_path.exists():
            raise FileNotFoundError(f"missing parameter blob: {blob_path}")
        raw = blob_path.read_bytes()
        expected = int(np.prod(shape)) * itemsize
        if len(raw) != expected:
            raise CheckpointError(
                f"{blob_path}: expected {expected} bytes for shape {shape}, got {len(raw)}"
            )
        arr = np.frombuffer(raw, dtype=code).astype(dtype_name).reshape(shape)
        params[entry["layer"]][entry["name"]] = arr
    return ModelState(
        layers=layers,
        params=params,
        input_shape=tuple(manifest["input_shape"]),
        class_count=manifest["class_count"],
        rng_seed=manifest["rng_seed"],
        dtype=np.dtype(dtype_name),
    )
