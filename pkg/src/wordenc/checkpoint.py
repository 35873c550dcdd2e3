"""Bit-exact checkpoint persistence.

A checkpoint is a directory holding ``manifest.json`` and ``tensors.bin``:
the manifest records the format version, the model config, the mode, and a
tensor directory mapping each name to dtype, shape, byte offset, and byte
length; the blob concatenates the tensors' little-endian float32 data in
lexicographic name order.  Saving is deterministic, so two saves of the same
model are byte-identical; all writes go through a temp-file-then-rename so
interrupted runs never leave a corrupt checkpoint.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .fileio import atomic_write_bytes, atomic_write_text
from .model import ModelConfig, named_shapes
from .params import ParameterStore

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
BLOB_NAME = "tensors.bin"
BLOB_DTYPE = "<f4"


def save_checkpoint(params: ParameterStore, config: ModelConfig, path) -> None:
    """Serialize params+config into ``path`` (created as a directory)."""
    expected = named_shapes(config)
    names = sorted(expected)
    missing = [n for n in names if n not in params]
    extra = [n for n in params.names() if n not in expected]
    if missing or extra:
        raise ValueError(f"named-tensor set mismatch: missing={missing}, extra={extra}")

    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blob = bytearray()
    directory = {}
    for name in names:
        arr = params[name].data
        if tuple(arr.shape) != tuple(expected[name]):
            raise ValueError(f"{name}: shape {arr.shape} != config shape {expected[name]}")
        raw = np.ascontiguousarray(arr, dtype=BLOB_DTYPE).tobytes()
        directory[name] = {
            "dtype": BLOB_DTYPE,
            "shape": list(arr.shape),
            "offset": len(blob),
            "nbytes": len(raw),
        }
        blob.extend(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "mode": config.mode,
        "config": config.to_dict(),
        "tensors": directory,
    }
    atomic_write_bytes(path / BLOB_NAME, bytes(blob))
    atomic_write_text(path / MANIFEST_NAME, json.dumps(manifest, indent=2, sort_keys=True))


def load_checkpoint(path, expected_mode: str | None = None) -> tuple[ParameterStore, ModelConfig]:
    """Materialize a checkpoint; fails loudly on any inconsistency."""
    path = Path(path)
    with open(path / MANIFEST_NAME, encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {manifest.get('format_version')!r}")
    config = ModelConfig.from_dict(manifest["config"])
    if manifest["mode"] != config.mode:
        raise ValueError("manifest mode disagrees with its config")
    if expected_mode is not None and config.mode != expected_mode:
        raise ValueError(
            f"checkpoint mode {config.mode!r} does not match requested mode {expected_mode!r}"
        )

    expected = named_shapes(config)
    directory = manifest["tensors"]
    if set(directory) != set(expected):
        unknown = sorted(set(directory) - set(expected))
        missing = sorted(set(expected) - set(directory))
        raise ValueError(f"tensor directory mismatch: unknown={unknown}, missing={missing}")

    blob = (path / BLOB_NAME).read_bytes()
    params = ParameterStore()
    prev_end = 0
    for name in sorted(directory):
        entry = directory[name]
        if tuple(entry["shape"]) != tuple(expected[name]):
            raise ValueError(f"{name}: stored shape {entry['shape']} != config shape {expected[name]}")
        offset, nbytes = entry["offset"], entry["nbytes"]
        if offset < prev_end:
            raise ValueError(f"{name}: overlapping or unordered blob offsets")
        if offset + nbytes > len(blob):
            raise ValueError(f"{name}: blob truncated ({offset + nbytes} > {len(blob)} bytes)")
        want = int(np.prod(entry["shape"])) * np.dtype(entry["dtype"]).itemsize
        if want != nbytes:
            raise ValueError(f"{name}: byte length {nbytes} != shape size {want}")
        arr = np.frombuffer(blob, dtype=entry["dtype"], count=int(np.prod(entry["shape"])),
                            offset=offset).reshape(entry["shape"]).copy()
        params.add(name, arr)
        prev_end = offset + nbytes
    if prev_end != len(blob):
        raise ValueError(f"blob has {len(blob) - prev_end} trailing bytes")
    return params, config
