"""Parameter checkpoints: a JSON manifest plus one little-endian f64 payload.

``<base>.ckpt.json`` describes the checkpoint kind, any structured metadata,
and the tensors in a stable order (name, shape, byte offset);
``<base>.ckpt.bin`` concatenates the tensor payloads. Stable ordering means
checkpoints from identical runs are byte-identical and diff cleanly.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .data import FormatError


def _sibling(base: Path, suffix: str) -> Path:
    return base.parent / (base.name + suffix)


def tensor_dict_digest(tensors: dict[str, np.ndarray]) -> str:
    """Content hash of a named tensor collection, insensitive to memory layout."""
    h = hashlib.sha256()
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        h.update(name.encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_checkpoint(basepath, kind: str, meta: dict,
                    tensors: dict[str, np.ndarray]) -> None:
    """Write ``<base>.ckpt.json`` + ``<base>.ckpt.bin`` in insertion order."""
    base = Path(basepath)
    base.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    payload = bytearray()
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "offset": len(payload), "shape": list(arr.shape)})
        payload.extend(arr.tobytes())
    manifest = {"kind": kind, "meta": meta, "tensors": entries}
    _sibling(base, ".ckpt.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    _sibling(base, ".ckpt.bin").write_bytes(bytes(payload))


def load_checkpoint(basepath, expect_kind: str | None = None
                    ) -> tuple[str, dict, dict[str, np.ndarray]]:
    """Read a checkpoint; returns (kind, meta, tensors)."""
    base = Path(basepath)
    manifest_path = _sibling(base, ".ckpt.json")
    if not manifest_path.exists():
        raise FileNotFoundError(str(manifest_path))
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{manifest_path}: invalid JSON: {e}") from e
    for key in ("kind", "meta", "tensors"):
        if key not in manifest:
            raise FormatError(f"{manifest_path}: manifest missing {key!r}")
    if expect_kind is not None and manifest["kind"] != expect_kind:
        raise FormatError(
            f"{manifest_path}: checkpoint kind {manifest['kind']!r}, expected {expect_kind!r}"
        )
    payload_path = _sibling(base, ".ckpt.bin")
    if not payload_path.exists():
        raise FileNotFoundError(str(payload_path))
    payload = payload_path.read_bytes()
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        shape = tuple(int(s) for s in entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = int(entry["offset"])
        end = start + size * 8
        if end > len(payload):
            raise FormatError(
                f"{payload_path}: tensor {entry['name']!r} needs bytes [{start}, {end}), "
                f"payload has {len(payload)}"
            )
        tensors[entry["name"]] = (
            np.frombuffer(payload[start:end], dtype="<f8").reshape(shape).copy()
        )
    return manifest["kind"], manifest["meta"], tensors
