"""Checkpoints: a JSON manifest next to a raw little-endian float32 payload."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import DropNasError

FORMAT = "dropnas-checkpoint"
VERSION = 1


class HashMismatch(DropNasError):
    pass


def save_checkpoint(params: dict, path, spec_hash: str, seed: int, epoch: int) -> Path:
    """Write ``path`` (manifest) and ``path`` with suffix ``.bin`` (payload)."""
    path = Path(path)
    payload = path.with_suffix(".bin")
    tensors, chunks, offset = [], [], 0
    for layer in sorted(params):
        for name in ("weight", "bias"):
            arr = np.ascontiguousarray(params[layer][name], dtype="<f4")
            tensors.append({
                "name": f"{layer}.{name}",
                "layer": int(layer),
                "param": name,
                "shape": list(arr.shape),
                "offset": offset,
            })
            chunks.append(arr.tobytes())
            offset += arr.nbytes
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "spec_hash": spec_hash,
        "seed": seed,
        "epoch": epoch,
        "dtype": "<f4",
        "payload": payload.name,
        "payload_bytes": offset,
        "tensors": tensors,
    }
    payload.write_bytes(b"".join(chunks))
    path.write_text(json.dumps(manifest, indent=2))
    return path


def load_checkpoint(path, expected_hash: str | None = None) -> tuple[dict, dict]:
    """Return ``(params, manifest)``; reject a manifest whose spec hash differs."""
    path = Path(path)
    manifest = json.loads(path.read_text())
    if manifest.get("format") != FORMAT:
        raise DropNasError(f"{path} is not a dropnas checkpoint")
    if expected_hash is not None and manifest["spec_hash"] != expected_hash:
        raise HashMismatch(
            f"checkpoint spec hash {manifest['spec_hash'][:12]} does not match "
            f"configuration hash {expected_hash[:12]}"
        )
    blob = (path.parent / manifest["payload"]).read_bytes()
    if len(blob) != manifest["payload_bytes"]:
        raise DropNasError(f"payload size {len(blob)} != {manifest['payload_bytes']} declared")
    params: dict = {}
    for t in manifest["tensors"]:
        count = int(np.prod(t["shape"]))
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=t["offset"]).reshape(t["shape"])
        params.setdefault(t["layer"], {})[t["param"]] = arr.astype(np.float32)
    return params, manifest
