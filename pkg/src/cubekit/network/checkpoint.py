"""Checkpoint directories: ``manifest.json`` plus one VOXT blob per tensor.

VOXT holds exactly five axes, so tensors are stored padded with leading
unit axes (or with leading axes merged, for the 6-axis filter banks); the
manifest records each tensor's true shape.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .. import __version__
from ..voxel import precision_name, read_voxt, write_voxt
from .graph import CubeNet, LayerGraph

FORMAT = "cubekit-checkpoint"


def _to_5d(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim <= 5:
        return a.reshape((1,) * (5 - a.ndim) + a.shape)
    return a.reshape((-1,) + a.shape[-4:])


def save_checkpoint(net: CubeNet, path, extra: dict | None = None) -> Path:
    path = Path(path)
    (path / "tensors").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (name, tensor) in enumerate(net.state_dict().items()):
        fname = f"tensors/{i:03d}_{name}.voxt"
        write_voxt(path / fname, np.ascontiguousarray(_to_5d(tensor), dtype=net.dtype))
        entries.append({"name": name, "shape": list(tensor.shape), "file": fname})
    manifest = {
        "format": FORMAT,
        "library_version": __version__,
        "graph": net.graph.to_dict(),
        "group": net.graph.group,
        "precision": precision_name(net.dtype),
        "tensors": entries,
    }
    if extra:
        manifest.update(extra)
    with open(path / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_manifest(path) -> dict:
    with open(Path(path) / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != FORMAT:
        raise ValueError(f"{path}: not a cubekit checkpoint")
    return manifest


def load_checkpoint(path) -> tuple[CubeNet, dict]:
    path = Path(path)
    manifest = read_manifest(path)
    graph = LayerGraph.from_dict(manifest["graph"])
    net = CubeNet(graph)
    state = {}
    for entry in manifest["tensors"]:
        arr = read_voxt(path / entry["file"], dtype=manifest["precision"])
        state[entry["name"]] = arr.reshape(entry["shape"])
    net.load_state_dict(state)
    return net, manifest


def checkpoint_files(path) -> list[Path]:
    """Manifest and tensor files of a checkpoint in a stable order (for byte comparisons).

    Other files in the directory, such as a run report with wall-clock timings, are skipped.
    """
    root = Path(path)
    return [root / "manifest.json"] + sorted((root / "tensors").glob("*.voxt"))


def checkpoint_bytes(path) -> bytes:
    root = Path(path)
    out = b""
    for p in checkpoint_files(root):
        out += os.fsencode(str(p.relative_to(root))) + b"\0" + p.read_bytes()
    return out
