"""Synthetic polycube benchmark for rotation generalisation.

Training samples are shapes in their canonical orientation with small random
translations; the test split holds every test shape under every rotation of
the configured group. A model only generalises to the rotated test views if
its invariance is built in.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .symmetry import GroupKind, as_group, generate_group
from .voxel import apply_group_action, read_voxt, write_voxt

# (z, y, x) cells; the last two classes are mirror images of each other,
# so only rotations, not reflections, keep them apart.
PENTACUBES = {
    "L": [(0, 0, 0), (1, 0, 0), (2, 0, 0), (3, 0, 0), (3, 1, 0)],
    "T": [(0, 0, 0), (0, 1, 0), (0, 2, 0), (1, 1, 0), (2, 1, 0)],
    "P": [(0, 0, 0), (0, 1, 0), (1, 0, 0), (1, 1, 0), (2, 0, 0)],
    "screw_right": [(0, 0, 0), (1, 0, 0), (1, 1, 0), (1, 1, 1), (2, 1, 1)],
    "screw_left": [(0, 0, 0), (1, 0, 0), (1, 1, 0), (1, 1, -1), (2, 1, -1)],
}


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class PolycubeClass:
    id: int
    name: str
    cells: tuple[tuple[int, int, int], ...]

    @classmethod
    def make(cls, id: int, name: str, cells) -> "PolycubeClass":
        c = np.asarray(cells, dtype=np.int64)
        c = c - c.min(axis=0)
        return cls(id, name, tuple(sorted(tuple(int(v) for v in row) for row in c)))

    @property
    def extent(self) -> tuple[int, int, int]:
        c = np.asarray(self.cells)
        return tuple(int(v) for v in c.max(axis=0) + 1)

    def is_connected(self) -> bool:
        cells = set(self.cells)
        start = next(iter(cells))
        seen, stack = {start}, [start]
        while stack:
            z, y, x = stack.pop()
            for d in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
                nb = (z + d[0], y + d[1], x + d[2])
                if nb in cells and nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == len(cells)


def _normalise(cells: np.ndarray) -> frozenset:
    cells = cells - cells.min(axis=0)
    return frozenset(tuple(int(v) for v in row) for row in cells)


def orbit(shape: PolycubeClass, group) -> set[frozenset]:
    """All translation-normalised poses of ``shape`` under ``group``."""
    cells = np.asarray(shape.cells)
    return {_normalise(cells @ m.T) for m in as_group(group).matrices}


def check_well_posed(classes, group) -> None:
    """Raise if two classes are related by a rotation of ``group``."""
    orbits = [orbit(c, group) for c in classes]
    for i in range(len(classes)):
        if not classes[i].is_connected():
            raise DatasetError(f"class {classes[i].name!r} is not face-connected")
        for j in range(i + 1, len(classes)):
            if orbits[i] & orbits[j]:
                raise DatasetError(f"classes {classes[i].name!r} and {classes[j].name!r} are rotation-equivalent")


def default_classes() -> list[PolycubeClass]:
    return [PolycubeClass.make(i, name, cells) for i, (name, cells) in enumerate(PENTACUBES.items())]


@dataclass
class DatasetManifest:
    grid: int = 9
    group: str = "S4"
    classes: list = field(default_factory=lambda: list(PENTACUBES))
    n_train: int = 100
    n_test_base: int = 20
    max_translation: int = 2
    seed: int = 0
    low: float = -1.0
    high: float = 5.0
    max_retries: int = 100

    def __post_init__(self):
        self.group = GroupKind.parse(self.group).value

    def class_objects(self) -> list[PolycubeClass]:
        out = []
        for i, c in enumerate(self.classes):
            if isinstance(c, str):
                if c not in PENTACUBES:
                    raise DatasetError(f"unknown polycube class {c!r}")
                out.append(PolycubeClass.make(i, c, PENTACUBES[c]))
            else:
                out.append(PolycubeClass.make(i, c["name"], c["cells"]))
        return out

    def validate(self) -> None:
        if self.n_train < 1 or self.n_test_base < 1:
            raise DatasetError("per-split sample counts must be positive")
        if self.max_translation < 0:
            raise DatasetError("max_translation must be non-negative")
        classes = self.class_objects()
        if len(classes) < 2:
            raise DatasetError("need at least two classes")
        largest = max(max(c.extent) for c in classes)
        if self.grid < largest + 2 * self.max_translation:
            raise DatasetError(
                f"grid {self.grid} too small: largest extent {largest} + 2*{self.max_translation} translation"
            )
        check_well_posed(classes, self.group)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["classes"] = [{"name": c.name, "cells": [list(x) for x in c.cells]} for c in self.class_objects()]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(**d)


@dataclass
class PolycubeSplit:
    """Samples ``X (n, 1, 1, N, N, N)`` with labels, applied rotation and base-sample ids."""

    X: np.ndarray
    y: np.ndarray
    rotation: np.ndarray
    base: np.ndarray

    def __len__(self) -> int:
        return len(self.y)

    def canonical(self) -> "PolycubeSplit":
        m = self.rotation == 0
        return PolycubeSplit(self.X[m], self.y[m], self.rotation[m], self.base[m])


def voxelize(shape: PolycubeClass, grid: int, offset, low: float, high: float, dtype=np.float32) -> np.ndarray:
    vol = np.full((grid, grid, grid), low, dtype=dtype)
    cells = np.asarray(shape.cells) + np.asarray(offset)
    vol[cells[:, 0], cells[:, 1], cells[:, 2]] = high
    return vol


def _place(shape: PolycubeClass, m: DatasetManifest, rng) -> np.ndarray:
    ext = np.asarray(shape.extent)
    centre = (m.grid - ext) // 2
    for _ in range(m.max_retries):
        t = rng.integers(-m.max_translation, m.max_translation + 1, size=3)
        lo = centre + t
        if np.all(lo >= 0) and np.all(lo + ext <= m.grid):
            return voxelize(shape, m.grid, lo, m.low, m.high)
    raise DatasetError(f"could not place {shape.name!r} inside a {m.grid}^3 grid after {m.max_retries} draws")


def generate_dataset(manifest: DatasetManifest) -> tuple[PolycubeSplit, PolycubeSplit]:
    """Build ``(train, test)``; a pure function of ``manifest``.

    Occupancy is written directly in the ``(low, high)`` encoding; rotations
    happen after encoding, which is exact since they only move voxels.
    """
    manifest.validate()
    rng = np.random.default_rng(manifest.seed)
    classes = manifest.class_objects()
    group = generate_group(manifest.group)

    train_X, train_y = [], []
    for c in classes:
        for _ in range(manifest.n_train):
            train_X.append(_place(c, manifest, rng))
            train_y.append(c.id)
    base_X, base_y = [], []
    for c in classes:
        for _ in range(manifest.n_test_base):
            base_X.append(_place(c, manifest, rng))
            base_y.append(c.id)

    n_train = len(train_y)
    train = PolycubeSplit(
        np.stack(train_X)[:, None, None], np.asarray(train_y, dtype=np.int64),
        np.zeros(n_train, dtype=np.int64), np.arange(n_train, dtype=np.int64),
    )
    test_X, test_y, test_r, test_b = [], [], [], []
    for b, (vol, label) in enumerate(zip(base_X, base_y)):
        for p in range(group.order):
            test_X.append(apply_group_action(vol[None, None], group, p))
            test_y.append(label)
            test_r.append(p)
            test_b.append(b)
    test = PolycubeSplit(np.stack(test_X), np.asarray(test_y, dtype=np.int64),
                         np.asarray(test_r, dtype=np.int64), np.asarray(test_b, dtype=np.int64))
    return train, test


# --------------------------------------------------------------------------
# on-disk layout: manifest.json, labels.csv, samples/<id>.voxt
# --------------------------------------------------------------------------

LABEL_FIELDS = ("sample_id", "class_id", "group_element", "base_id")


def save_dataset(path, manifest: DatasetManifest, train: PolycubeSplit, test: PolycubeSplit) -> Path:
    root = Path(path)
    (root / "samples").mkdir(parents=True, exist_ok=True)
    with open(root / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(root / "labels.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LABEL_FIELDS)
        for split_name, split in (("train", train), ("test", test)):
            for i in range(len(split)):
                sid = f"{split_name}_{i:05d}"
                write_voxt(root / "samples" / f"{sid}.voxt", split.X[i])
                writer.writerow([sid, int(split.y[i]), int(split.rotation[i]), int(split.base[i])])
    return root


def load_dataset(path) -> tuple[DatasetManifest, PolycubeSplit, PolycubeSplit]:
    root = Path(path)
    if not (root / "manifest.json").is_file():
        raise FileNotFoundError(f"{root}: no manifest.json")
    with open(root / "manifest.json", encoding="utf-8") as fh:
        manifest = DatasetManifest.from_dict(json.load(fh))
    rows = {"train": [], "test": []}
    with open(root / "labels.csv", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            rows[row["sample_id"].split("_")[0]].append(row)

    def build(rs):
        X = np.stack([read_voxt(root / "samples" / f"{r['sample_id']}.voxt") for r in rs])
        ints = lambda k: np.asarray([int(r[k]) for r in rs], dtype=np.int64)  # noqa: E731
        return PolycubeSplit(X, ints("class_id"), ints("group_element"), ints("base_id"))

    return manifest, build(rows["train"]), build(rows["test"])


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------

@dataclass
class EvalReport:
    group: str
    per_rotation: list[float]
    single_view: float
    rotation_averaged: float
    canonical: float
    rotated: float
    n_samples: int

    def as_dict(self) -> dict:
        return asdict(self)


def _proba(model, X, batch_size=64):
    net = getattr(model, "net_", model)
    return net.predict_proba(X, batch_size=batch_size)


def evaluate(model, test: PolycubeSplit, group) -> EvalReport:
    """Accuracy per applied rotation plus single-view and rotation-averaged totals.

    ``single_view`` averages over all test views; ``rotation_averaged``
    classifies each base sample by its softmax averaged over its rotated
    copies. ``rotated`` is the accuracy over non-identity rotations.
    """
    group = as_group(group)
    proba = _proba(model, test.X)
    pred = np.argmax(proba, axis=1)
    hit = pred == test.y
    per_rot = []
    for p in range(group.order):
        m = test.rotation == p
        per_rot.append(float(hit[m].mean()) if m.any() else float("nan"))
    bases = np.unique(test.base)
    avg_hits = []
    for b in bases:
        m = test.base == b
        avg_hits.append(np.argmax(proba[m].mean(axis=0)) == test.y[m][0])
    rotated = test.rotation != 0
    return EvalReport(
        group=group.kind.value,
        per_rotation=per_rot,
        single_view=float(hit.mean()),
        rotation_averaged=float(np.mean(avg_hits)),
        canonical=float(hit[~rotated].mean()) if (~rotated).any() else float("nan"),
        rotated=float(hit[rotated].mean()) if rotated.any() else float("nan"),
        n_samples=int(len(test)),
    )
