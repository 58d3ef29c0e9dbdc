"""Voxel grids, lattice-exact rotations/translations and the VOXT file format.

Feature maps are plain ``numpy`` arrays of shape ``(C, G, D, H, W)``; batches
carry an extra leading axis. Spatial coordinates are the index triple
``(d, h, w)`` and rotations act on that column vector about the grid center.
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .symmetry import FiniteRotationGroup, RotationElement, regular_permutation

DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


def resolve_dtype(precision) -> np.dtype:
    """Map ``"f32"``/``"f64"`` (or a numpy dtype) to a float dtype."""
    if isinstance(precision, str) and precision in DTYPES:
        return np.dtype(DTYPES[precision].type)
    dt = np.dtype(precision)
    if dt not in (np.float32, np.float64):
        raise ValueError(f"unsupported precision {precision!r}; use 'f32' or 'f64'")
    return dt


def precision_name(dtype) -> str:
    return "f32" if np.dtype(dtype) == np.float32 else "f64"


def _as_matrix(R) -> np.ndarray:
    if isinstance(R, RotationElement):
        return R.array
    m = np.asarray(R)
    if m.shape != (3, 3):
        raise ValueError(f"rotation must be a 3x3 matrix, got shape {m.shape}")
    return m


def rotate_spatial(vol: np.ndarray, R) -> np.ndarray:
    """Rotate the last three axes of ``vol`` by ``R`` about the grid center.

    ``out[x] = vol[R^T (x - c_out) + c_in]``. With ``R`` a signed permutation
    this is an axis transpose plus flips, so values are moved, never mixed.
    Leading axes are carried along unchanged.
    """
    m = _as_matrix(R)
    vol = np.asarray(vol)
    if vol.ndim < 3:
        raise ValueError("rotate_spatial needs at least three (spatial) axes")
    lead = vol.ndim - 3
    src_axes = [int(np.flatnonzero(row)[0]) for row in m]
    out = vol.transpose(tuple(range(lead)) + tuple(lead + j for j in src_axes))
    flips = tuple(lead + i for i, j in enumerate(src_axes) if m[i, j] < 0)
    if flips:
        out = np.flip(out, axis=flips)
    return np.ascontiguousarray(out)


def group_axis_size(map_: np.ndarray, axis: int = -4) -> int:
    return np.asarray(map_).shape[axis]


def apply_group_action(map_: np.ndarray, group: FiniteRotationGroup, p: int, group_axis: int = -4) -> np.ndarray:
    """Act with group element ``p`` on a feature map (or batch of them).

    The spatial part (last three axes) is rotated by ``p``. If the group
    axis has size ``|G|`` it is re-indexed as ``out[g] = in[p^-1 g]``; a
    size-1 group axis is left untouched.
    """
    map_ = np.asarray(map_)
    gax = map_.shape[group_axis]
    if gax not in (1, group.order):
        raise ValueError(
            f"group axis has size {gax}, incompatible with group {group.kind.value} of order {group.order}"
        )
    out = rotate_spatial(map_, group.elements[group._check(p)])
    if gax > 1:
        out = np.take(out, regular_permutation(group, p), axis=group_axis)
    return out


def translate(vol: np.ndarray, t) -> np.ndarray:
    """Shift the last three axes by integer offset ``t``: ``out[x] = vol[x - t]``, zero fill."""
    vol = np.asarray(vol)
    t = tuple(int(v) for v in t)
    if len(t) != 3:
        raise ValueError("translation needs three components (tz, ty, tx)")
    out = np.zeros_like(vol)
    dst = [slice(None)] * (vol.ndim - 3)
    src = [slice(None)] * (vol.ndim - 3)
    for n, s in zip(vol.shape[-3:], t):
        if abs(s) >= n:
            return out
        dst.append(slice(max(s, 0), n + min(s, 0)))
        src.append(slice(max(-s, 0), n - max(s, 0)))
    out[tuple(dst)] = vol[tuple(src)]
    return out


def pad_symmetric(vol: np.ndarray, amount: int) -> np.ndarray:
    """Zero-pad the last three axes by ``amount`` on every side."""
    width = [(0, 0)] * (vol.ndim - 3) + [(amount, amount)] * 3
    return np.pad(vol, width)


# --------------------------------------------------------------------------
# VOXT binary format
# --------------------------------------------------------------------------

MAGIC = b"VOXT"
VERSION = 1
HEADER = struct.Struct("<4sIII5I")
HEADER_SIZE = HEADER.size  # 36 bytes: magic + version + dtype + ndims + 5 dims
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class VoxtError(ValueError):
    """Base class for malformed VOXT files."""


class BadMagicError(VoxtError):
    pass


class UnsupportedVersionError(VoxtError):
    pass


class TruncatedPayloadError(VoxtError):
    pass


class DtypeMismatchError(VoxtError):
    pass


def encode_voxt(map_: np.ndarray) -> bytes:
    arr = np.asarray(map_)
    if arr.ndim != 5:
        raise ValueError(f"VOXT stores 5-axis maps (C, G, D, H, W); got {arr.ndim} axes")
    if arr.dtype == np.float32:
        code = 0
    elif arr.dtype == np.float64:
        code = 1
    else:
        raise DtypeMismatchError(f"VOXT supports float32/float64, not {arr.dtype}")
    header = HEADER.pack(MAGIC, VERSION, code, 5, *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_DTYPE_CODES[code]).tobytes()


def decode_voxt(buf: bytes, dtype=None) -> np.ndarray:
    if len(buf) < HEADER.size:
        if buf[:4] != MAGIC[: len(buf[:4])]:
            raise BadMagicError("not a VOXT file")
        raise TruncatedPayloadError(f"header truncated: {len(buf)} of {HEADER.size} bytes")
    magic, version, code, ndims, *dims = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported VOXT version {version}")
    if code not in _DTYPE_CODES:
        raise DtypeMismatchError(f"unknown dtype code {code}")
    if ndims != 5:
        raise VoxtError(f"expected 5 dims, header says {ndims}")
    stored = _DTYPE_CODES[code]
    if dtype is not None and resolve_dtype(dtype) != stored:
        raise DtypeMismatchError(f"file holds {stored.name}, caller expected {resolve_dtype(dtype).name}")
    count = int(np.prod(dims))
    need = HEADER.size + count * stored.itemsize
    if len(buf) < need:
        raise TruncatedPayloadError(f"payload truncated: {len(buf)} of {need} bytes")
    if len(buf) > need:
        raise VoxtError(f"{len(buf) - need} trailing bytes after payload")
    data = np.frombuffer(buf, dtype=stored, count=count, offset=HEADER.size)
    return data.reshape(dims).astype(stored.newbyteorder("="))


def write_voxt(path, map_: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_voxt(map_))


def read_voxt(path, dtype=None) -> np.ndarray:
    """Load a map; ``dtype`` (``"f32"``/``"f64"``) asserts the stored precision."""
    with open(os.fspath(path), "rb") as fh:
        return decode_voxt(fh.read(), dtype=dtype)
