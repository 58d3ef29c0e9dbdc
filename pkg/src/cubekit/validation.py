"""Input validation helpers shared by the layers and the estimator."""
from __future__ import annotations

import numpy as np


def check_padding(padding: str) -> str:
    if padding not in ("same", "valid"):
        raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
    return padding


def check_feature_map(x: np.ndarray, batched: bool = False) -> np.ndarray:
    """Assert ``x`` is a ``(C, G, D, H, W)`` map (``(N, C, G, D, H, W)`` if batched)."""
    x = np.asarray(x)
    ndim = 6 if batched else 5
    if x.ndim != ndim:
        layout = "(N, C, G, D, H, W)" if batched else "(C, G, D, H, W)"
        raise ValueError(f"expected a feature map of layout {layout}, got shape {x.shape}")
    if min(x.shape) < 1:
        raise ValueError(f"feature map has an empty axis: {x.shape}")
    if not np.issubdtype(x.dtype, np.floating):
        raise TypeError(f"feature maps must be floating point, got {x.dtype}")
    return x


def check_filter_bank(w: np.ndarray) -> np.ndarray:
    """Assert ``w`` is a ``(K, I, G, k, k, k)`` bank with odd cubic kernels."""
    w = np.asarray(w)
    if w.ndim != 6:
        raise ValueError(f"expected a filter bank (K, I, G, k, k, k), got shape {w.shape}")
    k = w.shape[-1]
    if w.shape[-3:] != (k, k, k):
        raise ValueError(f"kernels must be cubic, got {w.shape[-3:]}")
    if k % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {k}")
    return w


def check_cubic(x: np.ndarray) -> np.ndarray:
    sp = np.asarray(x).shape[-3:]
    if not (sp[0] == sp[1] == sp[2]):
        raise ValueError(f"rotation equivariance needs cubic grids, got spatial shape {sp}")
    return x


def check_voxel_batch(X, dtype=np.float64) -> np.ndarray:
    """Coerce estimator input to a batch of raw maps ``(N, C, 1, D, H, W)``.

    Accepts ``(N, D, H, W)`` occupancy grids, ``(N, C, D, H, W)`` multi-channel
    grids or already-lifted ``(N, C, 1, D, H, W)`` batches.
    """
    X = np.asarray(X)
    if X.ndim == 4:
        X = X[:, None, None]
    elif X.ndim == 5:
        X = X[:, :, None]
    elif X.ndim != 6:
        raise ValueError(f"expected voxel batch with 4, 5 or 6 axes, got shape {X.shape}")
    if X.shape[2] != 1:
        raise ValueError(f"raw inputs must have a group axis of size 1, got {X.shape[2]}")
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    if not np.all(np.isfinite(X)):
        raise ValueError("input contains NaN or infinity")
    check_cubic(X)
    return np.ascontiguousarray(X, dtype=dtype)


def check_labels(y, n_samples: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n_samples:
        raise ValueError(f"labels must be a vector of length {n_samples}, got shape {y.shape}")
    return y
