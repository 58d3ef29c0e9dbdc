"""Weight initialisation and multiplicative weight noise."""
from __future__ import annotations

import numpy as np


def fan_in(shape) -> int:
    """Inputs feeding one output unit: ``I * G * k^3`` for banks, ``in`` for dense ``(out, in)``."""
    shape = tuple(shape)
    if len(shape) < 2:
        raise ValueError(f"fan-in undefined for shape {shape}")
    return int(np.prod(shape[1:]))


def he_init(shape, seed=None, dtype=np.float64) -> np.ndarray:
    """Zero-mean Gaussian with variance ``2 / fan_in``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    std = np.sqrt(2.0 / fan_in(shape))
    return rng.normal(0.0, std, size=tuple(shape)).astype(dtype)


def noise_factors(shape, std: float, rng) -> np.ndarray:
    """Draw ``1 + eps`` with ``eps ~ N(0, std^2)``."""
    if std < 0:
        raise ValueError(f"noise std must be non-negative, got {std}")
    if std == 0:
        return np.ones(shape)
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return 1.0 + rng.normal(0.0, std, size=shape)


def weight_noise(bank: np.ndarray, std: float, seed=None) -> np.ndarray:
    """Multiply ``bank`` elementwise by ``1 + eps``.

    Applied to the base filters, before they are rotated, so every rotated
    copy sees the same perturbation and the layer stays equivariant.
    """
    bank = np.asarray(bank)
    if std == 0:
        return bank.copy()
    return (bank * noise_factors(bank.shape, std, seed)).astype(bank.dtype)
