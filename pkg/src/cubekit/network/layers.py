"""Equivariance-preserving layers with hand-written backward passes.

Every layer works on batches. Group-structured activations are
``(N, C, G, D, H, W)``; pooled signatures are ``(N, C, G)``; vectors are
``(N, F)``. ``forward`` caches what ``backward`` needs, so a layer object
serves one forward/backward pair at a time.
"""
from __future__ import annotations

import numpy as np

from ..gconv import gconv_backward, gconv_hidden, gconv_lift
from ..symmetry import FiniteRotationGroup
from .init import he_init, noise_factors


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def zero_grad(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def __repr__(self):
        shapes = ", ".join(f"{k}={v.shape}" for k, v in self.params.items())
        return f"{type(self).__name__}({shapes})"


class GroupConv(Layer):
    """Lifting (``lift=True``) or hidden group convolution with a shared bias.

    The bias is per output channel and broadcast over the group axis;
    a per-(channel, rotation) bias would break equivariance.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel: int, group: FiniteRotationGroup,
                 lift: bool, padding: str = "same", dtype=np.float64, rng=None, noise_std: float = 0.0):
        super().__init__()
        self.kind = "gconv_lift" if lift else "gconv_hidden"
        self.group = group
        self.lift = lift
        self.padding = padding
        self.noise_std = float(noise_std)
        self._rng = rng if rng is not None else np.random.default_rng()
        gin = 1 if lift else group.order
        shape = (out_channels, in_channels, gin, kernel, kernel, kernel)
        self.params["weight"] = he_init(shape, self._rng, dtype)
        self.params["bias"] = np.zeros(out_channels, dtype=dtype)
        self.zero_grad()

    def forward(self, x, train=False):
        w = self.params["weight"]
        if train and self.noise_std > 0:
            self._noise = noise_factors(w.shape, self.noise_std, self._rng).astype(w.dtype)
            w = w * self._noise
        else:
            self._noise = None
        self._x, self._w = x, w
        fn = gconv_lift if self.lift else gconv_hidden
        out = fn(x, w, self.group, self.padding)
        return out + self.params["bias"][None, :, None, None, None, None]

    def backward(self, grad):
        kind = "lift" if self.lift else "hidden"
        gx, gw = gconv_backward(kind, self._x, self._w, grad, self.group, self.padding)
        if self._noise is not None:
            gw = gw * self._noise
        self.grads["weight"] += gw
        self.grads["bias"] += grad.sum(axis=(0, 2, 3, 4, 5))
        return gx


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False):
        self._mask = x > 0
        return np.where(self._mask, x, 0).astype(x.dtype)

    def backward(self, grad):
        return np.where(self._mask, grad, 0).astype(grad.dtype)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


class BatchNorm(Layer):
    """Per-channel normalisation with statistics pooled over batch, group and space."""

    kind = "batch_norm"

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float64):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)
        self.zero_grad()

    @staticmethod
    def _bcast(v, ndim):
        return v.reshape((1, -1) + (1,) * (ndim - 2))

    def forward(self, x, train=False):
        if x.shape[0] < 1:
            raise ValueError("batch_norm needs a non-empty batch")
        axes = (0,) + tuple(range(2, x.ndim))
        gamma = self._bcast(self.params["gamma"], x.ndim)
        beta = self._bcast(self.params["beta"], x.ndim)
        self._train = train
        if train:
            mean = x.mean(axis=axes)
            centered = x - self._bcast(mean, x.ndim)
            # constant channels normalise to exactly zero
            flat = np.ptp(x, axis=axes) == 0
            if flat.any():
                centered = np.where(self._bcast(flat, x.ndim), 0, centered)
            var = np.mean(centered ** 2, axis=axes)
            m = x.size // x.shape[1]
            unbiased = var * m / max(m - 1, 1)
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            self.buffers["running_mean"] = ((1 - self.momentum) * rm + self.momentum * mean).astype(rm.dtype)
            self.buffers["running_var"] = ((1 - self.momentum) * rv + self.momentum * unbiased).astype(rv.dtype)
        else:
            mean, var = self.buffers["running_mean"], self.buffers["running_var"]
            centered = x - self._bcast(mean, x.ndim)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = centered * self._bcast(inv_std, x.ndim)
        self._xhat, self._inv_std, self._axes = xhat, inv_std, axes
        return (gamma * xhat + beta).astype(x.dtype)

    def backward(self, grad):
        axes, xhat = self._axes, self._xhat
        nd = grad.ndim
        self.grads["gamma"] += np.sum(grad * xhat, axis=axes)
        self.grads["beta"] += np.sum(grad, axis=axes)
        g_xhat = grad * self._bcast(self.params["gamma"], nd)
        inv_std = self._bcast(self._inv_std, nd)
        if not self._train:
            return g_xhat * inv_std
        mean_g = g_xhat.mean(axis=axes, keepdims=True)
        mean_gx = (g_xhat * xhat).mean(axis=axes, keepdims=True)
        return inv_std * (g_xhat - mean_g - xhat * mean_gx)


def batch_norm(x: np.ndarray, state: BatchNorm, mode: str = "train") -> np.ndarray:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return state.forward(x, train=mode == "train")


class AvgPool2(Layer):
    """Non-overlapping 2x2x2 mean pooling; the group axis is untouched."""

    kind = "avg_pool2"

    def forward(self, x, train=False):
        D, H, W = x.shape[-3:]
        if D % 2 or H % 2 or W % 2:
            raise ValueError(f"avg_pool2 needs even spatial dims, got {(D, H, W)}")
        lead = x.shape[:-3]
        self._shape = x.shape
        v = x.reshape(lead + (D // 2, 2, H // 2, 2, W // 2, 2))
        n = len(lead)
        return v.mean(axis=(n + 1, n + 3, n + 5))

    def backward(self, grad):
        up = grad
        for ax in (-3, -2, -1):
            up = np.repeat(up, 2, axis=ax)
        return up / 8.0


def avg_pool2(x: np.ndarray) -> np.ndarray:
    return AvgPool2().forward(np.asarray(x))


class GlobalSpatialPool(Layer):
    """``(N, C, G, D, H, W) -> (N, C, G)`` by averaging over space."""

    kind = "global_spatial_pool"

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.mean(axis=(-3, -2, -1))

    def backward(self, grad):
        n = np.prod(self._shape[-3:])
        return np.broadcast_to(grad[..., None, None, None] / n, self._shape).copy()


class GroupPool(Layer):
    """Average over the group axis (axis 2): turns equivariant features invariant."""

    kind = "group_pool"

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.mean(axis=2)

    def backward(self, grad):
        g = self._shape[2]
        return np.broadcast_to(np.expand_dims(grad, 2) / g, self._shape).copy()


def global_spatial_pool(x: np.ndarray) -> np.ndarray:
    """``(C, G, D, H, W) -> (C, G)`` (or batched)."""
    return np.asarray(x).mean(axis=(-3, -2, -1))


def group_pool(x: np.ndarray) -> np.ndarray:
    """``(C, G) -> (C,)`` (or batched ``(N, C, G) -> (N, C)``)."""
    return np.asarray(x).mean(axis=-1)


class Dense(Layer):
    """Affine map on flattened inputs: ``y = x W^T + b``."""

    kind = "dense"

    def __init__(self, in_features: int, out_features: int, dtype=np.float64, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng()
        self.params["weight"] = he_init((out_features, in_features), rng, dtype)
        self.params["bias"] = np.zeros(out_features, dtype=dtype)
        self.zero_grad()

    def forward(self, x, train=False):
        self._in_shape = x.shape
        self._x = x.reshape(x.shape[0], -1)
        return dense(self._x, self.params["weight"], self.params["bias"])

    def backward(self, grad):
        self.grads["weight"] += grad.T @ self._x
        self.grads["bias"] += grad.sum(axis=0)
        return (grad @ self.params["weight"]).reshape(self._in_shape)


def dense(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"dense expects {weight.shape[1]} features, got {x.shape[-1]}")
    return x @ weight.T + bias


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(np.asarray(logits)))


def softmax_xent(logits: np.ndarray, labels):
    """Mean multi-class cross-entropy and its gradient w.r.t. the logits.

    Accepts a single logit vector with an integer label, or a batch
    ``(N, K)`` with ``N`` labels.
    """
    logits = np.asarray(logits)
    single = logits.ndim == 1
    z = logits[None] if single else logits
    y = np.atleast_1d(np.asarray(labels))
    k = z.shape[1]
    if y.shape[0] != z.shape[0]:
        raise ValueError(f"{z.shape[0]} logit rows but {y.shape[0]} labels")
    if np.any(y < 0) or np.any(y >= k) or not np.issubdtype(y.dtype, np.integer):
        raise ValueError(f"labels must be integers in [0, {k})")
    lsm = log_softmax(z)
    n = z.shape[0]
    loss = -lsm[np.arange(n), y].mean()
    grad = np.exp(lsm)
    grad[np.arange(n), y] -= 1.0
    grad /= n
    return float(loss), (grad[0] if single else grad)
