"""Roto-translation group convolutions over finite cube rotation groups.

Layout conventions:

* feature maps ``(N, C, G, D, H, W)`` (a leading batch axis is optional),
* filter banks ``(K, I, G, k, k, k)``,
* lifting layers take ``G == 1`` inputs and filters.

Everything is cross-correlation with stride 1. The fast path rotates the
filters once into a ``(K*|G|, I*G, k, k, k)`` bank and runs one ordinary 3D
correlation (im2col, one matrix product per batch chunk); ``slow=True``
evaluates the group-convolution sum directly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .symmetry import FiniteRotationGroup, as_group
from .validation import check_filter_bank, check_padding, check_feature_map
from .voxel import apply_group_action, pad_symmetric, resolve_dtype, rotate_spatial

PADDINGS = ("same", "valid")


# --------------------------------------------------------------------------
# plain 3D cross-correlation
# --------------------------------------------------------------------------

def _pad_amount(k: int, padding: str) -> int:
    return (k - 1) // 2 if padding == "same" else 0


_CHUNK_BYTES = 64 * 2**20


def _chunks(n: int, row_bytes: int):
    step = max(1, _CHUNK_BYTES // max(row_bytes, 1))
    for start in range(0, n, step):
        yield slice(start, min(n, start + step))


def _im2col(xl: np.ndarray, k: int) -> np.ndarray:
    """Channels-last ``(n, D, H, W, I)`` -> columns ``(n*D'*H'*W', k^3*I)``."""
    n, D, H, W, I = xl.shape
    win = sliding_window_view(xl, (k, k, k), axis=(1, 2, 3))  # (n, D', H', W', I, k, k, k)
    return win.transpose(0, 1, 2, 3, 5, 6, 7, 4).reshape(-1, k ** 3 * I)


def _correlate(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Valid correlation of ``x (N, I, D, H, W)`` with ``w (K, I, k, k, k)``."""
    n, I, D, H, W = x.shape
    K, k = w.shape[0], w.shape[-1]
    od, oh, ow = D - k + 1, H - k + 1, W - k + 1
    dtype = np.result_type(x, w)
    xl = x.transpose(0, 2, 3, 4, 1)
    wm = np.ascontiguousarray(w.transpose(2, 3, 4, 1, 0)).reshape(k ** 3 * I, K)
    out = np.empty((n, od, oh, ow, K), dtype=dtype)
    for sl in _chunks(n, od * oh * ow * k ** 3 * I * dtype.itemsize):
        m = sl.stop - sl.start
        out[sl] = (_im2col(xl[sl], k) @ wm).reshape(m, od, oh, ow, K)
    return np.ascontiguousarray(out.transpose(0, 4, 1, 2, 3))


def _correlate_backward(x: np.ndarray, w: np.ndarray, grad_out: np.ndarray):
    """Adjoint of :func:`_correlate` with respect to ``x`` and ``w``."""
    n, I = x.shape[:2]
    K, k = w.shape[0], w.shape[-1]
    _, _, od, oh, ow = grad_out.shape
    dtype = np.result_type(x, w, grad_out)
    xl = x.transpose(0, 2, 3, 4, 1)
    gl = grad_out.transpose(0, 2, 3, 4, 1)
    wm = np.ascontiguousarray(w.transpose(2, 3, 4, 1, 0)).reshape(k ** 3 * I, K)
    gwm = np.zeros((k ** 3 * I, K), dtype=dtype)
    gxl = np.zeros(xl.shape, dtype=dtype)
    for sl in _chunks(n, od * oh * ow * k ** 3 * I * dtype.itemsize):
        m = sl.stop - sl.start
        g = np.ascontiguousarray(gl[sl]).reshape(-1, K)
        gwm += _im2col(xl[sl], k).T @ g
        gcols = (g @ wm.T).reshape(m, od, oh, ow, k, k, k, I)
        for a in range(k):
            for b in range(k):
                for c in range(k):
                    gxl[sl, a:a + od, b:b + oh, c:c + ow] += gcols[:, :, :, :, a, b, c]
    gw = gwm.reshape(k, k, k, I, K).transpose(4, 3, 0, 1, 2)
    return np.ascontiguousarray(gxl.transpose(0, 4, 1, 2, 3)), np.ascontiguousarray(gw)


def conv3d(input: np.ndarray, filters: np.ndarray, padding: str = "same") -> np.ndarray:
    """Multi-channel 3D cross-correlation.

    ``input`` is ``(I, D, H, W)`` or batched ``(N, I, D, H, W)``; ``filters``
    is ``(K, I, k, k, k)`` with odd ``k``.
    """
    padding = check_padding(padding)
    x = np.asarray(input)
    w = np.asarray(filters)
    single = x.ndim == 4
    if single:
        x = x[None]
    if x.ndim != 5 or w.ndim != 5:
        raise ValueError(f"conv3d expects input (I,D,H,W)/(N,I,D,H,W) and filters (K,I,k,k,k); got {x.shape}, {w.shape}")
    if w.shape[1] != x.shape[1]:
        raise ValueError(f"filters expect {w.shape[1]} input channels, input has {x.shape[1]}")
    k = w.shape[-1]
    if w.shape[2:] != (k, k, k) or k % 2 == 0:
        raise ValueError(f"filters must be cubic with odd size; got spatial shape {w.shape[2:]}")
    pad = _pad_amount(k, padding)
    if pad:
        x = pad_symmetric(x, pad)
    if min(x.shape[2:]) < k:
        raise ValueError(f"kernel of size {k} is larger than the (padded) input {x.shape[2:]}")
    out = _correlate(x, w)
    return out[0] if single else out


def conv3d_backward(input: np.ndarray, filters: np.ndarray, grad_output: np.ndarray, padding: str = "same"):
    """Gradients ``(grad_input, grad_filters)`` of ``sum(conv3d(input, filters) * grad_output)``."""
    padding = check_padding(padding)
    x = np.asarray(input)
    w = np.asarray(filters)
    g = np.asarray(grad_output)
    single = x.ndim == 4
    if single:
        x, g = x[None], g[None]
    pad = _pad_amount(w.shape[-1], padding)
    xp = pad_symmetric(x, pad) if pad else x
    gx, gw = _correlate_backward(xp, w, g)
    if pad:
        gx = gx[:, :, pad:-pad, pad:-pad, pad:-pad]
    gx = np.ascontiguousarray(gx)
    return (gx[0] if single else gx), gw


# --------------------------------------------------------------------------
# group convolutions
# --------------------------------------------------------------------------

def rotated_filter_bank(filters: np.ndarray, group: FiniteRotationGroup, cayley_reindex: bool = True) -> np.ndarray:
    """Stack ``r . W`` for every ``r`` in ``group``: shape ``(K, |G|, I, Gin, k, k, k)``.

    ``r . W`` rotates the kernel spatially by ``r`` and, for ``Gin == |G|``,
    re-indexes the input-group axis as ``rho -> r^-1 rho``. With
    ``cayley_reindex=False`` the re-indexing is skipped (diagnostic only:
    the resulting layer is not equivariant).
    """
    copies = []
    for r in range(group.order):
        if cayley_reindex:
            copies.append(apply_group_action(filters, group, r, group_axis=-4))
        else:
            copies.append(rotate_spatial(filters, group.elements[r]))
    return np.stack(copies, axis=1)


def _batched(x: np.ndarray):
    if x.ndim == 5:
        return x[None], True
    return x, False


def _gconv(input, filters, group, padding, lift: bool, cayley_reindex: bool = True):
    group = as_group(group)
    padding = check_padding(padding)
    x, single = _batched(np.asarray(input))
    w = np.asarray(filters)
    check_feature_map(x, batched=True)
    check_filter_bank(w)
    gin = 1 if lift else group.order
    if x.shape[2] != gin:
        kind = "lifting" if lift else "hidden"
        raise ValueError(f"{kind} layer over {group.kind.value} expects input group axis {gin}, got {x.shape[2]}")
    if w.shape[2] != gin:
        raise ValueError(f"filter group axis is {w.shape[2]}, expected {gin}")
    if w.shape[1] != x.shape[1]:
        raise ValueError(f"filters expect {w.shape[1]} input channels, input has {x.shape[1]}")
    K, I, _, k = w.shape[:3] + (w.shape[-1],)
    bank = rotated_filter_bank(w, group, cayley_reindex).reshape(K * group.order, I * gin, k, k, k)
    n = x.shape[0]
    out = conv3d(x.reshape((n, I * gin) + x.shape[3:]), bank, padding)
    out = out.reshape((n, K, group.order) + out.shape[2:])
    return out[0] if single else out


def gconv_lift(input, filters, group, padding: str = "same", slow: bool = False) -> np.ndarray:
    """Lifting group convolution: ``(N, I, 1, D, H, W) -> (N, K, |G|, D', H', W')``.

    Output slice ``r`` is the plain correlation with the kernel rotated by ``r``.
    """
    if slow:
        return gconv_direct(input, filters, group, padding)
    return _gconv(input, filters, group, padding, lift=True)


def gconv_hidden(input, filters, group, padding: str = "same", slow: bool = False,
                 cayley_reindex: bool = True) -> np.ndarray:
    """Hidden-layer group convolution: ``(N, I, |G|, ...) -> (N, K, |G|, ...)``.

    ``out[:, r] = sum_rho corr(input[:, rho], W[r^-1 x, r^-1 rho])``.
    """
    if slow:
        return gconv_direct(input, filters, group, padding)
    return _gconv(input, filters, group, padding, lift=False, cayley_reindex=cayley_reindex)


def gconv_backward(kind: str, input, filters, upstream_grad, group, padding: str = "same"):
    """Reverse-mode gradients ``(grad_input, grad_filters)`` of a group convolution.

    Gradients are those of ``sum(gconv(input, filters) * upstream_grad)``.
    The filter gradient folds the rotated bank back with the inverse action.
    """
    if kind not in ("lift", "hidden"):
        raise ValueError(f"kind must be 'lift' or 'hidden', got {kind!r}")
    group = as_group(group)
    padding = check_padding(padding)
    x, single = _batched(np.asarray(input))
    u, _ = _batched(np.asarray(upstream_grad))
    w = np.asarray(filters)
    gin = 1 if kind == "lift" else group.order
    K, I, k = w.shape[0], w.shape[1], w.shape[-1]
    G = group.order
    n = x.shape[0]
    expected = (n, K, G)
    if u.shape[:3] != expected:
        raise ValueError(f"upstream gradient shape {u.shape} does not match output {expected + ('...',)}")
    if x.shape[1:3] != (I, gin):
        raise ValueError(f"input shape {x.shape} inconsistent with filters {w.shape}")
    bank = rotated_filter_bank(w, group).reshape(K * G, I * gin, k, k, k)
    gx, gbank = conv3d_backward(
        x.reshape((n, I * gin) + x.shape[3:]), bank, u.reshape((n, K * G) + u.shape[3:]), padding
    )
    gx = gx.reshape(x.shape)
    gbank = gbank.reshape(K, G, I, gin, k, k, k)
    gw = np.zeros_like(w, dtype=gbank.dtype)
    for r in range(G):
        gw += apply_group_action(gbank[:, r], group, group.inverse(r), group_axis=-4)
    return (gx[0] if single else gx), gw


def gconv_direct(input, filters, group, padding: str = "same") -> np.ndarray:
    """Group convolution evaluated term by term (test oracle).

    ``out[k, r, t] = sum_{i, rho, d} W[k, i, r^-1 rho, R_r^T d] F[i, rho, t + d]``
    with ``d`` the centered kernel offset. Filter indices come from explicit
    integer matrix products and Cayley lookups rather than from the
    transpose/flip route used by the fast path.
    """
    group = as_group(group)
    padding = check_padding(padding)
    x, single = _batched(np.asarray(input))
    w = np.asarray(filters)
    n, I, gin = x.shape[:3]
    K, k = w.shape[0], w.shape[-1]
    h = (k - 1) // 2
    pad = _pad_amount(k, padding)
    xp = pad_symmetric(x, pad) if pad else x
    D, H, W = (s - k + 1 for s in xp.shape[3:])
    out = np.zeros((n, K, group.order, D, H, W), dtype=np.result_type(x, w))
    mats = group.matrices
    offsets = [np.array(d) for d in np.ndindex(k, k, k)]
    for r in range(group.order):
        Rt = mats[r].T
        r_inv = group.inverse(r)
        for rho in range(gin):
            src = group.compose(r_inv, rho) if gin > 1 else 0
            for d in offsets:
                u = Rt @ (d - h) + h
                if np.any(u < 0) or np.any(u >= k):  # pragma: no cover - cube maps to itself
                    continue
                tap = w[:, :, src, u[0], u[1], u[2]]  # (K, I)
                patch = xp[:, :, rho, d[0]:d[0] + D, d[1]:d[1] + H, d[2]:d[2] + W]
                out[:, :, r] += np.einsum("ki,nidhw->nkdhw", tap, patch)
    return out[0] if single else out


# --------------------------------------------------------------------------
# equivariance audit
# --------------------------------------------------------------------------

@dataclass
class EquivarianceReport:
    layer: str
    group: str
    precision: str
    trials: int
    tol: float
    max_abs_error: float = 0.0
    max_rel_error: float = 0.0
    per_element_max_abs: list[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_abs_error <= self.tol

    def as_dict(self) -> dict:
        return {
            "layer": self.layer,
            "group": self.group,
            "precision": self.precision,
            "trials": self.trials,
            "tol": self.tol,
            "max_abs_error": self.max_abs_error,
            "max_rel_error": self.max_rel_error,
            "per_element_max_abs": list(self.per_element_max_abs),
            "passed": self.passed,
        }


def check_equivariance(layer: str, group, trials: int = 10, tol: float = 1e-12, precision="f64",
                       size: int = 5, in_channels: int = 2, out_channels: int = 2, kernel: int = 3,
                       padding: str = "same", seed: int = 0, noise_std: float = 0.0,
                       cayley_reindex: bool = True) -> EquivarianceReport:
    """Measure ``max |layer(p F) - p layer(F)|`` over random inputs and all ``p``.

    Filters are He-scaled Gaussians so activations stay O(1) in either
    precision. ``noise_std > 0`` applies multiplicative weight noise to the
    base filters before rotation, as training does.
    """
    if layer not in ("lift", "hidden"):
        raise ValueError(f"layer must be 'lift' or 'hidden', got {layer!r}")
    group = as_group(group)
    dtype = resolve_dtype(precision)
    rng = np.random.default_rng(seed)
    gin = 1 if layer == "lift" else group.order
    fan_in = in_channels * gin * kernel ** 3
    report = EquivarianceReport(layer, group.kind.value, "f32" if dtype == np.float32 else "f64", trials, tol,
                                per_element_max_abs=[0.0] * group.order)

    def run(F, Wt):
        if layer == "lift":
            return gconv_lift(F, Wt, group, padding)
        return gconv_hidden(F, Wt, group, padding, cayley_reindex=cayley_reindex)

    for _ in range(trials):
        F = rng.standard_normal((in_channels, gin, size, size, size)).astype(dtype)
        Wt = rng.normal(0.0, np.sqrt(2.0 / fan_in), (out_channels, in_channels, gin, kernel, kernel, kernel))
        if noise_std > 0:
            Wt = Wt * (1.0 + rng.normal(0.0, noise_std, Wt.shape))
        Wt = Wt.astype(dtype)
        base = run(F, Wt)
        scale = float(np.max(np.abs(base))) or 1.0
        for p in range(group.order):
            lhs = run(apply_group_action(F, group, p), Wt)
            rhs = apply_group_action(base, group, p)
            err = float(np.max(np.abs(lhs.astype(np.float64) - rhs.astype(np.float64))))
            report.per_element_max_abs[p] = max(report.per_element_max_abs[p], err)
            report.max_abs_error = max(report.max_abs_error, err)
            report.max_rel_error = max(report.max_rel_error, err / scale)
    return report
