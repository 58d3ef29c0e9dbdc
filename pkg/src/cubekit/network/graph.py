"""Layer graphs: validated network blueprints and the networks built from them."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..symmetry import GroupKind, generate_group
from ..voxel import apply_group_action, resolve_dtype
from . import layers as L

LAYER_KINDS = (
    "gconv_lift",
    "gconv_hidden",
    "relu",
    "batch_norm",
    "avg_pool2",
    "global_spatial_pool",
    "group_pool",
    "dense",
)
CONV_KINDS = ("gconv_lift", "gconv_hidden")
WIDTH_KINDS = CONV_KINDS + ("dense",)

DEFAULT_LAYERS = (
    "gconv_lift", "batch_norm", "relu",
    "gconv_hidden", "batch_norm", "relu",
    "global_spatial_pool", "group_pool",
    "dense", "relu", "dense",
)
DEFAULT_CHANNELS = (4, 4, 16)


class GraphError(ValueError):
    """A layer graph whose shapes or layer order do not chain."""


@dataclass
class LayerGraph:
    """Ordered network description.

    ``channels`` gives the output width of every conv and dense layer in
    order, except the final dense layer, whose width is ``n_classes``.
    """

    layers: list[str] = field(default_factory=lambda: list(DEFAULT_LAYERS))
    channels: list[int] = field(default_factory=lambda: list(DEFAULT_CHANNELS))
    group: str = "V"
    n_classes: int = 5
    in_channels: int = 1
    kernel: int = 3
    padding: str = "same"
    precision: str = "f64"

    def __post_init__(self):
        self.layers = list(self.layers)
        self.channels = [int(c) for c in self.channels]
        self.group = GroupKind.parse(self.group).value

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LayerGraph":
        return cls(**d)

    def widths(self) -> list[int]:
        """Output width for each width-carrying layer, final dense included."""
        n = sum(1 for k in self.layers if k in WIDTH_KINDS)
        out = list(self.channels)
        if self.layers and self.layers[-1] == "dense":
            return out[: n - 1] + [self.n_classes]
        return out[:n]

    def validate(self, spatial: tuple[int, int, int] | None = None) -> None:
        """Raise :class:`GraphError` unless layer order and shapes chain.

        ``spatial`` (input grid size) enables the pooling checks.
        """
        kinds = self.layers
        for i, k in enumerate(kinds):
            if k not in LAYER_KINDS:
                raise GraphError(f"layers[{i}]: unknown layer kind {k!r}")
        conv_idx = [i for i, k in enumerate(kinds) if k in CONV_KINDS]
        if not conv_idx or kinds[conv_idx[0]] != "gconv_lift":
            raise GraphError("the first convolution must be gconv_lift")
        if any(kinds[i] == "gconv_lift" for i in conv_idx[1:]):
            raise GraphError("only the first convolution may be gconv_lift")
        gp = [i for i, k in enumerate(kinds) if k == "group_pool"]
        if len(gp) > 1:
            raise GraphError("group_pool may appear at most once")
        if gp and gp[0] < conv_idx[-1]:
            raise GraphError("group_pool must come after the last convolution")
        n_width = sum(1 for k in kinds if k in WIDTH_KINDS)
        need = n_width - (1 if kinds[-1] == "dense" else 0)
        if len(self.channels) != need:
            raise GraphError(f"channels: expected {need} entries for {n_width} conv/dense layers, got {len(self.channels)}")
        if any(c < 1 for c in self.channels):
            raise GraphError("channels: widths must be positive")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise GraphError(f"kernel: must be a positive odd integer, got {self.kernel}")
        if kinds[-1] != "dense":
            raise GraphError("the graph must end with a dense layer producing the logits")

        # 'map' = (C, G, D, H, W), 'sig' = (C, G), 'vec' = (F,)
        state = "map"
        size = list(spatial) if spatial is not None else None
        for i, k in enumerate(kinds):
            if k in CONV_KINDS or k in ("batch_norm", "avg_pool2", "global_spatial_pool"):
                if state != "map" and k != "batch_norm":
                    raise GraphError(f"layers[{i}]: {k} needs a spatial feature map, got a {state}")
                if k == "batch_norm" and state == "vec":
                    raise GraphError(f"layers[{i}]: batch_norm is only supported on feature maps")
            if k == "avg_pool2" and size is not None:
                if any(s % 2 for s in size):
                    raise GraphError(f"layers[{i}]: avg_pool2 needs even spatial dims, got {tuple(size)}")
                size = [s // 2 for s in size]
            if k in CONV_KINDS and size is not None and self.padding == "valid":
                size = [s - self.kernel + 1 for s in size]
                if min(size) < 1:
                    raise GraphError(f"layers[{i}]: kernel larger than its input")
            if k == "global_spatial_pool":
                state = "sig"
            elif k == "group_pool":
                state = "vec" if state == "sig" else state
            elif k == "dense":
                if state == "map":
                    raise GraphError(f"layers[{i}]: dense needs pooled features; add global_spatial_pool")
                state = "vec"

    def build(self, seed=None, noise_std: float = 0.0) -> "CubeNet":
        return CubeNet(self, seed=seed, noise_std=noise_std)


class CubeNet:
    """A network instantiated from a :class:`LayerGraph`."""

    def __init__(self, graph: LayerGraph, seed=None, noise_std: float = 0.0):
        graph.validate()
        self.graph = graph
        self.group = generate_group(graph.group)
        self.dtype = resolve_dtype(graph.precision)
        self.rng = np.random.default_rng(seed)
        self.layers: list[L.Layer] = []
        widths = iter(graph.widths())
        G = self.group.order
        ch, gax, feat = graph.in_channels, 1, None
        for kind in graph.layers:
            if kind in CONV_KINDS:
                out = next(widths)
                layer = L.GroupConv(ch, out, graph.kernel, self.group, lift=kind == "gconv_lift",
                                    padding=graph.padding, dtype=self.dtype, rng=self.rng, noise_std=noise_std)
                ch, gax = out, G
            elif kind == "batch_norm":
                layer = L.BatchNorm(ch, dtype=self.dtype)
            elif kind == "relu":
                layer = L.ReLU()
            elif kind == "avg_pool2":
                layer = L.AvgPool2()
            elif kind == "global_spatial_pool":
                layer = L.GlobalSpatialPool()
                feat = ch * gax
            elif kind == "group_pool":
                layer = L.GroupPool()
                gax = 1
                feat = ch
            else:  # dense
                out = next(widths)
                layer = L.Dense(feat, out, dtype=self.dtype, rng=self.rng)
                feat = out
            self.layers.append(layer)

    # -- parameters ---------------------------------------------------------

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for name, p in layer.params.items():
                yield f"{i:02d}_{layer.kind}.{name}", layer, name

    def named_buffers(self):
        for i, layer in enumerate(self.layers):
            for name, b in layer.buffers.items():
                yield f"{i:02d}_{layer.kind}.{name}", layer, name

    def parameters(self) -> list[np.ndarray]:
        return [layer.params[n] for _, layer, n in self.named_params()]

    def gradients(self) -> list[np.ndarray]:
        return [layer.grads[n] for _, layer, n in self.named_params()]

    def set_parameters(self, values) -> None:
        for (_, layer, n), v in zip(self.named_params(), values):
            layer.params[n] = np.asarray(v, dtype=self.dtype)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {k: layer.params[n] for k, layer, n in self.named_params()}
        out.update({k: layer.buffers[n] for k, layer, n in self.named_buffers()})
        return out

    def load_state_dict(self, state: dict) -> None:
        for k, layer, n in self.named_params():
            layer.params[n] = np.asarray(state[k], dtype=self.dtype).reshape(layer.params[n].shape)
        for k, layer, n in self.named_buffers():
            layer.buffers[n] = np.asarray(state[k], dtype=self.dtype).reshape(layer.buffers[n].shape)
        for layer in self.layers:
            layer.zero_grad()

    @property
    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def set_noise(self, std: float) -> None:
        for layer in self.layers:
            if isinstance(layer, L.GroupConv):
                layer.noise_std = float(std)

    # -- passes -----------------------------------------------------------------

    def _check_input(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 5:
            x = x[None]
        if x.ndim != 6 or x.shape[1:3] != (self.graph.in_channels, 1):
            raise ValueError(f"expected input (N, {self.graph.in_channels}, 1, D, H, W), got {x.shape}")
        return x

    def forward(self, x, train: bool = False, upto: int | None = None) -> np.ndarray:
        """Logits ``(N, n_classes)``; ``upto`` stops after that many layers."""
        h = self._check_input(x)
        for layer in self.layers[:upto]:
            h = layer.forward(h, train=train)
        return h

    def backward(self, grad_logits: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients; return the gradient w.r.t. the input."""
        g = grad_logits
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def loss_and_grads(self, x, labels, train: bool = True):
        """Cross-entropy loss and fresh parameter gradients for one batch."""
        self.zero_grad()
        logits = self.forward(x, train=train)
        loss, g = L.softmax_xent(logits, labels)
        grad_input = self.backward(g.astype(self.dtype))
        return loss, self.gradients(), grad_input

    def recalibrate_batchnorm(self, x, batch_size: int = 64) -> None:
        """Set every batch-norm running mean and variance to its exact statistics over ``x``.

        Layers are processed in order with the current weights, so each one sees
        inputs normalised by the already recalibrated layers before it. Running
        averages collected during training trail the weights and include weight
        noise; this replaces them.
        """
        x = self._check_input(x)
        if len(x) == 0:
            raise ValueError("recalibration needs at least one sample")
        for i, layer in enumerate(self.layers):
            if not isinstance(layer, L.BatchNorm):
                continue
            total = sq = 0.0
            count = 0
            for s in range(0, len(x), batch_size):
                h = self.forward(x[s:s + batch_size], upto=i).astype(np.float64)
                axes = (0,) + tuple(range(2, h.ndim))
                total = total + h.sum(axis=axes)
                sq = sq + (h * h).sum(axis=axes)
                count += h.size // h.shape[1]
            mean = total / count
            var = np.maximum(sq / count - mean * mean, 0.0) * count / max(count - 1, 1)
            dtype = layer.buffers["running_mean"].dtype
            layer.buffers["running_mean"] = mean.astype(dtype)
            layer.buffers["running_var"] = var.astype(dtype)

    def predict_proba(self, x, batch_size: int = 64) -> np.ndarray:
        x = self._check_input(x)
        out = [L.softmax(self.forward(x[i:i + batch_size])) for i in range(0, len(x), batch_size)]
        return np.concatenate(out)

    def predict_rotation_averaged(self, x, group=None, batch_size: int = 64) -> np.ndarray:
        """Class with the highest softmax averaged over all rotated copies of each input.

        The average runs over ``group`` (default: the model's own group).
        Ties go to the lowest class index.
        """
        group = self.group if group is None else (generate_group(group) if isinstance(group, str) else group)
        x = self._check_input(x)
        acc = 0
        for p in range(group.order):
            acc = acc + self.predict_proba(apply_group_action(x, group, p), batch_size)
        return np.argmax(acc / group.order, axis=1)


def forward(net: CubeNet, batch) -> np.ndarray:
    return net.forward(batch, train=False)


def backward(net: CubeNet, batch, labels):
    """Parameter gradients of the mean cross-entropy on ``batch``."""
    _, grads, _ = net.loss_and_grads(batch, labels, train=True)
    return grads


def predict_rotation_averaged(net: CubeNet, map_, group=None) -> int:
    return int(net.predict_rotation_averaged(np.asarray(map_)[None] if np.ndim(map_) == 5 else map_, group)[0])
