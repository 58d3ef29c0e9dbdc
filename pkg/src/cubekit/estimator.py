"""scikit-learn compatible front end for rotation-equivariant voxel classifiers."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from .network.checkpoint import load_checkpoint, save_checkpoint
from .network.graph import DEFAULT_CHANNELS, DEFAULT_LAYERS, CubeNet, LayerGraph
from .network.layers import softmax
from .network.optim import TrainConfig, train
from .symmetry import GroupKind
from .validation import check_labels, check_voxel_batch
from .voxel import resolve_dtype


class CubeNetClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Group-convolutional voxel classifier.

    ``X`` is a batch of cubic grids, ``(n, D, H, W)`` or ``(n, C, D, H, W)``.
    With ``group_pool`` in ``layers`` the fitted model is invariant to the
    rotations of ``group``; ``group="C1"`` gives an ordinary 3D CNN.

    ``transform`` returns the pooled descriptor feeding the first dense layer.
    """

    def __init__(self, group="V", layers=DEFAULT_LAYERS, channels=DEFAULT_CHANNELS, kernel=3,
                 padding="same", epochs=25, batch_size=16, lr=1e-3, lr_step=5, lr_factor=0.2,
                 beta1=0.9, beta2=0.999, adam_eps=1e-8, noise_std=0.1, seed=0, precision="f64"):
        self.group = group
        self.layers = layers
        self.channels = channels
        self.kernel = kernel
        self.padding = padding
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_step = lr_step
        self.lr_factor = lr_factor
        self.beta1 = beta1
        self.beta2 = beta2
        self.adam_eps = adam_eps
        self.noise_std = noise_std
        self.seed = seed
        self.precision = precision

    def _graph(self, n_classes: int, in_channels: int) -> LayerGraph:
        return LayerGraph(
            layers=list(self.layers), channels=list(self.channels), group=GroupKind.parse(self.group).value,
            n_classes=n_classes, in_channels=in_channels, kernel=self.kernel, padding=self.padding,
            precision=self.precision,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.adam_eps,
                           epochs=self.epochs, batch_size=self.batch_size, lr_factor=self.lr_factor,
                           lr_step=self.lr_step, noise_std=self.noise_std, seed=self.seed)

    def _validate(self, X):
        return check_voxel_batch(X, dtype=resolve_dtype(self.precision))

    def fit(self, X, y):
        X = self._validate(X)
        y = check_labels(y, len(X))
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        graph = self._graph(len(self.classes_), X.shape[1])
        graph.validate(X.shape[-3:])
        self.net_ = CubeNet(graph, seed=self.seed)
        self.loss_curve_ = train(self.net_, X, y_enc.astype(np.int64), self.train_config())
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def _net(self) -> CubeNet:
        check_is_fitted(self, "net_")
        return self.net_

    def decision_function(self, X) -> np.ndarray:
        """Logits, ``(n, n_classes)``."""
        net = self._net()
        X = self._validate(X)
        return np.concatenate([net.forward(X[i:i + 64]) for i in range(0, len(X), 64)])

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]

    def predict_rotation_averaged(self, X, group=None) -> np.ndarray:
        """Predict from softmax outputs averaged over all rotated copies of each input."""
        net = self._net()
        return self.classes_[net.predict_rotation_averaged(self._validate(X), group)]

    def transform(self, X) -> np.ndarray:
        net = self._net()
        X = self._validate(X)
        upto = net.graph.layers.index("dense")
        feats = np.concatenate([net.forward(X[i:i + 64], upto=upto) for i in range(0, len(X), 64)])
        return feats.reshape(len(X), -1)

    # -- persistence ------------------------------------------------------------

    def save(self, path) -> None:
        net = self._net()
        save_checkpoint(net, path, extra={
            "estimator": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.get_params().items()},
            "classes": self.classes_.tolist(),
            "loss_curve": [float(v) for v in self.loss_curve_],
        })

    @classmethod
    def load(cls, path) -> "CubeNetClassifier":
        net, manifest = load_checkpoint(path)
        if "estimator" not in manifest:
            raise NotFittedError(f"{path} holds a bare network, not a fitted classifier")
        est = cls(**manifest["estimator"])
        est.net_ = net
        est.classes_ = np.asarray(manifest["classes"])
        est.loss_curve_ = list(manifest.get("loss_curve", []))
        est.n_features_in_ = None
        return est
