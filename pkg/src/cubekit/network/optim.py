"""Adam with a step learning-rate schedule, and the minibatch training loop."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 25
    batch_size: int = 16
    lr_factor: float = 0.2
    lr_step: int = 5
    noise_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be non-negative, got {self.noise_std}")
        if self.epochs < 0 or self.batch_size < 1 or self.lr_step < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and lr_step >= 1 are required")

    def to_dict(self) -> dict:
        return asdict(self)

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 0-based epoch."""
        return self.lr * self.lr_factor ** (epoch // self.lr_step)


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState, config: TrainConfig, lr: float | None = None):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    lr = config.lr if lr is None else lr
    if not state.m:
        state = AdamState(0, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])
    t = state.step + 1
    b1, b2 = config.beta1, config.beta2
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new_p.append((p - lr * m_hat / (np.sqrt(v_hat) + config.eps)).astype(p.dtype))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(t, new_m, new_v)


def train(net, X: np.ndarray, y: np.ndarray, config: TrainConfig, callback=None) -> list[float]:
    """Minibatch Adam on mean cross-entropy. Returns the per-epoch mean loss.

    Shuffling and weight noise draw from generators seeded by ``config.seed``
    so a run is a pure function of its inputs in single-threaded mode.
    """
    rng = np.random.default_rng(config.seed)
    net.rng = np.random.default_rng([config.seed, 1])
    for layer in net.layers:
        if hasattr(layer, "_rng"):
            layer._rng = net.rng
    net.set_noise(config.noise_std)
    state = AdamState()
    history: list[float] = []
    n = len(X)
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads, _ = net.loss_and_grads(X[idx], y[idx], train=True)
            params, state = adam_step(net.parameters(), grads, state, config, lr=lr)
            net.set_parameters(params)
            total += loss * len(idx)
        history.append(total / n)
        logger.info("epoch %d lr %.2e loss %.6f", epoch, lr, history[-1])
        if callback is not None:
            callback(epoch, history[-1])
    net.set_noise(0.0)
    if config.epochs > 0:
        net.recalibrate_batchnorm(X, batch_size=config.batch_size)
    return history
