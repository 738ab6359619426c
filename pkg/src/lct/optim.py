"""Trainable parameters and the Adam optimizer with stepped learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, NumericError
from .tensor import Tensor


class Parameter:
    """A trainable tensor bundled with its Adam moment buffers."""

    def __init__(self, data, name: str = ""):
        self.tensor = Tensor(data, requires_grad=True)
        self.adam_m = np.zeros_like(self.tensor.data)
        self.adam_v = np.zeros_like(self.tensor.data)
        self.name = name

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.tensor.data.shape

    @property
    def size(self) -> int:
        return self.tensor.data.size

    def zero_grad(self) -> None:
        self.tensor.grad = None

    def __repr__(self) -> str:
        return f"Parameter({self.name or '?'}, shape={self.shape})"


@dataclass
class OptimizerConfig:
    base_lr: float = 1e-3
    decay_factor: float = 0.1
    decay_every_epochs: int = 25
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.base_lr <= 0.0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ConfigError(f"decay_factor must lie in (0, 1], got {self.decay_factor}")
        if self.decay_every_epochs < 1:
            raise ConfigError(f"decay_every_epochs must be >= 1, got {self.decay_every_epochs}")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ConfigError("Adam betas must lie in [0, 1)")


def lr_at_epoch(config: OptimizerConfig, epoch: int) -> float:
    """base_lr * decay_factor^(epoch // decay_every_epochs), by repeated product.

    Multiplying stepwise keeps the decade anchors exact in binary floating
    point (0.001 -> 1e-4 -> 1e-5); a single pow() call drifts by an ulp.
    """
    if epoch < 0:
        raise ConfigError(f"epoch must be non-negative, got {epoch}")
    lr = config.base_lr
    for _ in range(epoch // config.decay_every_epochs):
        lr *= config.decay_factor
    return lr


def adam_step(params, lr: float, t: int,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One in-place Adam update with bias correction; gradients are cleared after.

    t is the 1-based global step count.  A parameter whose gradient is None
    (it never entered the graph this step) is treated as having zero gradient;
    NaN gradients abort with the offending parameter named.
    """
    if t < 1:
        raise ValueError(f"Adam step count is 1-based, got {t}")
    corr1 = 1.0 - beta1 ** t
    corr2 = 1.0 - beta2 ** t
    for p in params:
        g = p.tensor.grad
        if g is None:
            g = np.zeros_like(p.tensor.data)
        elif np.isnan(g).any():
            raise NumericError(f"NaN gradient in parameter '{p.name}' at step {t}")
        p.adam_m = beta1 * p.adam_m + (1.0 - beta1) * g
        p.adam_v = beta2 * p.adam_v + (1.0 - beta2) * (g * g)
        m_hat = p.adam_m / corr1
        v_hat = p.adam_v / corr2
        p.tensor.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
        p.tensor.grad = None
