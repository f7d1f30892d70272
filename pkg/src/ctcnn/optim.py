"""Plain SGD and Adam, updating parameter arrays in place."""
from __future__ import annotations

import numpy as np

from .errors import ConfigError, DimensionError


def _check_aligned(params, grads):
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} parameter tensors but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise DimensionError(f"parameter shape {p.shape} does not match gradient shape {g.shape}")


class SGD:
    """theta <- theta - lr * grad."""

    def __init__(self, lr: float = 0.001):
        if lr <= 0:
            raise ConfigError(f"SGD learning rate must be > 0, got {lr}")
        self.lr = float(lr)

    def step(self, params, grads) -> None:
        _check_aligned(params, grads)
        for p, g in zip(params, grads):
            p -= (self.lr * g).astype(p.dtype, copy=False)


class Adam:
    """Adam with bias correction; epsilon is added after the square root.

        t <- t + 1
        m <- b1*m + (1-b1)*g        m_hat = m / (1 - b1^t)
        v <- b2*v + (1-b2)*g^2      v_hat = v / (1 - b2^t)
        theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)

    Moment buffers are allocated lazily on the first step and keep each
    parameter's dtype.  lr = 0 is allowed and freezes the parameters.
    """

    def __init__(self, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-7):
        if lr < 0:
            raise ConfigError(f"Adam learning rate must be >= 0, got {lr}")
        if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
            raise ConfigError(f"betas must be in [0, 1), got {beta1}, {beta2}")
        if eps <= 0:
            raise ConfigError(f"eps must be > 0, got {eps}")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads) -> None:
        _check_aligned(params, grads)
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        elif len(self.m) != len(params):
            raise DimensionError(f"optimizer tracks {len(self.m)} tensors, got {len(params)}")
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            g = g.astype(p.dtype, copy=False)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            m_hat = m / correction1
            v_hat = v / correction2
            p -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.dtype, copy=False)
