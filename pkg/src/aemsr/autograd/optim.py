"""Adam and the halve-on-plateau learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from ..errors import ConfigurationError
from .nn import Parameter


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def adam_step(params: List[np.ndarray], grads: List[np.ndarray], lr: float,
              state: List[AdamState], beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update applied in place to ``params``."""
    if lr <= 0:
        raise ConfigurationError(f"learning rate must be positive, got {lr}")
    for p, g, s in zip(params, grads, state):
        s.t += 1
        s.m *= beta1
        s.m += (1.0 - beta1) * g
        s.v *= beta2
        s.v += (1.0 - beta2) * g * g
        m_hat = s.m / (1.0 - beta1 ** s.t)
        v_hat = s.v / (1.0 - beta2 ** s.t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Adam over named parameters; frozen parameters are never touched."""

    def __init__(self, named_params: Iterable[Tuple[str, Parameter]], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 grad_clip: Optional[float] = None):
        if lr <= 0:
            raise ConfigurationError(f"learning rate must be positive, got {lr}")
        self.params: Dict[str, Parameter] = dict(named_params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.grad_clip = grad_clip
        self.state: Dict[str, AdamState] = {}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        active = [(n, p) for n, p in self.params.items() if not p.frozen and p.grad is not None]
        grads = [p.grad for _, p in active]
        if self.grad_clip is not None:
            total = np.sqrt(sum(float((g * g).sum()) for g in grads))
            if total > self.grad_clip:
                grads = [g * (self.grad_clip / total) for g in grads]
        states = []
        for n, p in active:
            if n not in self.state:
                self.state[n] = AdamState(np.zeros_like(p.data), np.zeros_like(p.data))
            states.append(self.state[n])
        adam_step([p.data for _, p in active], grads, self.lr, states,
                  self.beta1, self.beta2, self.eps)


@dataclass
class PlateauHalving:
    """Halve the learning rate each time the monitored error fails to improve.

    The rate never drops below ``floor``.  ``patience`` is the number of
    consecutive non-improving reports tolerated before each halving.
    """

    lr: float = 1e-4
    floor: float = 5e-6
    patience: int = 1
    best: float = field(default=float("inf"))
    _bad: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.floor <= 0 or self.floor > self.lr:
            raise ConfigurationError(f"invalid schedule lr={self.lr} floor={self.floor}")

    def reset(self) -> None:
        """Forget the best error (e.g. when the task changes), keeping the current rate."""
        self.best = float("inf")
        self._bad = 0

    def report(self, error: float) -> float:
        if error < self.best:
            self.best = error
            self._bad = 0
        else:
            self._bad += 1
            if self._bad >= self.patience:
                self.lr = max(self.lr / 2.0, self.floor)
                self._bad = 0
        return self.lr
