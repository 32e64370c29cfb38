"""Minibatch SGD with constant momentum and a step-halving learning rate."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np


class SgdMomentum:
    """``v <- momentum * v - lr * g``; ``p <- p + v``.

    The learning rate is halved once for each milestone epoch already reached.
    """

    def __init__(self, lr: float = 0.05, momentum: float = 0.7, milestones: Sequence[int] = ()):
        if not lr > 0:
            raise ValueError("learning rate must be positive")
        self.lr0 = float(lr)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.milestones = sorted(int(m) for m in milestones)
        self.velocity: dict[str, np.ndarray] = {}

    def set_epoch(self, epoch: int) -> float:
        halvings = sum(1 for m in self.milestones if epoch >= m)
        self.lr = self.lr0 * 0.5 ** halvings
        return self.lr

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
            v = self.velocity.get(name)
            if v is None:
                v = self.velocity[name] = np.zeros_like(p)
            elif v.shape != p.shape:
                raise ValueError(f"velocity for {name} has shape {v.shape}, parameter {p.shape}")
            v *= self.momentum
            v -= self.lr * g
            p += v


def default_milestones(epochs: int) -> tuple[int, ...]:
    """Halve at 50% and 75% of the run."""
    return tuple(sorted({max(1, int(epochs * 0.5)), max(1, int(epochs * 0.75))})) if epochs > 1 else ()
