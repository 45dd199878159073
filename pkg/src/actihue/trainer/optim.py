"""Adam and a cosine-annealing learning-rate schedule."""

import math

import numpy as np


def cosine_lr(epoch: int, t_max: int, lr_max: float, lr_min: float = 0.0) -> float:
    """Learning rate for ``epoch`` (0-based) in a single half-cosine period."""
    return lr_min + (lr_max - lr_min) * (1 + math.cos(math.pi * epoch / t_max)) / 2


class Adam:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params: dict, grads: dict, lr: float):
        """In-place update of ``params``; iterates names in sorted order."""
        self.t += 1
        bc1 = 1 - self.beta1**self.t
        bc2 = 1 - self.beta2**self.t
        for name in sorted(params):
            g = grads[name]
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            params[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
