"""Adam with bias correction."""

from __future__ import annotations

import numpy as np


def adam_step(params, grads, m, v, t, lr, betas=(0.9, 0.999), eps=1e-8):
    """One Adam update, in place on ``params``, ``m`` and ``v`` (lists of arrays).

    ``t`` is the 1-based step count after this update.  Returns ``params``.
    """
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if t < 1:
        raise ValueError(f"step count must be >= 1, got {t}")
    b1, b2 = betas
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, mi, vi in zip(params, grads, m, v):
        mi *= b1
        mi += (1.0 - b1) * g
        vi *= b2
        vi += (1.0 - b2) * (g * g)
        p -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)
    return params


class Adam:
    """Optimizer over a :class:`~dimm.nn.layers.ParamStore` (or any iterable
    of Parameters).  Moment buffers start at zero."""

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        if not lr > 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr, self.betas, self.eps = float(lr), tuple(betas), float(eps)
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        adam_step([p.value for p in self.params], [p.grad for p in self.params],
                  self.m, self.v, self.t, self.lr, self.betas, self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def state(self) -> dict:
        return {"t": self.t, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}
