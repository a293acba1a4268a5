"""Adam over a named parameter group."""

from __future__ import annotations

import numpy as np

from .errors import CheckpointError
from .tensor import Tensor


class Adam:
    """Bias-corrected Adam updating an ordered list of (name, tensor)
    parameters in place. The step counter is shared by the whole group;
    moment buffers are addressable by parameter name for checkpointing.
    """

    def __init__(self, params: list[tuple[str, Tensor]], lr: float = 2e-4,
                 beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self):
        """One update from the gradients currently held by the parameters."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params:
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for _, p in self.params:
            p.zero_grad()

    def load_state(self, m: dict, v: dict, t: int):
        """Install checkpointed moments; shapes must match the live group."""
        for name, p in self.params:
            if name not in m or name not in v:
                raise CheckpointError(f"optimizer state missing moments for {name}")
            if m[name].shape != p.data.shape or v[name].shape != p.data.shape:
                raise CheckpointError(f"optimizer moment shape mismatch for {name}")
            self.m[name] = np.asarray(m[name], dtype=np.float64)
            self.v[name] = np.asarray(v[name], dtype=np.float64)
        self.t = int(t)
