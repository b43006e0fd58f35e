"""AdamW with decoupled weight decay."""

from __future__ import annotations

import numpy as np

from .tensor import Parameter


class AdamW:
    """Standard Adam moments plus decoupled weight decay.

    Parameters whose grad buffer is missing are skipped entirely (no decay
    either), so a step on an un-backpropagated model is a no-op.  Grads are
    zeroed after each step.
    """

    def __init__(
        self,
        params: list[Parameter],
        lr: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            mhat = self.m[i] / bc1
            vhat = self.v[i] / bc2
            p.data -= self.lr * (mhat / (np.sqrt(vhat) + self.eps) + self.weight_decay * p.data)
            p.grad = np.zeros_like(p.data)

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Flat view of optimizer state for checkpointing."""
        out: dict[str, np.ndarray] = {}
        for i, p in enumerate(self.params):
            out[f"m.{p.name}"] = self.m[i]
            out[f"v.{p.name}"] = self.v[i]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        self.t = t
        for i, p in enumerate(self.params):
            self.m[i] = arrays[f"m.{p.name}"].reshape(p.data.shape).astype(p.data.dtype)
            self.v[i] = arrays[f"v.{p.name}"].reshape(p.data.shape).astype(p.data.dtype)
