"""Class-specific experts combined by a parameter-free similarity gate.

The gate has no weights of its own: expert k's weight is the softmax over
classes of the cosine between the concatenated two-view embedding and the
concatenated class center (no temperature).  Centers are constants; the
embedding side stays differentiable unless explicitly stopped.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .membank import ClassCenters, _normalize_rows
from .tensor import Parameter, Tensor, constant


def gate_weights(z_long: Tensor, z_trans: Tensor, centers: ClassCenters, stop_gradient: bool = False) -> Tensor:
    """(B, K) simplex rows: softmax over classes of cos(z_cat, center_cat)."""
    z_cat = T.concat([z_long, z_trans], axis=1)
    if stop_gradient:
        z_cat = z_cat.detach()
    zn = T.l2_normalize(z_cat, axis=1)
    if zn.zero_rows.any():
        raise ValueError("zero-norm concatenated feature in gate")
    mu_n = _normalize_rows(centers.mu_cat, "concatenated center")
    sims = T.matmul(zn, constant(mu_n.T))
    return T.softmax(sims, axis=1)


class ExpertEnsemble:
    """n_experts two-layer perceptrons plus one shared linear classifier.

    Experts share architecture, not parameters: in_dim -> in_dim (relu)
    -> in_dim/2, classifier in_dim/2 -> n_classes.
    """

    def __init__(
        self,
        in_dim: int,
        n_classes: int,
        n_experts: int,
        rng: np.random.Generator,
        name: str = "head",
        dtype=np.float64,
    ):
        self.in_dim = in_dim
        self.n_classes = n_classes
        self.n_experts = n_experts
        hidden = in_dim
        self.embed_dim = max(in_dim // 2, 1)
        self.params: list[Parameter] = []
        self._experts = []
        for k in range(n_experts):
            w1 = Parameter(
                rng.normal(0.0, np.sqrt(2.0 / in_dim), (in_dim, hidden)).astype(dtype),
                f"{name}.expert{k}.fc1.weight",
            )
            b1 = Parameter(np.zeros(hidden, dtype=dtype), f"{name}.expert{k}.fc1.bias")
            w2 = Parameter(
                rng.normal(0.0, np.sqrt(1.0 / hidden), (hidden, self.embed_dim)).astype(dtype),
                f"{name}.expert{k}.fc2.weight",
            )
            b2 = Parameter(np.zeros(self.embed_dim, dtype=dtype), f"{name}.expert{k}.fc2.bias")
            self._experts.append((w1, b1, w2, b2))
            self.params += [w1, b1, w2, b2]
        self.cls_w = Parameter(
            rng.normal(0.0, np.sqrt(1.0 / self.embed_dim), (self.embed_dim, n_classes)).astype(dtype),
            f"{name}.classifier.weight",
        )
        self.cls_b = Parameter(np.zeros(n_classes, dtype=dtype), f"{name}.classifier.bias")
        self.params += [self.cls_w, self.cls_b]

    def expert_out(self, k: int, z_f: Tensor) -> Tensor:
        w1, b1, w2, b2 = self._experts[k]
        return T.linear(T.relu(T.linear(z_f, w1, b1)), w2, b2)

    def forward(self, z_f: Tensor, weights: Tensor | None = None) -> Tensor:
        """classifier( sum_k w_k * expert_k(z_f) ) -> (B, K) logits.

        weights is None only for the single-expert configuration, where the
        one expert has implicit weight 1.
        """
        if z_f.shape[1] != self.in_dim:
            raise T.ShapeError("experts.forward", z_f.shape, (self.in_dim,))
        if weights is None:
            if self.n_experts != 1:
                raise ValueError("weights required for a multi-expert ensemble")
            mixed = self.expert_out(0, z_f)
        else:
            if weights.shape != (z_f.shape[0], self.n_experts):
                raise T.ShapeError("experts.forward", weights.shape, (z_f.shape[0], self.n_experts))
            cols = T.split(weights, [1] * self.n_experts, axis=1)
            mixed = None
            for k in range(self.n_experts):
                term = cols[k] * self.expert_out(k, z_f)
                mixed = term if mixed is None else mixed + term
        return T.linear(mixed, self.cls_w, self.cls_b)
