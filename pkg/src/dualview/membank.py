"""Per-view feature memory with class centers and the center-contrastive loss.

The bank keeps one slot per training sample and view, updated by a plain
exponential moving average; slots and the class centers derived from them
are constants with respect to the autodiff graph — only the live batch
features receive gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor, constant, logsumexp


@dataclass
class ClassCenters:
    mu_long: np.ndarray  # (K, d)
    mu_trans: np.ndarray  # (K, d)
    mu_cat: np.ndarray  # (K, 2d), concat(long, trans) per class


class MemoryBank:
    """One feature row per training sample and view, addressed by dataset index."""

    def __init__(self, indices: list[int], labels: np.ndarray, dim: int, alpha: float, tau: float, dtype=np.float64):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {alpha}")
        if tau <= 0.0:
            raise ValueError(f"tau must be positive, got {tau}")
        self.indices = list(indices)
        self.labels = np.asarray(labels, dtype=np.int64).copy()
        if self.labels.shape != (len(self.indices),):
            raise ValueError("labels must align with indices")
        self.n_classes = int(self.labels.max()) + 1
        for k in range(self.n_classes):
            if not np.any(self.labels == k):
                raise ValueError(f"class {k} has no members in the training set")
        self._row_of = {idx: r for r, idx in enumerate(self.indices)}
        self.alpha = float(alpha)
        self.tau = float(tau)
        self.m_long = np.zeros((len(self.indices), dim), dtype=dtype)
        self.m_trans = np.zeros((len(self.indices), dim), dtype=dtype)

    def init_features(self, z_long: np.ndarray, z_trans: np.ndarray) -> None:
        if z_long.shape != self.m_long.shape or z_trans.shape != self.m_trans.shape:
            raise ValueError("init feature shapes do not match bank")
        self.m_long[:] = z_long
        self.m_trans[:] = z_trans

    def row(self, index: int) -> int:
        try:
            return self._row_of[index]
        except KeyError:
            raise IndexError(f"index {index} is not a training-set index") from None

    def ema_update(self, index: int, z_long: np.ndarray, z_trans: np.ndarray) -> None:
        """Slot <- alpha*slot + (1-alpha)*z, both views, exactly this order."""
        r = self.row(index)
        self.m_long[r] = self.alpha * self.m_long[r] + (1.0 - self.alpha) * z_long
        self.m_trans[r] = self.alpha * self.m_trans[r] + (1.0 - self.alpha) * z_trans

    def ema_update_batch(self, indices, z_long: np.ndarray, z_trans: np.ndarray) -> None:
        for i, idx in enumerate(indices):
            self.ema_update(int(idx), z_long[i], z_trans[i])


def class_centers(bank: MemoryBank) -> ClassCenters:
    """Arithmetic mean of bank rows per class and view, from current state."""
    mu_long = np.stack([bank.m_long[bank.labels == k].mean(axis=0) for k in range(bank.n_classes)])
    mu_trans = np.stack([bank.m_trans[bank.labels == k].mean(axis=0) for k in range(bank.n_classes)])
    return ClassCenters(mu_long=mu_long, mu_trans=mu_trans, mu_cat=np.concatenate([mu_long, mu_trans], axis=1))


def _normalize_rows(m: np.ndarray, what: str) -> np.ndarray:
    norms = np.sqrt((m * m).sum(axis=1, keepdims=True))
    if np.any(norms < 1e-12):
        raise ValueError(f"zero-norm {what} row; cosine similarity undefined")
    return m / norms


def contrast_loss_from_scores(pos: Tensor, neg: Tensor, neg_mask: np.ndarray, tau: float) -> Tensor:
    """Per-sample -log( e^(pos/tau) / (e^(pos/tau) + sum_masked e^(neg/tau)) ).

    pos: (B,) similarity to the own-class center; neg: (B, N) similarities to
    every bank row; neg_mask selects other-class rows.  Stabilized by
    subtracting the per-row max of all scores (a constant), which keeps every
    exponent <= 0 at any temperature.
    """
    inv_tau = 1.0 / tau
    pos_s = pos * inv_tau
    neg_s = neg * inv_tau
    m = np.maximum(pos_s.data, neg_s.data.max(axis=1))  # (B,), constant
    mask = constant(neg_mask.astype(neg.dtype))
    pos_e = T.exp(pos_s - constant(m))
    neg_e = T.tsum(mask * T.exp(neg_s - constant(m[:, None])), axis=1)
    return T.log(pos_e + neg_e) + constant(m) - pos_s


def center_contrast_loss(
    bank: MemoryBank,
    centers: ClassCenters,
    z_long: Tensor,
    z_trans: Tensor,
    labels: np.ndarray,
) -> Tensor:
    """Mean over the batch of the two per-view contrastive terms.

    Positives are the own-class centers, negatives all other-class bank rows;
    similarities are cosines (arguments renormalized internally).  Bank rows
    and centers are constants; gradient reaches only the live features.
    """
    labels = np.asarray(labels, dtype=np.int64)
    neg_mask = bank.labels[None, :] != labels[:, None]  # (B, N)
    per_sample = None
    for z, rows, mu in ((z_long, bank.m_long, centers.mu_long), (z_trans, bank.m_trans, centers.mu_trans)):
        zn = T.l2_normalize(z, axis=1)
        if zn.zero_rows.any():
            raise ValueError("zero-norm feature in contrastive loss input")
        bank_n = _normalize_rows(rows, "memory")
        mu_n = _normalize_rows(mu, "class center")
        neg = T.matmul(zn, constant(bank_n.T))
        pos = T.tsum(zn * constant(mu_n[labels]), axis=1)
        term = contrast_loss_from_scores(pos, neg, neg_mask, bank.tau)
        per_sample = term if per_sample is None else per_sample + term
    return T.tmean(per_sample)


__all__ = [
    "MemoryBank",
    "ClassCenters",
    "class_centers",
    "center_contrast_loss",
    "contrast_loss_from_scores",
    "logsumexp",
]
