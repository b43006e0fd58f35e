"""Confusion-matrix metrics: accuracy, macro precision/recall/F1, per-class accuracy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MetricsReport:
    confusion: np.ndarray  # (K, K); rows = true class, cols = predicted
    acc: float
    m_pre: float
    m_rec: float
    m_f1: float
    per_class_acc: list[float]  # recall of each class
    epoch: int
    split: str


def confusion_matrix(labels: np.ndarray, preds: np.ndarray, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels, dtype=np.int64), np.asarray(preds, dtype=np.int64)), 1)
    return cm


def metrics_from_confusion(cm: np.ndarray, epoch: int = 0, split: str = "") -> MetricsReport:
    """Macro metrics are unweighted class means; zero denominators score 0."""
    cm = np.asarray(cm, dtype=np.float64)
    k = cm.shape[0]
    total = cm.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    diag = np.diag(cm)
    row = cm.sum(axis=1)
    col = cm.sum(axis=0)
    rec = np.divide(diag, row, out=np.zeros(k), where=row > 0)
    pre = np.divide(diag, col, out=np.zeros(k), where=col > 0)
    denom = pre + rec
    f1 = np.divide(2.0 * pre * rec, denom, out=np.zeros(k), where=denom > 0)
    return MetricsReport(
        confusion=cm.astype(np.int64),
        acc=float(diag.sum() / total),
        m_pre=float(pre.mean()),
        m_rec=float(rec.mean()),
        m_f1=float(f1.mean()),
        per_class_acc=[float(r) for r in rec],
        epoch=epoch,
        split=split,
    )


def compute_metrics(labels, preds, n_classes: int, epoch: int = 0, split: str = "") -> MetricsReport:
    return metrics_from_confusion(confusion_matrix(labels, preds, n_classes), epoch, split)


def csv_header(n_classes: int) -> str:
    accs = ",".join(f"acc_{k + 1}" for k in range(n_classes))
    return f"epoch,split,acc,m_pre,m_rec,m_f1,{accs}"


def csv_row(r: MetricsReport) -> str:
    vals = [r.acc, r.m_pre, r.m_rec, r.m_f1, *r.per_class_acc]
    return f"{r.epoch},{r.split}," + ",".join(f"{v:.6f}" for v in vals)
