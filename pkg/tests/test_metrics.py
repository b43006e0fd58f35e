"""Metric definitions against hand-computed confusion matrices."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualview.metrics import compute_metrics, confusion_matrix, csv_header, csv_row, metrics_from_confusion


def test_perfect_diagonal():
    r = metrics_from_confusion(np.diag([5, 5, 5]))
    assert r.acc == r.m_pre == r.m_rec == r.m_f1 == 1.0
    assert r.per_class_acc == [1.0, 1.0, 1.0]


def test_hand_computed_case():
    cm = np.array([[2, 1, 0], [0, 3, 0], [1, 0, 3]])
    r = metrics_from_confusion(cm)
    assert r.acc == pytest.approx(0.8)
    np.testing.assert_allclose(r.per_class_acc, [2 / 3, 1.0, 3 / 4])
    assert r.m_rec == pytest.approx(0.80556, abs=1e-5)
    assert r.m_pre == pytest.approx(0.80556, abs=1e-5)
    assert r.m_f1 == pytest.approx(0.79365, abs=1e-5)
    assert r.m_f1 == pytest.approx(np.mean([2 / 3, 6 / 7, 6 / 7]), abs=1e-12)


def test_confusion_matrix_matches_loop_oracle():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 3, 50)
    preds = rng.integers(0, 3, 50)
    cm = confusion_matrix(labels, preds, 3)
    oracle = np.zeros((3, 3), dtype=int)
    for y, p in zip(labels, preds):
        oracle[y, p] += 1
    np.testing.assert_array_equal(cm, oracle)
    assert cm.sum() == 50


def test_never_predicted_class_scores_zero_precision_f1():
    cm = np.array([[3, 0, 0], [2, 0, 1], [0, 0, 4]])  # class 1 never predicted
    r = metrics_from_confusion(cm)
    assert r.per_class_acc[1] == 0.0
    assert r.m_f1 < r.m_rec + 1e-12


def test_empty_confusion_rejected():
    with pytest.raises(ValueError):
        metrics_from_confusion(np.zeros((3, 3)))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=20), min_size=9, max_size=9))
def test_macro_recall_is_mean_per_class_accuracy(cells):
    cm = np.array(cells, dtype=np.int64).reshape(3, 3)
    if cm.sum() == 0 or (cm.sum(axis=1) == 0).any():
        return
    r = metrics_from_confusion(cm)
    assert r.m_rec == pytest.approx(np.mean(r.per_class_acc), abs=1e-12)
    # accuracy equals the row-weighted mean of per-class accuracy
    weights = cm.sum(axis=1) / cm.sum()
    assert r.acc == pytest.approx(float((weights * np.array(r.per_class_acc)).sum()), abs=1e-12)


def test_compute_metrics_from_predictions():
    labels = np.array([0, 0, 1, 1, 2, 2])
    preds = np.array([0, 1, 1, 1, 2, 0])
    r = compute_metrics(labels, preds, 3, epoch=4, split="val")
    assert r.epoch == 4 and r.split == "val"
    assert r.acc == pytest.approx(4 / 6)


def test_csv_format_exact():
    assert csv_header(3) == "epoch,split,acc,m_pre,m_rec,m_f1,acc_1,acc_2,acc_3"
    r = metrics_from_confusion(np.diag([1, 1, 1]), epoch=2, split="test")
    assert csv_row(r) == "2,test,1.000000,1.000000,1.000000,1.000000,1.000000,1.000000,1.000000"
