"""Memory bank EMA, class centers, and the center-contrastive loss."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualview import tensor as T
from dualview.membank import MemoryBank, center_contrast_loss, class_centers, contrast_loss_from_scores
from helpers import finite_difference_grad, max_rel_err


def _bank(n=8, d=5, k=3, alpha=0.01, tau=0.01, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.array([i % k for i in range(n)])
    bank = MemoryBank(list(range(n)), labels, d, alpha, tau)
    z = rng.normal(size=(n, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    z2 = rng.normal(size=(n, d))
    z2 /= np.linalg.norm(z2, axis=1, keepdims=True)
    bank.init_features(z, z2)
    return bank


# -- EMA ------------------------------------------------------------------------


def test_ema_alpha_one_keeps_slot():
    bank = _bank(alpha=1.0)
    before = bank.m_long[2].copy()
    bank.ema_update(2, np.ones(5), np.ones(5))
    np.testing.assert_array_equal(bank.m_long[2], before)


def test_ema_alpha_zero_replaces_slot():
    bank = _bank(alpha=0.0)
    z = np.full(5, 0.5)
    bank.ema_update(3, z, z)
    np.testing.assert_array_equal(bank.m_trans[3], z)


def test_ema_unit_axes_mixture():
    bank = MemoryBank([0], np.array([0]), 2, alpha=0.01, tau=1.0)
    bank.init_features(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]]))
    bank.ema_update(0, np.array([0.0, 1.0]), np.array([0.0, 1.0]))
    np.testing.assert_allclose(bank.m_long[0], [0.01, 0.99], atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.floats(min_value=0.0, max_value=1.0), st.integers(min_value=0, max_value=7))
def test_ema_exactness_bitwise(alpha, row):
    bank = _bank(alpha=alpha, seed=42)
    old = bank.m_long[row].copy()
    z = np.full(5, 0.25)
    bank.ema_update(row, z, z)
    expected = alpha * old + (1.0 - alpha) * z
    assert (bank.m_long[row] == expected).all()  # bitwise, same operation order


def test_ema_rejects_unknown_index():
    with pytest.raises(IndexError):
        _bank().ema_update(99, np.zeros(5), np.zeros(5))


def test_bank_rejects_bad_alpha_tau():
    with pytest.raises(ValueError):
        MemoryBank([0], np.array([0]), 2, alpha=1.5, tau=1.0)
    with pytest.raises(ValueError):
        MemoryBank([0], np.array([0]), 2, alpha=0.5, tau=0.0)


def test_bank_rejects_empty_class():
    with pytest.raises(ValueError, match="class 1"):
        MemoryBank([0, 1], np.array([0, 2]), 2, alpha=0.5, tau=1.0)


# -- class centers ---------------------------------------------------------------


def test_centers_two_member_mean():
    bank = MemoryBank([0, 1], np.array([0, 0]), 2, alpha=0.5, tau=1.0)
    bank.init_features(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([[1.0, 0.0], [0.0, 1.0]]))
    c = class_centers(bank)
    np.testing.assert_allclose(c.mu_long[0], [0.5, 0.5], atol=1e-15)
    np.testing.assert_array_equal(c.mu_cat[0], np.concatenate([c.mu_long[0], c.mu_trans[0]]))


def test_centers_permutation_invariant():
    rng = np.random.default_rng(1)
    n, d = 9, 4
    labels = np.array([0, 1, 2] * 3)
    feats = rng.normal(size=(n, d))
    bank = MemoryBank(list(range(n)), labels, d, 0.5, 1.0)
    bank.init_features(feats, feats)
    perm = rng.permutation(n)
    bank2 = MemoryBank(list(range(n)), labels[perm], d, 0.5, 1.0)
    bank2.init_features(feats[perm], feats[perm])
    np.testing.assert_allclose(class_centers(bank).mu_long, class_centers(bank2).mu_long, atol=1e-12)


def test_centers_match_groupby_mean_oracle():
    bank = _bank(n=24, d=6, seed=3)
    c = class_centers(bank)
    for k in range(3):
        rows = [bank.m_long[j] for j in range(24) if bank.labels[j] == k]
        oracle = sum(rows) / len(rows)
        assert np.abs(c.mu_long[k] - oracle).max() <= 1e-12


def test_centers_recomputed_after_update():
    bank = _bank(alpha=0.0)
    before = class_centers(bank).mu_long.copy()
    bank.ema_update(0, -bank.m_long[0], -bank.m_trans[0])
    after = class_centers(bank).mu_long
    assert not np.allclose(before, after)


# -- contrastive loss -------------------------------------------------------------


def test_single_negative_closed_form():
    pos = T.tensor(np.array([1.0]))
    neg = T.tensor(np.array([[0.0]]))
    out = contrast_loss_from_scores(pos, neg, np.ones((1, 1)), tau=1.0)
    assert out.item() == pytest.approx(np.log1p(np.exp(-1.0)), abs=1e-12)
    assert out.item() == pytest.approx(0.31326, abs=1e-5)


def test_uniform_scores_give_log_m_plus_one():
    m = 7
    for tau in (0.7, 0.01):
        pos = T.tensor(np.array([0.4]))
        neg = T.tensor(np.full((1, m), 0.4))
        out = contrast_loss_from_scores(pos, neg, np.ones((1, m)), tau=tau)
        assert out.item() == pytest.approx(np.log(m + 1), rel=1e-12)


def test_end_to_end_closed_form_geometry():
    # one sample, center == z (sim 1), one orthogonal negative (sim 0), tau 1
    bank = MemoryBank([0, 1], np.array([0, 1]), 2, alpha=0.5, tau=1.0)
    bank.init_features(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([[1.0, 0.0], [0.0, 1.0]]))
    z = T.tensor(np.array([[1.0, 0.0]]))
    loss = center_contrast_loss(bank, class_centers(bank), z, z, np.array([0]))
    assert loss.item() == pytest.approx(2 * np.log1p(np.exp(-1.0)), abs=1e-12)


def test_rotation_invariance():
    rng = np.random.default_rng(5)
    bank = _bank(n=12, d=6, tau=0.1, seed=6)
    q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    z = rng.normal(size=(4, 6))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    labels = np.array([0, 1, 2, 0])
    base = center_contrast_loss(bank, class_centers(bank), T.tensor(z), T.tensor(z), labels).item()
    bank_rot = MemoryBank(bank.indices, bank.labels, 6, bank.alpha, bank.tau)
    bank_rot.init_features(bank.m_long @ q.T, bank.m_trans @ q.T)
    rotated = center_contrast_loss(
        bank_rot, class_centers(bank_rot), T.tensor(z @ q.T), T.tensor(z @ q.T), labels
    ).item()
    assert abs(base - rotated) <= 1e-10


def test_appending_negative_strictly_increases_loss():
    rng = np.random.default_rng(7)
    pos = T.tensor(np.array([0.3]))
    sims = rng.uniform(-1, 1, size=6)
    small = contrast_loss_from_scores(T.tensor(pos.data), T.tensor(sims[None, :5]), np.ones((1, 5)), 0.5)
    big = contrast_loss_from_scores(T.tensor(pos.data), T.tensor(sims[None, :]), np.ones((1, 6)), 0.5)
    assert big.item() > small.item()


def test_loss_positive_and_decreasing_toward_perfect_geometry():
    taus = 0.2
    m = 5
    prev = None
    for t in np.linspace(0.0, 1.0, 11):
        pos = T.tensor(np.array([t]))
        neg = T.tensor(np.full((1, m), -t))
        val = contrast_loss_from_scores(pos, neg, np.ones((1, m)), taus).item()
        assert val > 0
        if prev is not None:
            assert val < prev
        prev = val
    assert prev < 1e-3  # approaches zero at the ideal geometry


def test_temperature_scaling_equivalence():
    rng = np.random.default_rng(8)
    pos = rng.uniform(-1, 1, size=3)
    neg = rng.uniform(-1, 1, size=(3, 10))
    mask = (rng.uniform(size=(3, 10)) > 0.3).astype(float)
    mask[:, 0] = 1.0
    tau, t = 0.05, 3.7
    a = contrast_loss_from_scores(T.tensor(pos), T.tensor(neg), mask, tau * t)
    b = contrast_loss_from_scores(T.tensor(pos / t), T.tensor(neg / t), mask, tau)
    np.testing.assert_allclose(a.data, b.data, atol=1e-10)


def test_gradient_matches_finite_differences_and_bank_is_constant():
    rng = np.random.default_rng(9)
    bank = _bank(n=10, d=5, tau=0.5, seed=10)
    z_l = rng.normal(size=(3, 5))
    z_t = rng.normal(size=(3, 5))
    labels = np.array([0, 1, 2])

    zl_t = T.tensor(z_l, requires_grad=True)
    zt_t = T.tensor(z_t, requires_grad=True)
    loss = center_contrast_loss(bank, class_centers(bank), zl_t, zt_t, labels)
    bank_before = bank.m_long.copy()
    loss.backward()
    np.testing.assert_array_equal(bank.m_long, bank_before)  # constants untouched

    for arr, tens in ((z_l, zl_t), (z_t, zt_t)):
        fd = finite_difference_grad(
            lambda: center_contrast_loss(
                bank, class_centers(bank), T.tensor(z_l), T.tensor(z_t), labels
            ).item(),
            arr,
        )
        assert max_rel_err(tens.grad, fd) <= 1e-4


def test_zero_norm_feature_rejected():
    bank = _bank()
    z = np.zeros((1, 5))
    with pytest.raises(ValueError, match="zero-norm"):
        center_contrast_loss(bank, class_centers(bank), T.tensor(z), T.tensor(z), np.array([0]))


def test_low_temperature_stays_finite():
    bank = _bank(tau=0.01)
    rng = np.random.default_rng(11)
    z = rng.normal(size=(4, 5))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    loss = center_contrast_loss(bank, class_centers(bank), T.tensor(z), T.tensor(z), np.array([0, 1, 2, 0]))
    assert np.isfinite(loss.item())
