"""Parameter-free gate and the expert ensemble."""

import numpy as np
import pytest

from dualview import tensor as T
from dualview.experts import ExpertEnsemble, gate_weights
from dualview.membank import ClassCenters
from dualview.seeding import rng_for
from helpers import finite_difference_grad, max_rel_err


def _centers(mu_long, mu_trans):
    mu_long = np.asarray(mu_long, dtype=np.float64)
    mu_trans = np.asarray(mu_trans, dtype=np.float64)
    return ClassCenters(mu_long, mu_trans, np.concatenate([mu_long, mu_trans], axis=1))


def _orthonormal_centers():
    # mu_cat rows = e1, e2, e3 in R^4
    mu = np.zeros((3, 4))
    mu[0, 0] = mu[1, 1] = mu[2, 2] = 1.0
    return _centers(mu[:, :2], mu[:, 2:])


def test_equal_similarities_give_uniform_weights():
    mu = np.tile(np.array([[1.0, 1.0, 1.0, 1.0]]), (3, 1))
    centers = _centers(mu[:, :2], mu[:, 2:])
    w = gate_weights(T.tensor([[0.3, 0.4]]), T.tensor([[0.1, 0.9]]), centers)
    np.testing.assert_allclose(w.data, np.full((1, 3), 1 / 3), atol=1e-12)


def test_one_zero_zero_similarities():
    centers = _orthonormal_centers()
    w = gate_weights(T.tensor([[1.0, 0.0]]), T.tensor([[0.0, 0.0]]), centers)
    np.testing.assert_allclose(w.data, [[0.576117, 0.211942, 0.211942]], atol=1e-4)


def test_scale_invariance_of_gate():
    rng = np.random.default_rng(0)
    centers = _centers(rng.normal(size=(3, 4)), rng.normal(size=(3, 4)))
    zl, zt = rng.normal(size=(2, 4)), rng.normal(size=(2, 4))
    w1 = gate_weights(T.tensor(zl), T.tensor(zt), centers).data
    w5 = gate_weights(T.tensor(5 * zl), T.tensor(5 * zt), centers).data
    assert np.abs(w1 - w5).max() <= 1e-10
    assert (w1.argmax(axis=1) == w5.argmax(axis=1)).all()


def test_simplex_invariant_on_random_batches():
    rng = np.random.default_rng(1)
    for _ in range(25):
        centers = _centers(rng.normal(size=(3, 5)), rng.normal(size=(3, 5)))
        w = gate_weights(T.tensor(rng.normal(size=(4, 5))), T.tensor(rng.normal(size=(4, 5))), centers).data
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-6)
        assert (w > 0).all() and (w < 1).all()


def test_softmax_shift_invariance_exact():
    rng = np.random.default_rng(2)
    s = rng.normal(size=(4, 3))
    shifted = T.softmax(T.tensor(s + 7.3), axis=1).data
    base = T.softmax(T.tensor(s), axis=1).data
    assert np.abs(shifted - base).max() <= 1e-10


def test_large_score_injection_approaches_one_hot():
    w = T.softmax(T.tensor([[100.0, 0.0, 0.0]]), axis=1).data
    assert w[0, 0] > 1.0 - 1e-10
    ens = ExpertEnsemble(6, 3, 3, rng_for(3, 7))
    z = np.random.default_rng(4).normal(size=(1, 6))
    gated = ens.forward(T.tensor(z), T.tensor(w)).data
    solo = T.linear(ens.expert_out(0, T.tensor(z)), ens.cls_w, ens.cls_b).data
    np.testing.assert_allclose(gated, solo, atol=1e-8)


def test_one_hot_weight_selects_single_expert_exactly():
    ens = ExpertEnsemble(6, 3, 3, rng_for(5, 7))
    rng = np.random.default_rng(6)
    z = rng.normal(size=(2, 6))
    for k in range(3):
        w = np.zeros((2, 3))
        w[:, k] = 1.0
        gated = ens.forward(T.tensor(z), T.tensor(w)).data
        solo = T.linear(ens.expert_out(k, T.tensor(z)), ens.cls_w, ens.cls_b).data
        np.testing.assert_array_equal(gated, solo)


def test_identical_experts_make_mass_split_irrelevant():
    ens = ExpertEnsemble(4, 3, 3, rng_for(7, 7))
    for src, dst in ((0, 1),):
        for ws, wd in zip(ens._experts[src], ens._experts[dst]):
            wd.data[...] = ws.data
    z = np.random.default_rng(8).normal(size=(2, 4))
    out_a = ens.forward(T.tensor(z), T.tensor(np.array([[0.7, 0.3, 0.0], [0.2, 0.8, 0.0]]))).data
    out_b = ens.forward(T.tensor(z), T.tensor(np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]))).data
    np.testing.assert_allclose(out_a, out_b, atol=1e-12)


def test_gradients_match_fd_through_gate_and_experts():
    rng = np.random.default_rng(9)
    ens = ExpertEnsemble(4, 3, 3, rng_for(10, 7))
    centers = _centers(rng.normal(size=(3, 3)), rng.normal(size=(3, 3)))
    z_l = rng.normal(size=(2, 3))
    z_t = rng.normal(size=(2, 3))
    z_f = rng.normal(size=(2, 4))
    probe = rng.normal(size=(2, 3))

    def value():
        w = gate_weights(T.tensor(z_l), T.tensor(z_t), centers)
        return T.tsum(ens.forward(T.tensor(z_f), w) * T.constant(probe)).item()

    zl_t = T.tensor(z_l, requires_grad=True)
    zf_t = T.tensor(z_f, requires_grad=True)
    w = gate_weights(zl_t, T.tensor(z_t), centers)
    T.tsum(ens.forward(zf_t, w) * T.constant(probe)).backward()

    assert max_rel_err(zl_t.grad, finite_difference_grad(value, z_l)) <= 1e-4
    assert max_rel_err(zf_t.grad, finite_difference_grad(value, z_f)) <= 1e-4
    w1 = ens._experts[1][0]
    fd_w = finite_difference_grad(value, w1.data, coords=range(0, w1.data.size, 3))
    assert max_rel_err(w1.grad, fd_w) <= 1e-4


def test_gate_stop_gradient_blocks_feature_path():
    rng = np.random.default_rng(11)
    centers = _centers(rng.normal(size=(3, 3)), rng.normal(size=(3, 3)))
    zl = T.tensor(rng.normal(size=(2, 3)), requires_grad=True)
    zt = T.tensor(rng.normal(size=(2, 3)), requires_grad=True)
    w = gate_weights(zl, zt, centers, stop_gradient=True)
    T.tsum(w).backward()
    assert zl.grad is None or not zl.grad.any()
    assert zt.grad is None or not zt.grad.any()


def test_zero_norm_inputs_rejected():
    centers = _orthonormal_centers()
    with pytest.raises(ValueError, match="zero-norm"):
        gate_weights(T.tensor([[0.0, 0.0]]), T.tensor([[0.0, 0.0]]), centers)
    bad = _centers(np.zeros((3, 2)), np.zeros((3, 2)))
    with pytest.raises(ValueError, match="zero-norm"):
        gate_weights(T.tensor([[1.0, 0.0]]), T.tensor([[0.0, 1.0]]), bad)


def test_single_expert_path_and_parameter_count():
    one = ExpertEnsemble(6, 3, 1, rng_for(12, 7))
    full = ExpertEnsemble(6, 3, 3, rng_for(12, 7))
    z = np.random.default_rng(13).normal(size=(2, 6))
    out = one.forward(T.tensor(z), None).data
    solo = T.linear(one.expert_out(0, T.tensor(z)), one.cls_w, one.cls_b).data
    np.testing.assert_array_equal(out, solo)
    n_one = sum(p.data.size for p in one.params)
    n_full = sum(p.data.size for p in full.params)
    assert n_one < n_full
    with pytest.raises(ValueError):
        full.forward(T.tensor(z), None)
    with pytest.raises(T.ShapeError):
        one.forward(T.tensor(np.zeros((2, 5))), None)
