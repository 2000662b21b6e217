import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import kink_safe_rows
from leakchain.mine import (
    Critic,
    critic_step,
    dv_estimate,
    make_marginal_batch,
    mi_penalty_gradient,
    one_hot,
)
from leakchain.nn_core import DivergenceError, Mlp


def constant_critic(dim_o, dim_s, value=0.0):
    net = Mlp([np.zeros((dim_o + dim_s, 1))], [np.array([value])])
    return Critic(net)


def correlated_pairs(rng, b, rho=0.9):
    x = rng.normal(size=(b, 1))
    y = rho * x + math.sqrt(1 - rho * rho) * rng.normal(size=(b, 1))
    return x, y


def test_one_hot_basic():
    enc = one_hot(np.array([0, 2, 1]), 3)
    np.testing.assert_array_equal(
        enc, [[1, 0, 0], [0, 0, 1], [0, 1, 0]]
    )
    with pytest.raises(ValueError):
        one_hot(np.array([3]), 3)


def test_marginal_batch_is_permutation():
    rng = np.random.default_rng(0)
    s = np.arange(10, dtype=float).reshape(-1, 1)
    o = np.zeros((10, 2))
    shuf = make_marginal_batch(o, s, rng)
    assert sorted(shuf[:, 0]) == sorted(s[:, 0])


def test_marginal_batch_deterministic_in_seed():
    s = np.arange(8, dtype=float).reshape(-1, 1)
    o = np.zeros((8, 1))
    a = make_marginal_batch(o, s, np.random.default_rng(7))
    b = make_marginal_batch(o, s, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)


def test_marginal_batch_b2_hits_both_permutations():
    s = np.array([[0.0], [1.0]])
    o = np.zeros((2, 1))
    seen = set()
    for seed in range(40):
        shuf = make_marginal_batch(o, s, np.random.default_rng(seed))
        seen.add(tuple(shuf[:, 0]))
    assert seen == {(0.0, 1.0), (1.0, 0.0)}


def test_marginal_batch_rejects_small_batch():
    with pytest.raises(ValueError):
        make_marginal_batch(np.zeros((1, 1)), np.zeros((1, 1)),
                            np.random.default_rng(0))


def test_dv_estimate_constant_critic_is_zero():
    rng = np.random.default_rng(1)
    o = rng.normal(size=(16, 3))
    s = rng.normal(size=(16, 2))
    for c in (0.0, -3.0, 7.5):
        critic = constant_critic(3, 2, c)
        est = dv_estimate(critic, o, s, make_marginal_batch(o, s, rng))
        assert est.value == pytest.approx(0.0, abs=1e-12)


def test_dv_estimate_identity_invariant():
    rng = np.random.default_rng(2)
    critic = Critic.init(2, 2, rng, hidden=16)
    o, s = rng.normal(size=(32, 2)), rng.normal(size=(32, 2))
    est = dv_estimate(critic, o, s, make_marginal_batch(o, s, rng))
    assert est.value == pytest.approx(est.joint_mean - est.log_partition,
                                      abs=1e-12)
    assert math.isfinite(est.value)


@settings(max_examples=25, deadline=None)
@given(shift=st.floats(min_value=-20.0, max_value=20.0,
                       allow_nan=False, allow_infinity=False))
def test_dv_estimate_shift_covariance(shift):
    # adding a constant to every critic output cancels between the terms
    rng = np.random.default_rng(3)
    critic = Critic.init(2, 1, rng, hidden=16)
    o, s = correlated_pairs(rng, 64)
    o2 = np.concatenate([o, o], axis=1)
    shuf = make_marginal_batch(o2, s, rng)
    base = dv_estimate(critic, o2, s, shuf).value
    critic.net.biases[-1][:] += shift
    shifted = dv_estimate(critic, o2, s, shuf).value
    assert shifted == pytest.approx(base, abs=1e-9)


def test_dv_estimate_nonfinite_scores_raise():
    critic = constant_critic(1, 1)
    critic.net.weights[0][:] = np.inf
    o = np.ones((4, 1))
    s = np.ones((4, 1))
    with pytest.raises((DivergenceError, ValueError)):
        dv_estimate(critic, o, s, s[::-1])


def test_critic_step_zero_lr_updates_only_ema():
    rng = np.random.default_rng(4)
    critic = Critic.init(1, 1, rng, hidden=16)
    before = [p.copy() for p in critic.net.params()]
    assert critic.ema is None
    o, s = correlated_pairs(rng, 32)
    critic_step(critic, o, s, rng, lr=0.0)
    assert critic.ema is not None and critic.ema > 0
    for b, p in zip(before, critic.net.params()):
        np.testing.assert_array_equal(b, p)


def test_critic_step_first_ema_is_batch_mean():
    rng = np.random.default_rng(5)
    critic = constant_critic(1, 1, value=2.0)
    o, s = correlated_pairs(rng, 16)
    critic_step(critic, o, s, rng, lr=0.0)
    # constant score c: mean exp(T) = e^c regardless of the shuffle
    assert critic.ema == pytest.approx(math.exp(2.0), rel=1e-12)
    critic_step(critic, o, s, rng, lr=0.0)
    assert critic.ema == pytest.approx(math.exp(2.0), rel=1e-12)


def test_critic_step_ascends_on_correlated_data():
    rng = np.random.default_rng(6)
    critic = Critic.init(1, 1, rng, hidden=64)
    early, late = [], []
    for step in range(400):
        o, s = correlated_pairs(rng, 128, rho=0.9)
        est = critic_step(critic, o, s, rng, lr=2e-3)
        (early if step < 100 else late).append(est.value)
    assert np.mean(late[-100:]) > np.mean(early) + 0.05


def test_penalty_constant_critic_zero():
    rng = np.random.default_rng(7)
    critic = constant_critic(2, 1, value=1.0)
    o = rng.normal(size=(8, 2))
    s = rng.normal(size=(8, 1))
    pen, d_o = mi_penalty_gradient(critic, o, s, s[::-1])
    assert pen == 0.0
    assert np.all(d_o == 0.0)


def test_penalty_linear_critic_hand_gradient():
    # T = w_o * o + w_s * s with scalar o, s: closed-form gradient
    w_o, w_s = 0.7, -0.4
    critic = Critic(Mlp([np.array([[w_o], [w_s]])], [np.zeros(1)]))
    rng = np.random.default_rng(8)
    o = rng.normal(size=(6, 1)) + 1.0
    s = o + 0.1 * rng.normal(size=(6, 1))  # correlated so value > 0
    shuf = make_marginal_batch(o, s, rng)
    pen, d_o = mi_penalty_gradient(critic, o, s, shuf)
    t_marg = (o * w_o + shuf * w_s)[:, 0]
    soft = np.exp(t_marg - t_marg.max())
    soft /= soft.sum()
    want = w_o / len(o) - soft * w_o
    if pen > 0:
        np.testing.assert_allclose(d_o[:, 0], want, atol=1e-12)
    else:
        np.testing.assert_array_equal(d_o, 0.0)


def test_penalty_gradient_matches_finite_differences():
    rng = np.random.default_rng(9)
    critic = Critic.init(1, 1, rng, hidden=32)
    # train briefly so the clamp is inactive
    for _ in range(300):
        o, s = correlated_pairs(rng, 64, rho=0.95)
        critic_step(critic, o, s, rng, lr=2e-3)
    o, s = correlated_pairs(rng, 200, rho=0.95)
    rows = kink_safe_rows(critic.net, np.concatenate([o, s], axis=1),
                          margin=0.02, want=12)
    o, s = rows[:, :1].copy(), rows[:, 1:].copy()
    shuf = make_marginal_batch(o, s, np.random.default_rng(1))
    pen, d_o = mi_penalty_gradient(critic, o, s, shuf)
    assert pen > 0.05
    h = 1e-6
    worst = 0.0
    for i in range(len(o)):
        up, down = o.copy(), o.copy()
        up[i, 0] += h
        down[i, 0] -= h
        f_up = dv_estimate(critic, up, s, shuf).value
        f_dn = dv_estimate(critic, down, s, shuf).value
        num = (f_up - f_dn) / (2 * h)
        denom = max(abs(num), abs(d_o[i, 0]), 1e-8)
        worst = max(worst, abs(num - d_o[i, 0]) / denom)
    assert worst < 1e-4, worst


def test_critic_rejects_vector_output():
    rng = np.random.default_rng(10)
    with pytest.raises(ValueError):
        Critic(Mlp.init([4, 8, 2], rng))


def test_critic_rejects_bad_ema_rate():
    rng = np.random.default_rng(11)
    with pytest.raises(ValueError):
        Critic(Mlp.init([4, 8, 1], rng), ema_rate=1.0)
