import math

import numpy as np
import pytest

from leakchain.nn_core import (
    AdamState,
    DivergenceError,
    Mlp,
    adamw_step,
    backward,
    clip_global_norm,
    cross_entropy,
    finite_diff_check,
    forward,
    load_checkpoint,
    save_checkpoint,
)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def test_forward_zero_weights_outputs_bias(rng):
    net = Mlp.init([3, 2], rng)
    net.weights[0][:] = 0.0
    net.biases[0][:] = [1.5, -0.5]
    y, _ = forward(net, rng.normal(size=(4, 3)))
    np.testing.assert_allclose(y, np.tile([1.5, -0.5], (4, 1)))


def test_forward_identity_single_layer(rng):
    net = Mlp([np.eye(3)], [np.zeros(3)])
    x = rng.normal(size=(5, 3))
    y, _ = forward(net, x)
    np.testing.assert_allclose(y, x)


def test_forward_hand_computed_two_by_two():
    net = Mlp(
        [np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[1.0], [-1.0]])],
        [np.array([0.0, -10.0]), np.array([0.5])],
    )
    # hidden pre-act: [1*1+1*3, 1*2+1*4-10] = [4, -4] -> relu [4, 0]
    # output: 4*1 + 0*(-1) + 0.5 = 4.5
    y, _ = forward(net, np.array([[1.0, 1.0]]))
    assert y[0, 0] == pytest.approx(4.5)


def test_forward_rejects_bad_width(rng):
    net = Mlp.init([3, 2], rng)
    with pytest.raises(ValueError):
        forward(net, np.zeros((2, 4)))


def test_backward_zero_upstream_gives_zero_grads(rng):
    net = Mlp.init([4, 8, 2], rng)
    x = rng.normal(size=(6, 4))
    y, cache = forward(net, x)
    grads, dx = backward(net, cache, np.zeros_like(y))
    assert all(np.all(g == 0.0) for g in grads)
    assert np.all(dx == 0.0)


def test_backward_linear_least_squares_closed_form(rng):
    net = Mlp.init([4, 1], rng)
    x = rng.normal(size=(10, 4))
    target = rng.normal(size=(10, 1))
    y, cache = forward(net, x)
    grads, _ = backward(net, cache, y - target)
    np.testing.assert_allclose(grads[0], x.T @ (y - target), atol=1e-12)


def test_gradcheck_mlp_cross_entropy(rng):
    from conftest import kink_safe_rows

    net = Mlp.init([5, 8, 8, 3], rng)
    x = kink_safe_rows(net, rng.normal(size=(300, 5)), want=7)
    labels = rng.integers(0, 3, size=7)

    def loss_fn(n):
        y, cache = forward(n, x)
        loss, d = cross_entropy(y, labels)
        grads, _ = backward(n, cache, d)
        return loss, grads

    res = finite_diff_check(net, loss_fn, tolerance=1e-4)
    assert res.passed, res


def test_gradcheck_catches_corrupted_gradient(rng):
    net = Mlp.init([4, 6, 2], rng)
    x = rng.normal(size=(5, 4))
    labels = rng.integers(0, 2, size=5)

    def bad_loss_fn(n):
        y, cache = forward(n, x)
        loss, d = cross_entropy(y, labels)
        grads, _ = backward(n, cache, d)
        grads[0] = grads[0] + 0.05  # deliberate corruption
        return loss, grads

    assert not finite_diff_check(net, bad_loss_fn, tolerance=1e-4).passed


def test_cross_entropy_uniform_logits(rng):
    for k in (2, 5, 9):
        logits = np.zeros((8, k))
        labels = rng.integers(0, k, size=8)
        loss, _ = cross_entropy(logits, labels)
        assert loss == pytest.approx(math.log(k), abs=1e-12)


def test_cross_entropy_confident_correct():
    logits = np.array([[100.0, 0.0], [0.0, 100.0]])
    loss, _ = cross_entropy(logits, np.array([0, 1]))
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_cross_entropy_hand_computed_batch():
    logits = np.array([[1.0, 2.0], [0.5, -0.5]])
    labels = np.array([1, 0])
    p1 = math.exp(2.0) / (math.exp(1.0) + math.exp(2.0))
    p2 = math.exp(0.5) / (math.exp(0.5) + math.exp(-0.5))
    want = -(math.log(p1) + math.log(p2)) / 2
    loss, d = cross_entropy(logits, labels)
    assert loss == pytest.approx(want, abs=1e-12)
    # gradient rows sum to zero: softmax minus onehot
    np.testing.assert_allclose(d.sum(axis=1), 0.0, atol=1e-12)


def test_cross_entropy_rejects_out_of_range_label():
    with pytest.raises(ValueError):
        cross_entropy(np.zeros((2, 3)), np.array([0, 3]))


def test_adamw_zero_grads_no_decay_keeps_params(rng):
    net = Mlp.init([3, 3], rng)
    params = net.params()
    before = [p.copy() for p in params]
    state = AdamState.for_params(params, lr=1e-2)
    adamw_step(params, [np.zeros_like(p) for p in params], state)
    for b, p in zip(before, params):
        np.testing.assert_array_equal(b, p)


def test_adamw_single_step_hand_computed():
    p = np.array([1.0])
    g = np.array([0.5])
    state = AdamState(lr=0.1, m=[np.zeros(1)], v=[np.zeros(1)])
    adamw_step([p], [g], state)
    # bias-corrected m-hat = g, v-hat = g^2 -> step = lr * g / (|g| + eps)
    want = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8)
    assert p[0] == pytest.approx(want, rel=1e-12)


def test_adamw_decoupled_decay_shrinks_params(rng):
    net = Mlp.init([3, 3], rng)
    params = net.params()
    before = [p.copy() for p in params]
    state = AdamState.for_params(params, lr=0.1, weight_decay=0.5)
    adamw_step(params, [np.zeros_like(p) for p in params], state)
    for b, p in zip(before, params):
        np.testing.assert_allclose(p, b * (1 - 0.1 * 0.5), atol=1e-15)


def test_adamw_rejects_nonfinite_grads(rng):
    net = Mlp.init([2, 2], rng)
    params = net.params()
    state = AdamState.for_params(params)
    grads = [np.full_like(p, np.nan) for p in params]
    with pytest.raises(DivergenceError):
        adamw_step(params, grads, state)


def test_determinism_identical_seeds_bitwise():
    def run():
        r = np.random.default_rng(123)
        net = Mlp.init([4, 8, 2], r)
        state = AdamState.for_params(net.params(), lr=1e-3)
        x = r.normal(size=(16, 4))
        labels = r.integers(0, 2, size=16)
        for _ in range(20):
            y, cache = forward(net, x)
            _, d = cross_entropy(y, labels)
            grads, _ = backward(net, cache, d)
            adamw_step(net.params(), grads, state)
        return net

    a, b = run(), run()
    for wa, wb in zip(a.params(), b.params()):
        np.testing.assert_array_equal(wa, wb)


def test_clip_global_norm():
    g = [np.array([3.0]), np.array([4.0])]
    norm = clip_global_norm(g, 1.0)
    assert norm == pytest.approx(5.0)
    assert g[0][0] == pytest.approx(0.6)
    assert g[1][0] == pytest.approx(0.8)
    g2 = [np.array([0.3])]
    clip_global_norm(g2, 1.0)
    assert g2[0][0] == pytest.approx(0.3)  # below cap: untouched


def test_checkpoint_roundtrip(tmp_path, rng):
    arrays = {"a": rng.normal(size=(3, 2)), "b": rng.normal(size=(4,))}
    path = tmp_path / "ckpt.npz"
    save_checkpoint(path, arrays)
    loaded = load_checkpoint(path)
    assert set(loaded) == {"a", "b"}
    for k in arrays:
        np.testing.assert_array_equal(arrays[k], loaded[k])
