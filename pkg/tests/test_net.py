import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rfcmotion import net
from rfcmotion.errors import ContractError


def test_zero_net_gives_zero():
    m = net.Mlp([3, 5, 2])
    for k in m.params:
        m.params[k][:] = 0.0
    assert np.array_equal(m(np.ones((4, 3))), np.zeros((4, 2)))


def test_identity_layer():
    m = net.Mlp([3, 3])
    m.params["W0"] = np.eye(3)
    x = np.random.default_rng(0).normal(size=(5, 3))
    assert np.array_equal(m(x), x)


def test_dimension_mismatch():
    with pytest.raises(ContractError):
        net.Mlp([3, 4, 2])(np.zeros((1, 4)))
    with pytest.raises(ContractError):
        net.Mlp([3])


def _reeval(m, x):
    """Relu network evaluated row by row with explicit sums in reverse order."""
    out = []
    for row in x:
        h = list(row)
        for k in range(m.n_layers):
            W, b = m.params[f"W{k}"], m.params[f"b{k}"]
            nxt = []
            for j in range(W.shape[1]):
                s = 0.0
                for i in reversed(range(W.shape[0])):
                    s += h[i] * W[i, j]
                s += b[j]
                nxt.append(max(s, 0.0) if k < m.n_layers - 1 else s)
            h = nxt
        out.append(h)
    return np.array(out)


def test_forward_matches_reordered_evaluation():
    rng = np.random.default_rng(1)
    m = net.Mlp([6, 16, 8, 3], rng=rng)
    for k in m.params:
        m.params[k] += rng.normal(size=m.params[k].shape) * 0.1
    x = rng.normal(size=(7, 6))
    assert np.abs(m(x) - _reeval(m, x)).max() < 1e-12


def test_forward_deterministic():
    m = net.Mlp([4, 8, 2], rng=np.random.default_rng(2))
    x = np.random.default_rng(3).normal(size=(3, 4))
    assert np.array_equal(m(x), m(x.copy()))


def test_mlp_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    m = net.Mlp([5, 7, 6, 3], rng=rng)
    x = rng.normal(size=(4, 5))
    target = rng.normal(size=(4, 3))

    def loss(p):
        return 0.5 * float(np.sum((m.forward(x, p)[0] - target) ** 2))
    y, acts = m.forward(x)
    grads, gx = m.backward(acts, y - target)
    assert net.gradient_check(loss, m.params, grads) < 1e-4
    # input gradient too
    eps = 1e-5
    num = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += eps
        xm[i] -= eps
        num[i] = (0.5 * np.sum((m(xp) - target) ** 2) - 0.5 * np.sum((m(xm) - target) ** 2)) / (2 * eps)
    assert np.abs(num - gx).max() / np.abs(num).max() < 1e-6


def test_zero_output_grad_gives_zero_grads():
    m = net.Mlp([4, 6, 2], rng=np.random.default_rng(5))
    _, acts = m.forward(np.ones((3, 4)))
    grads, gx = m.backward(acts, np.zeros((3, 2)))
    assert all(not np.any(g) for g in grads.values()) and not np.any(gx)


def test_gru_bptt_matches_finite_differences():
    rng = np.random.default_rng(6)
    g = net.Gru(3, 5, rng=rng)
    for k in g.params:
        g.params[k] += rng.normal(size=g.params[k].shape) * 0.2
    xs = rng.normal(size=(10, 2, 3))
    h0 = rng.normal(size=(2, 5)) * 0.5
    w = rng.normal(size=(10, 2, 5))

    def loss(p):
        return float(np.sum(g.forward(xs, h0, p)[0] * w))
    _, caches = g.forward(xs, h0)
    grads, gxs, gh0 = g.backward(caches, w)
    assert net.gradient_check(loss, g.params, grads) < 1e-4
    hp, hm = h0.copy(), h0.copy()
    hp[1, 2] += 1e-5
    hm[1, 2] -= 1e-5
    num = (np.sum(g.forward(xs, hp)[0] * w) - np.sum(g.forward(xs, hm)[0] * w)) / 2e-5
    assert num == pytest.approx(gh0[1, 2], rel=1e-6)


def test_gru_cell_shapes():
    g = net.Gru(3, 4)
    h, _ = g.cell(np.zeros((2, 3)), np.zeros((2, 4)))
    assert h.shape == (2, 4)


def test_adam_first_step_is_stepsize_times_sign():
    p = {"w": np.array([1.0, -2.0, 3.0])}
    opt = net.Adam(p)
    before = p["w"].copy()
    net.adam_step(p, {"w": np.array([0.5, -3.0, 1e-3])}, opt, 0.01)
    assert np.allclose(before - p["w"], 0.01 * np.array([1.0, -1.0, 1.0]), rtol=1e-4)


def test_adam_zero_grads_leave_params():
    p = {"w": np.array([1.0, 2.0])}
    opt = net.Adam(p)
    for _ in range(3):
        net.adam_step(p, {"w": np.zeros(2)}, opt, 0.1)
    assert np.array_equal(p["w"], [1.0, 2.0])


def test_adam_descends_convex_quadratic():
    A = np.diag([1.0, 10.0, 0.5])
    p = {"w": np.array([2.0, -1.0, 3.0])}
    opt = net.Adam(p)
    losses = []
    for _ in range(100):
        losses.append(0.5 * p["w"] @ A @ p["w"])
        net.adam_step(p, {"w": A @ p["w"]}, opt, 0.01)
    assert all(b < a for a, b in zip(losses[5:], losses[6:]))


def test_adam_shape_mismatch():
    p = {"w": np.zeros(2)}
    with pytest.raises(ContractError):
        net.Adam(p).step(p, {"w": np.zeros(3)}, 0.1)


def test_standard_normal_peak():
    assert net.gaussian_logprob([0.0], 1.0, [0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)
    assert net.gaussian_logprob([0.0], 1.0, [0.0]) == pytest.approx(-0.9189, abs=1e-4)


def test_logprob_matches_closed_form():
    rng = np.random.default_rng(7)
    mu, sd, v = rng.normal(size=3), rng.uniform(0.2, 2, size=3), rng.normal(size=3)
    ref = sum(-0.5 * ((a - m) / s) ** 2 - math.log(s) - 0.5 * math.log(2 * math.pi) for a, m, s in zip(v, mu, sd))
    assert net.gaussian_logprob(mu, sd, v) == pytest.approx(ref, abs=1e-12)


def test_deterministic_sample_is_mean():
    head = net.GaussianHead(3, variance=0.1)
    mean = np.array([0.1, -0.2, 0.3])
    assert np.array_equal(head.sample(mean, np.random.default_rng(0), deterministic=True), mean)


def test_sample_variance_monte_carlo():
    head = net.GaussianHead(1, variance=0.1)
    s = head.sample(np.zeros((100_000, 1)), np.random.default_rng(8))
    assert abs(s.var() - 0.1) / 0.1 < 0.02


def test_learned_head_positive_sigma():
    head = net.GaussianHead(2, learned=True)
    mean, std = head.split(np.array([[0.0, 1.0, -50.0, 3.0]]))
    assert np.all(std > 0)
    with pytest.raises(ContractError):
        net.GaussianHead(2, variance=0.0)


def test_seeded_sampling_reproducible():
    a = net.gaussian_sample(np.zeros(5), 0.3, np.random.default_rng(9))
    b = net.gaussian_sample(np.zeros(5), 0.3, np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_checkpoint_round_trip(tmp_path):
    arrays = {"a": np.arange(3.0), "b/c": np.eye(2)}
    net.save_checkpoint(tmp_path / "x.npz", arrays, {"epoch": 4})
    back, meta = net.load_checkpoint(tmp_path / "x.npz")
    assert meta["epoch"] == 4 and meta["format"] == net.CHECKPOINT_FORMAT
    assert all(np.array_equal(arrays[k], back[k]) for k in arrays)


@given(st.integers(0, 10_000))
def test_policy_sized_mlp_gradient_property(seed):
    rng = np.random.default_rng(seed)
    m = net.Mlp([4, 6, 5, 2], rng=rng, out_scale=0.01)
    # nonzero biases keep rows whose units are all inactive off the exact relu kink
    for k in ("b0", "b1"):
        m.params[k] += rng.uniform(0.05, 0.1, size=m.params[k].shape)
    x = rng.normal(size=(3, 4))
    y, acts = m.forward(x)
    grads, _ = m.backward(acts, np.ones_like(y))
    assert net.gradient_check(lambda p: float(m.forward(x, p)[0].sum()), m.params, grads) < 1e-4
