import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pigreg.mathfun import softplus
from pigreg.nn import SHIFT_EXCESS, AdamState, Mlp, TapeReusedError, adam_step


def _zero_net(head, d=3, out=2, hidden=4, bias=0.3):
    net = Mlp([d, hidden, out], head, np.random.default_rng(0))
    for k in net.params:
        net.params[k][:] = 0.0
    net.params["b1"][:] = bias
    return net


def test_zero_weights_identity_head():
    net = _zero_net("identity")
    y = net(np.random.default_rng(1).normal(size=(5, 3)))
    np.testing.assert_array_equal(y, np.full((5, 2), 0.3))


def test_zero_weights_shift_head():
    net = _zero_net("softplus_shift1")
    y = net(np.ones((4, 3)))
    np.testing.assert_allclose(y, 1.0 + softplus(0.3) + SHIFT_EXCESS, rtol=1e-12)
    assert np.all(y > 1.0)


def test_heads_at_extreme_preactivations():
    z = np.concatenate([np.array([-100.0, 100.0, -745.0, 0.0]), np.random.default_rng(2).uniform(-100, 100, 10_000)])
    for head, floor in (("softplus_shift1", 1.0), ("softplus", 0.0)):
        net = Mlp([1, 1], head, params={"W0": np.array([[1.0]]), "b0": np.zeros(1)})
        y = net(z[:, None])
        if head == "softplus_shift1":
            assert np.all(y - 1.0 > 0.0)
        else:
            assert np.all(y[np.abs(z) <= 700] > floor)


def test_forward_is_pure(rng):
    net = Mlp([3, 6, 1], "softplus", rng)
    x = rng.normal(size=(8, 3))
    assert np.array_equal(net(x), net(x))


def test_shape_errors(rng):
    net = Mlp([3, 4, 1], "identity", rng)
    with pytest.raises(ValueError):
        net(np.zeros((2, 4)))
    y, tape = net.forward(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        net.backward(tape, np.zeros((3, 1)))


def test_double_backward_rejected(rng):
    net = Mlp([2, 3, 1], "identity", rng)
    y, tape = net.forward(rng.normal(size=(4, 2)))
    net.backward(tape, np.ones_like(y))
    with pytest.raises(TapeReusedError):
        net.backward(tape, np.ones_like(y))


@st.composite
def nets(draw):
    seed = draw(st.integers(0, 2**31))
    head = draw(st.sampled_from(["identity", "softplus", "softplus_shift1"]))
    layers = draw(st.integers(1, 3))
    r = np.random.default_rng(seed)
    sizes = [int(r.integers(1, 4))] + [int(r.integers(2, 6)) for _ in range(layers - 1)] + [int(r.integers(1, 3))]
    net = Mlp(sizes, head, r)
    for k in net.params:
        net.params[k] += r.normal(0, 0.3, net.params[k].shape)
    x = r.normal(size=(int(r.integers(1, 6)), sizes[0]))
    w = r.normal(size=(x.shape[0], sizes[-1]))
    return net, x, w


@given(nets())
def test_backward_matches_finite_differences(case):
    net, x, w = case
    loss = lambda: float(np.sum(w * np.sin(net(x))))
    y, tape = net.forward(x)
    grads, dx = net.backward(tape, w * np.cos(y))
    h = 1e-5
    for name, p in net.params.items():
        for i in range(p.size):
            old = p.flat[i]
            p.flat[i] = old + h
            up = loss()
            p.flat[i] = old - h
            down = loss()
            p.flat[i] = old
            fd = (up - down) / (2 * h)
            assert abs(grads[name].flat[i] - fd) <= 1e-5 * max(1.0, abs(fd))
    for i in range(x.size):
        old = x.flat[i]
        x.flat[i] = old + h
        up = loss()
        x.flat[i] = old - h
        down = loss()
        x.flat[i] = old
        assert abs(dx.flat[i] - (up - down) / (2 * h)) <= 1e-5 * max(1.0, abs(dx.flat[i]))


@given(nets())
def test_zero_upstream_gives_zero_grads(case):
    net, x, _ = case
    y, tape = net.forward(x)
    grads, dx = net.backward(tape, np.zeros_like(y))
    assert all(not np.any(g) for g in grads.values())
    assert not np.any(dx)


@given(nets())
def test_batch_gradient_is_sum_of_examples(case):
    net, x, w = case
    y, tape = net.forward(x)
    total, _ = net.backward(tape, w)
    acc = {k: np.zeros_like(v) for k, v in net.params.items()}
    for i in range(len(x)):
        _, t = net.forward(x[i : i + 1])
        g, _ = net.backward(t, w[i : i + 1])
        for k in acc:
            acc[k] += g[k]
    for k in acc:
        np.testing.assert_allclose(total[k], acc[k], rtol=1e-12, atol=1e-12)


def test_checkpoint_round_trip_is_bit_exact(rng):
    net = Mlp([3, 7, 2], "softplus_shift1", rng)
    back = Mlp.from_json(net.to_json())
    assert back.sizes == net.sizes and back.head == net.head
    for k in net.params:
        assert np.array_equal(back.params[k], net.params[k])
    x = rng.normal(size=(5, 3))
    assert np.array_equal(back(x), net(x))


def test_checkpoint_rejects_unknown_format(rng):
    d = Mlp([1, 1], "identity", rng).to_dict()
    d["format"] = "mlp/9"
    with pytest.raises(ValueError):
        Mlp.from_dict(d)


@given(st.floats(-10, 10).filter(lambda g: abs(g) > 1e-3), st.floats(1e-4, 0.1))
def test_adam_first_step_is_lr_sign(g, lr):
    params = {"w": np.array([0.5])}
    adam_step(params, {"w": np.array([g])}, AdamState(lr=lr))
    assert params["w"][0] - 0.5 == pytest.approx(-lr * np.sign(g), abs=1e-6)


def test_adam_zero_gradient_no_change():
    params = {"w": np.array([1.0, -2.0])}
    state = AdamState()
    for _ in range(100):
        adam_step(params, {"w": np.zeros(2)}, state)
    np.testing.assert_array_equal(params["w"], [1.0, -2.0])


def test_adam_quadratic_convergence():
    params = {"t": np.array([0.0])}
    state = AdamState(lr=0.05)
    for _ in range(2000):
        adam_step(params, {"t": 2.0 * (params["t"] - 3.0)}, state)
    assert abs(params["t"][0] - 3.0) <= 1e-3


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState())
