import numpy as np
import pytest

from fusecurr import micrograd as mg
from fusecurr.errors import ParseError, ShapeError


def projected(forward, backward, shapes, seed=0):
    """Scalar loss <w, forward(**params)> with its analytic gradient."""
    rng = np.random.default_rng(seed)
    params = {k: rng.standard_normal(s) for k, s in shapes.items()}
    out = forward(**params)
    w = rng.standard_normal(out.shape)

    def fn(p):
        y = forward(**p)
        return float(np.sum(w * y)), backward(w, p, y)

    return fn, params


def test_conv_gradients():
    def fwd(x, k, b):
        return mg.conv2d_forward(x, k, b)

    def bwd(w, p, y):
        gx, gk, gb = mg.conv2d_backward(w, p["x"], p["k"])
        return {"x": gx, "k": gk, "b": gb}

    fn, params = projected(fwd, bwd, {"x": (3, 6, 7), "k": (4, 3, 3, 3), "b": (4,)})
    report = mg.grad_check(fn, params)
    assert report.passed, report
    assert report.checked == params["x"].size + params["k"].size + 4


def test_linear_gradients_are_tight():
    def fwd(x, W, b):
        return mg.linear_forward(x, W, b)

    def bwd(w, p, y):
        gx, gW, gb = mg.linear_backward(w, p["x"], p["W"])
        return {"x": gx, "W": gW, "b": gb}

    fn, params = projected(fwd, bwd, {"x": (5, 6), "W": (3, 6), "b": (3,)})
    assert mg.grad_check(fn, params).max_rel_error < 1e-7


def test_relu_sigmoid_pool_gradients():
    rng = np.random.default_rng(3)
    # keep relu inputs away from the kink
    x0 = rng.uniform(0.05, 1.0, (2, 4, 6)) * rng.choice([-1.0, 1.0], (2, 4, 6))
    w = rng.standard_normal((2, 2, 3))

    def fn(p):
        a = mg.relu_forward(p["x"])
        s = mg.sigmoid_forward(a)
        y = mg.avgpool2_forward(s)
        g = mg.avgpool2_backward(w)
        g = mg.sigmoid_backward(g, s)
        return float(np.sum(w * y)), {"x": mg.relu_backward(g, p["x"])}

    assert mg.grad_check(fn, {"x": x0}).passed


def test_three_layer_composition():
    rng = np.random.default_rng(8)
    params = {
        "k1": rng.standard_normal((4, 2, 3, 3)) * 0.5, "b1": rng.standard_normal(4) * 0.1,
        "k2": rng.standard_normal((3, 4, 3, 3)) * 0.5, "b2": rng.standard_normal(3) * 0.1,
        "k3": rng.standard_normal((1, 3, 3, 3)) * 0.5, "b3": rng.standard_normal(1) * 0.1,
    }
    x = rng.standard_normal((2, 8, 8))
    target = rng.random((1, 8, 8))

    def forward(p):
        h1 = mg.conv2d_forward(x, p["k1"], p["b1"])
        a1 = np.tanh(h1)
        h2 = mg.conv2d_forward(a1, p["k2"], p["b2"])
        a2 = np.tanh(h2)
        y = mg.sigmoid_forward(mg.conv2d_forward(a2, p["k3"], p["b3"]))
        return (h1, a1, h2, a2, y)

    def fn(p):
        h1, a1, h2, a2, y = forward(p)
        loss, g = mg.mse_loss(y, target)
        g = mg.sigmoid_backward(g, y)
        g, gk3, gb3 = mg.conv2d_backward(g, a2, p["k3"])
        g = g * (1 - a2**2)
        g, gk2, gb2 = mg.conv2d_backward(g, a1, p["k2"])
        g = g * (1 - a1**2)
        _, gk1, gb1 = mg.conv2d_backward(g, x, p["k1"])
        return loss, {"k1": gk1, "b1": gb1, "k2": gk2, "b2": gb2, "k3": gk3, "b3": gb3}

    assert mg.grad_check(fn, params).passed


def test_corrupted_backward_is_caught():
    def fwd(x, k, b):
        return mg.conv2d_forward(x, k, b)

    def bwd(w, p, y):
        gx, gk, gb = mg.conv2d_backward(w, p["x"], p["k"])
        return {"x": gx, "k": gk * 1.01, "b": gb}

    fn, params = projected(fwd, bwd, {"x": (2, 5, 5), "k": (2, 2, 3, 3), "b": (2,)})
    report = mg.grad_check(fn, params)
    assert not report.passed
    assert report.worst.startswith("k[")


def test_identity_kernel_and_adjoint(rng):
    x = rng.standard_normal((3, 5, 6))
    k = np.zeros((3, 3, 3, 3))
    for c in range(3):
        k[c, c, 1, 1] = 1.0
    np.testing.assert_array_equal(mg.conv2d_forward(x, k, np.zeros(3)), x)
    g = rng.standard_normal(x.shape)
    gx, _, _ = mg.conv2d_backward(g, x, k)
    np.testing.assert_array_equal(gx, g)


def test_all_ones_kernel_on_constant():
    x = np.full((1, 5, 5), 0.3)
    y = mg.conv2d_forward(x, np.ones((1, 1, 3, 3)), np.zeros(1))
    np.testing.assert_allclose(y, 2.7, atol=1e-15)


def test_zero_grad_out(rng):
    x = rng.standard_normal((2, 4, 4))
    k = rng.standard_normal((3, 2, 3, 3))
    for g in mg.conv2d_backward(np.zeros((3, 4, 4)), x, k):
        assert not g.any()


def test_shape_errors():
    with pytest.raises(ShapeError):
        mg.conv2d_forward(np.zeros((2, 4, 4)), np.zeros((1, 3, 3, 3)), np.zeros(1))
    with pytest.raises(ShapeError):
        mg.conv2d_forward(np.zeros((1, 4, 4)), np.zeros((1, 1, 5, 5)), np.zeros(1))
    with pytest.raises(ShapeError):
        mg.avgpool2_forward(np.zeros((1, 5, 4)))
    with pytest.raises(ShapeError):
        mg.mse_loss(np.zeros(3), np.zeros(4))


def test_activation_examples():
    np.testing.assert_array_equal(mg.relu_forward(np.array([-1.0, 2.0])), [0.0, 2.0])
    np.testing.assert_array_equal(mg.relu_backward(np.ones(3), np.array([-1.0, 0.0, 2.0])), [0, 0, 1])
    y = mg.sigmoid_forward(np.zeros(1))
    assert y[0] == 0.5
    assert mg.sigmoid_backward(np.ones(1), y)[0] == 0.25


def test_mse_examples():
    loss, g = mg.mse_loss(np.ones(4), np.ones(4))
    assert loss == 0.0 and not g.any()
    loss, g = mg.mse_loss(np.array(1.0), np.array(0.0))
    assert loss == 1.0 and g == 2.0


def test_adam_zero_gradient():
    p = {"w": np.array([1.0, -2.0])}
    new, state = mg.adam_step(p, {"w": np.zeros(2)}, mg.AdamState(), 0.1)
    np.testing.assert_array_equal(new["w"], p["w"])
    assert state.step == 1


@pytest.mark.parametrize("scale", [1.0, 1e-3, 250.0])
def test_adam_first_step_is_lr_sign(scale):
    lr = 0.01
    p = {"w": np.array([0.5, 0.5])}
    new, _ = mg.adam_step(p, {"w": scale * np.array([1.0, -1.0])}, mg.AdamState(), lr)
    delta = new["w"] - p["w"]
    assert np.all(np.abs(delta) >= 0.99 * lr) and np.all(np.abs(delta) <= lr)
    np.testing.assert_array_equal(np.sign(delta), [-1.0, 1.0])


def test_adam_converges_on_parabola():
    p = {"x": np.array([1.0])}
    opt = mg.Adam(0.1)
    for _ in range(200):
        opt.step(p, {"x": 2.0 * p["x"]})
    assert abs(p["x"][0]) < 0.05
    assert opt.state.step == 200


def test_adam_is_deterministic(rng):
    p = {"a": rng.standard_normal((3, 2)), "b": rng.standard_normal(4)}
    g = {k: rng.standard_normal(v.shape) for k, v in p.items()}
    one, s1 = mg.adam_step(p, g, mg.AdamState(), 0.01)
    two, s2 = mg.adam_step(p, g, mg.AdamState(), 0.01)
    for k in p:
        np.testing.assert_array_equal(one[k], two[k])
        np.testing.assert_array_equal(s1.m[k], s2.m[k])


def test_checkpoint_round_trip(tmp_path, rng):
    tensors = {"a.w": rng.standard_normal((2, 3, 3, 3)), "b": np.array([np.pi]), "s": np.array(1.5)}
    path = tmp_path / "x.fckpt"
    mg.save_checkpoint(path, tensors)
    back = mg.load_checkpoint(path)
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].shape == tensors[k].shape
        assert back[k].tobytes() == tensors[k].tobytes()
    raw = path.read_bytes()
    assert raw.startswith(b"FCKPT1\x03\x00\x00\x00a.w\x04\x00\x00\x00\x02\x00\x00\x00")


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.fckpt"
    bad.write_bytes(b"NOTCKPT")
    with pytest.raises(ParseError):
        mg.load_checkpoint(bad)
    good = tmp_path / "good.fckpt"
    mg.save_checkpoint(good, {"w": np.ones(10)})
    bad.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(ParseError):
        mg.load_checkpoint(bad)
