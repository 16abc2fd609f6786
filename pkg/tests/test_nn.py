import numpy as np
import pytest

from flowtrace import nn
from flowtrace.errors import DimensionMismatch


def test_positional_encoding_zero_octaves(rng):
    x = rng.normal(size=(4, 3))
    assert np.array_equal(nn.positional_encoding(x, 0), x)


def test_positional_encoding_at_origin():
    pe = nn.positional_encoding(np.zeros((1, 3)), 4)
    assert pe.shape == (1, 3 + 6 * 4)
    sin_cols = pe[0, 3:].reshape(4, 2, 3)[:, 0]
    cos_cols = pe[0, 3:].reshape(4, 2, 3)[:, 1]
    assert np.all(sin_cols == 0.0)
    assert np.all(cos_cols == 1.0)


def test_positional_encoding_length():
    assert nn.positional_encoding(np.zeros((1, 3)), 6).shape[1] == 39


def test_mlp_zero_params_zero_output(rng):
    mlp = nn.MLP((3, 4, 2), rng)
    for i in range(mlp.n_layers):
        mlp.weights[i][:] = 0.0
        mlp.biases[i][:] = 0.0
    y, _ = mlp.forward(rng.normal(size=(5, 3)))
    assert np.all(y == 0.0)


def test_mlp_identity_single_layer(rng):
    mlp = nn.MLP((3, 3), rng, zero_last=False)
    mlp.weights[0] = np.eye(3)
    mlp.biases[0][:] = 0.0
    x = rng.normal(size=(7, 3))
    y, _ = mlp.forward(x)
    assert np.array_equal(y, x)


def test_mlp_hand_computation():
    mlp = nn.MLP((2, 2, 1), np.random.default_rng(0), zero_last=False)
    mlp.weights[0] = np.array([[1.0, -1.0], [0.5, 2.0]])
    mlp.biases[0] = np.array([0.1, -0.2])
    mlp.weights[1] = np.array([[2.0, 3.0]])
    mlp.biases[1] = np.array([0.5])
    x = np.array([[1.0, 2.0]])
    h = np.maximum(mlp.weights[0] @ x[0] + mlp.biases[0], 0.0)
    expected = mlp.weights[1] @ h + mlp.biases[1]
    y, _ = mlp.forward(x)
    assert np.allclose(y[0], expected)


def test_mlp_dimension_mismatch(rng):
    mlp = nn.MLP((3, 4), rng)
    with pytest.raises(DimensionMismatch):
        mlp.forward(np.zeros((2, 5)))


def test_backward_outer_product_rule(rng):
    mlp = nn.MLP((3, 2), rng, zero_last=False)
    x = rng.normal(size=(4, 3))
    up = rng.normal(size=(4, 2))
    _, tape = mlp.forward(x)
    grads, gx = mlp.backward(tape, up)
    assert np.allclose(grads[0][0], up.T @ x)
    assert np.allclose(grads[0][1], up.sum(axis=0))
    assert np.allclose(gx, up @ mlp.weights[0])


def test_backward_relu_gate(rng):
    mlp = nn.MLP((1, 1, 1), rng, zero_last=False)
    mlp.weights[0] = np.array([[1.0]])
    mlp.biases[0] = np.array([-2.0])  # negative preactivation for x < 2
    mlp.weights[1] = np.array([[1.0]])
    _, tape = mlp.forward(np.array([[1.0]]))
    grads, gx = mlp.backward(tape, np.array([[1.0]]))
    assert np.all(grads[0][0] == 0.0)
    assert gx[0, 0] == 0.0


def test_full_network_finite_differences(rng):
    mlp = nn.MLP((4, 8, 8, 2), rng, zero_last=False)
    x = rng.normal(size=(6, 4))
    w = rng.normal(size=(6, 2))
    params = mlp.named_params("m")

    def f(p):
        mlp.load_named("m", p)
        y, tape = mlp.forward(x)
        grads, _ = mlp.backward(tape, w)
        return float(np.sum(w * y)), mlp.named_grads("m", grads)

    assert nn.finite_diff_check(f, params, h=1e-5) < 1e-3


def test_adam_zero_gradient_no_change(rng):
    p = {"w": rng.normal(size=(3, 3))}
    before = p["w"].copy()
    opt = nn.Adam(p, lr=0.1)
    opt.step({"w": np.zeros((3, 3))})
    assert np.array_equal(p["w"], before)


def test_adam_first_step_sign(rng):
    g = rng.normal(size=(4,))
    p = {"w": np.zeros(4)}
    opt = nn.Adam(p, lr=0.01)
    opt.step({"w": g})
    assert np.allclose(p["w"], -0.01 * np.sign(g), atol=1e-6)


def test_adam_deterministic(rng):
    def run():
        r = np.random.default_rng(9)
        p = {"w": r.normal(size=(5,))}
        opt = nn.Adam(p, lr=0.03)
        for i in range(50):
            opt.step({"w": np.sin(p["w"] + i)})
        return p["w"]

    assert np.array_equal(run(), run())


def test_finite_diff_check_quadratic():
    params = {"t": np.array([1.0])}

    def f(p):
        return float(p["t"][0] ** 2), {"t": 2 * p["t"]}

    assert nn.finite_diff_check(f, params, h=1e-4) < 1e-6


def test_finite_diff_check_constant_function():
    params = {"t": np.array([0.3, -0.7])}

    def f(p):
        return 5.0, {"t": np.zeros(2)}

    assert nn.finite_diff_check(f, params, h=1e-4) == 0.0


def test_softplus_inverse_roundtrip(rng):
    y = rng.uniform(0.01, 5.0, 100)
    assert np.abs(nn.softplus(nn.softplus_inv(y)) - y).max() < 1e-9
