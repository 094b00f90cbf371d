"""Network numerics tests.  The central-difference oracle only ever calls
forward passes, so it independently verifies every analytic gradient."""

import math

import numpy as np
import pytest

from stepstone import nn
from stepstone.nn import Adam, LstmCell, Mlp


def mlp_loss_and_grads(mlp, x, target):
    y, cache = mlp.forward(x)
    diff = y - target
    loss = float((diff * diff).sum())
    _, grads = mlp.backward(cache, 2.0 * diff)
    return loss, grads


# -- forward contracts ---------------------------------------------------------


def test_identity_single_layer_is_affine(rng):
    mlp = Mlp([3, 2], rng, out_activation="identity")
    x = rng.standard_normal((4, 3))
    y = mlp(x)
    expect = x @ mlp.params["W0"] + mlp.params["b0"]
    assert np.allclose(y, expect, atol=1e-15)


def test_relu_clamps_negative_preactivations(rng):
    mlp = Mlp([2, 2, 2], rng, hidden_activation="relu")
    mlp.params["W0"] = np.array([[1.0, 0.0], [0.0, 1.0]])
    mlp.params["b0"] = np.array([-10.0, 0.0])
    x = np.array([[1.0, 2.0]])
    y, cache = mlp.forward(x)
    hidden = cache[1][0]
    assert hidden[0, 0] == 0.0, "first unit driven below zero must clamp"
    assert hidden[0, 1] == 2.0


def test_lstm_zero_weights_zero_state_gives_zero_output():
    cell = LstmCell(3, 4, np.random.default_rng(0))
    for k in cell.params:
        cell.params[k][...] = 0.0
    h, c = cell.zero_state(2)
    x = np.ones((2, 3))
    h2, c2, _ = cell.step(x, h, c)
    assert np.allclose(h2, 0.0), "o=0.5, c2=0 -> h2 = 0.5*tanh(0) = 0"
    assert np.allclose(c2, 0.0)


def test_lstm_outputs_bounded(rng):
    cell = LstmCell(5, 8, rng)
    h, c = cell.zero_state(3)
    for _ in range(20):
        x = 10.0 * rng.standard_normal((3, 5))
        h, c, _ = cell.step(x, h, c)
    assert np.abs(h).max() < 1.0, "|h| < 1 by construction (o*tanh(c))"


def test_lstm_cell_matches_hand_computed_gates():
    # Independent oracle: explicit scalar gate equations, no shared code.
    cell = LstmCell(2, 2, np.random.default_rng(3))
    rng = np.random.default_rng(11)
    for k in cell.params:
        cell.params[k] = rng.uniform(-0.5, 0.5, size=cell.params[k].shape)
    x = np.array([[0.3, -0.7]])
    h = np.array([[0.1, -0.2]])
    c = np.array([[0.05, 0.4]])
    h2, c2, _ = cell.step(x, h, c)

    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    Wx, Wh, b = cell.params["Wx"], cell.params["Wh"], cell.params["b"]
    for unit in range(2):
        pre = [
            sum(x[0, a] * Wx[a, gate * 2 + unit] for a in range(2))
            + sum(h[0, a] * Wh[a, gate * 2 + unit] for a in range(2))
            + b[gate * 2 + unit]
            for gate in range(4)
        ]
        i, f = sig(pre[0]), sig(pre[1])
        g, o = math.tanh(pre[2]), sig(pre[3])
        c_exp = f * c[0, unit] + i * g
        h_exp = o * math.tanh(c_exp)
        assert abs(c2[0, unit] - c_exp) < 1e-14, f"cell state unit {unit}"
        assert abs(h2[0, unit] - h_exp) < 1e-14, f"hidden unit {unit}"


def test_forget_bias_initialized_open(rng):
    cell = LstmCell(3, 5, rng)
    assert np.all(cell.params["b"][5:10] == 1.0)
    assert np.all(cell.params["b"][:5] == 0.0)


def test_orthogonal_recurrent_init(rng):
    cell = LstmCell(3, 6, rng)
    for gate in range(4):
        block = cell.params["Wh"][:, gate * 6:(gate + 1) * 6]
        assert np.allclose(block @ block.T, np.eye(6), atol=1e-10)


# -- gradients ------------------------------------------------------------------


def test_scalar_chain_rule_exact():
    mlp = Mlp([1, 1, 1], np.random.default_rng(0), hidden_activation="tanh")
    mlp.params["W0"][...] = 0.7
    mlp.params["b0"][...] = 0.1
    mlp.params["W1"][...] = -1.3
    mlp.params["b1"][...] = 0.0
    x = np.array([[0.5]])
    y, cache = mlp.forward(x)
    _, grads = mlp.backward(cache, np.ones_like(y))
    pre = 0.7 * 0.5 + 0.1
    t = math.tanh(pre)
    assert abs(y[0, 0] - (-1.3 * t)) < 1e-15
    assert abs(grads["W1"][0, 0] - t) < 1e-15
    assert abs(grads["W0"][0, 0] - (-1.3) * (1 - t * t) * 0.5) < 1e-14


def test_mlp_grads_match_finite_differences(rng):
    mlp = Mlp([4, 8, 8, 2], rng, hidden_activation="tanh")
    x = rng.standard_normal((5, 4))
    target = rng.standard_normal((5, 2))
    _, analytic = mlp_loss_and_grads(mlp, x, target)
    numeric = nn.finite_difference_grads(
        lambda: mlp_loss_and_grads(mlp, x, target)[0], mlp.params)
    err = nn.max_relative_error(analytic, numeric)
    assert err <= 1e-4, f"MLP gradient mismatch {err:.2e}"


def test_relu_mlp_grads_match_finite_differences(rng):
    # relu kinks can break central differences if a preactivation sits at 0;
    # random continuous inputs keep probes off the kink almost surely.
    mlp = Mlp([3, 16, 1], rng, hidden_activation="relu")
    x = rng.standard_normal((6, 3)) + 0.1
    target = np.zeros((6, 1))
    _, analytic = mlp_loss_and_grads(mlp, x, target)
    numeric = nn.finite_difference_grads(
        lambda: mlp_loss_and_grads(mlp, x, target)[0], mlp.params)
    assert nn.max_relative_error(analytic, numeric) <= 1e-4


def lstm_bptt_loss_and_grads(cell, xs):
    """Loss = sum over time of sum(h_t^2); exercises both dh and dc chains."""
    B = xs[0].shape[0]
    h, c = cell.zero_state(B)
    caches = []
    hs = []
    loss = 0.0
    for x in xs:
        h, c, cache = cell.step(x, h, c)
        caches.append(cache)
        hs.append(h)
        loss += float((h * h).sum())
    grads = cell.zero_grads()
    dh = np.zeros_like(h)
    dc = np.zeros_like(c)
    for t in reversed(range(len(xs))):
        dh = dh + 2.0 * hs[t]
        _, dh, dc = cell.backward_step(caches[t], dh, dc, grads)
    return loss, grads


def test_lstm_bptt_grads_match_finite_differences(rng):
    cell = LstmCell(3, 4, rng)
    xs = [rng.standard_normal((2, 3)) for _ in range(2)]
    _, analytic = lstm_bptt_loss_and_grads(cell, xs)
    numeric = nn.finite_difference_grads(
        lambda: lstm_bptt_loss_and_grads(cell, xs)[0], cell.params)
    err = nn.max_relative_error(analytic, numeric)
    assert err <= 1e-4, f"LSTM BPTT gradient mismatch {err:.2e}"


def test_lstm_gradcheck_many_seeds():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        cell = LstmCell(2, 3, rng)
        xs = [rng.standard_normal((2, 2)) for _ in range(2)]
        _, analytic = lstm_bptt_loss_and_grads(cell, xs)
        numeric = nn.finite_difference_grads(
            lambda: lstm_bptt_loss_and_grads(cell, xs)[0], cell.params)
        worst = max(worst, nn.max_relative_error(analytic, numeric))
    assert worst <= 1e-4, f"worst over 20 seeds {worst:.2e}"


def test_zero_upstream_gradient_gives_zero_grads(rng):
    mlp = Mlp([3, 4, 2], rng)
    x = rng.standard_normal((2, 3))
    _, cache = mlp.forward(x)
    dx, grads = mlp.backward(cache, np.zeros((2, 2)))
    assert np.all(dx == 0.0)
    assert all(np.all(g == 0.0) for g in grads.values())


# -- optimizer -------------------------------------------------------------------


def test_adam_zero_grad_is_noop(rng):
    mlp = Mlp([2, 2], rng)
    opt = Adam(mlp.params, lr=0.1)
    before = {k: v.copy() for k, v in mlp.params.items()}
    opt.step({k: np.zeros_like(v) for k, v in mlp.params.items()})
    for k in before:
        assert np.array_equal(mlp.params[k], before[k]), "zero gradient must not move params"


def test_adam_first_step_magnitude():
    # with bias correction the first step is lr * g/(|g| + eps') ~= lr
    params = {"w": np.array([1.0])}
    opt = Adam(params, lr=0.01)
    opt.step({"w": np.array([123.0])})
    assert abs((1.0 - params["w"][0]) - 0.01) < 1e-6
    params2 = {"w": np.array([1.0])}
    opt2 = Adam(params2, lr=0.01)
    opt2.step({"w": np.array([-123.0])})
    assert abs((params2["w"][0] - 1.0) - 0.01) < 1e-6, "sign-symmetric first step"


def test_adam_deterministic(rng):
    results = []
    for _ in range(2):
        r = np.random.default_rng(5)
        mlp = Mlp([3, 3], r)
        opt = Adam(mlp.params, lr=1e-3)
        for i in range(10):
            g = {k: np.full_like(v, 0.1 * (i + 1)) for k, v in mlp.params.items()}
            opt.step(g)
        results.append({k: v.copy() for k, v in mlp.params.items()})
    for k in results[0]:
        assert np.array_equal(results[0][k], results[1][k])


def test_grad_norm_clipping(rng):
    grads = {"a": np.array([3.0, 4.0])}
    norm = nn.clip_grads_(grads, max_norm=1.0)
    assert abs(norm - 5.0) < 1e-12
    assert abs(np.linalg.norm(grads["a"]) - 1.0) < 1e-9
    grads2 = {"a": np.array([0.3, 0.4])}
    nn.clip_grads_(grads2, max_norm=1.0)
    assert np.allclose(grads2["a"], [0.3, 0.4]), "under the cap grads pass through"


# -- serialization ----------------------------------------------------------------


def test_checkpoint_round_trip_bit_exact(tmp_path, rng):
    params = {"W0": rng.standard_normal((7, 5)), "b0": rng.standard_normal(5),
              "log_std": rng.standard_normal(3)}
    path = tmp_path / "ck.npz"
    nn.save_params(path, params, {"task": "demo", "ticks": 123})
    loaded, meta = nn.load_params(path)
    assert meta["task"] == "demo" and meta["ticks"] == 123
    assert set(loaded) == set(params)
    for k in params:
        assert np.array_equal(loaded[k], params[k]), f"{k} must round-trip bit-exact"


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "junk.npz"
    np.savez(path, a=np.zeros(3))
    with pytest.raises(ValueError):
        nn.load_params(path)


def test_json_export_mirrors_arrays(tmp_path):
    import json
    params = {"w": np.array([[1.5, -2.0]])}
    path = tmp_path / "ck.json"
    nn.export_params_json(path, params, {"k": 1})
    doc = json.loads(path.read_text())
    assert doc["params"]["w"] == [[1.5, -2.0]]
    assert doc["meta"]["k"] == 1
