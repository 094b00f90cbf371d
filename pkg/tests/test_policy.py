"""Policy architecture contracts: command isolation, BPTT gradients through
the full network, the raw-to-physical action map, and snapshot transfer."""

import numpy as np
import pytest
from scipy import stats

from stepstone import nn, policy as pol
from stepstone.policy import (
    ACTION_DIM, COMMAND_DIM, OBS_DIM, PROPRIO_DIM, Policy, PolicyConfig,
    action_from_raw, clock_encoding, gaussian_log_prob, load_dynamics_module,
    save_dynamics_snapshot,
)
from stepstone.sim import DPHI_NOMINAL, ConfigError


def small_policy(seed=0, **kw):
    cfg = PolicyConfig(lstm_hidden=8, head_hidden=(8,), value_hidden=(8,), **kw)
    return Policy(cfg, np.random.default_rng(seed))


def test_command_inputs_bypass_the_recurrent_path(rng):
    p = small_policy()
    obs_a = rng.standard_normal((3, OBS_DIM))
    obs_b = obs_a.copy()
    obs_b[:, PROPRIO_DIM:] = rng.standard_normal((3, OBS_DIM - PROPRIO_DIM))
    h, c = p.zero_state(3)
    mean_a, _, ha, ca, _ = p.forward_step(obs_a, h, c)
    mean_b, _, hb, cb, _ = p.forward_step(obs_b, h, c)
    assert np.array_equal(ha, hb), "recurrent state must ignore clock and command"
    assert np.array_equal(ca, cb)
    assert not np.allclose(mean_a, mean_b), "heads must react to the command"


def test_forward_deterministic_replay(rng):
    p = small_policy()
    obs = rng.standard_normal((4, 2, OBS_DIM))
    resets = np.zeros((4, 2), dtype=bool)
    resets[0] = True
    m1, v1, _, _ = p.forward_sequence(obs, resets)
    m2, v2, _, _ = p.forward_sequence(obs, resets)
    assert np.array_equal(m1, m2) and np.array_equal(v1, v2)


def test_resets_zero_the_hidden_state(rng):
    p = small_policy()
    obs = rng.standard_normal((3, 1, OBS_DIM))
    resets = np.zeros((3, 1), dtype=bool)
    resets[0] = True
    resets[2] = True  # episode restart mid-window
    means, _, _, _ = p.forward_sequence(obs, resets)
    # the restarted step must equal running the same obs from a fresh state
    h, c = p.zero_state(1)
    mean_fresh, _, _, _, _ = p.forward_step(obs[2], h, c)
    assert np.allclose(means[2], mean_fresh)


def test_sequence_backward_matches_finite_differences(rng):
    p = small_policy(seed=3)
    T, B = 3, 2
    obs = rng.standard_normal((T, B, OBS_DIM))
    resets = np.zeros((T, B), dtype=bool)
    resets[0] = True
    resets[2, 1] = True  # cut gradient flow for env 1

    def loss_fn():
        means, values, _, _ = p.forward_sequence(obs, resets)
        return float((means ** 2).sum() + (values ** 2).sum())

    means, values, _, caches = p.forward_sequence(obs, resets)
    analytic = p.backward_sequence(caches, resets, 2.0 * means, 2.0 * values)
    keys = [k for k in p.params() if k != "log_std"]
    numeric = nn.finite_difference_grads(loss_fn, p.params(), keys=keys)
    err = nn.max_relative_error({k: analytic[k] for k in keys}, numeric)
    assert err <= 1e-4, f"policy BPTT gradient mismatch {err:.2e}"


def test_action_map_reference_points():
    offsets, dphi = action_from_raw(np.zeros(3))
    assert np.allclose(offsets, 0.0)
    assert abs(dphi - DPHI_NOMINAL) < 1e-15, "zero raw output holds the nominal cadence"
    offsets, dphi = action_from_raw(np.array([1.0, -0.5, 1.0]))
    assert np.allclose(offsets, [0.4, -0.2])
    assert dphi > DPHI_NOMINAL


def test_log_prob_matches_scipy(rng):
    mean = rng.standard_normal((5, ACTION_DIM))
    log_std = np.array([-0.5, 0.1, -1.2])
    raw = mean + rng.standard_normal((5, ACTION_DIM)) * np.exp(log_std)
    ours = gaussian_log_prob(raw, mean, log_std)
    ref = stats.norm.logpdf(raw, loc=mean, scale=np.exp(log_std)).sum(axis=1)
    assert np.allclose(ours, ref, atol=1e-12), "closed-form Gaussian density"


def test_act_with_floor_log_std_is_nearly_deterministic(rng):
    p = small_policy()
    p.log_std[...] = -8.0
    p.clamp_log_std_()
    assert np.all(p.log_std == -5.0), "log-std clamps to [-5, 0.5]"
    obs = rng.standard_normal((1, OBS_DIM))
    h, c = p.zero_state(1)
    mean, _, _, _, _ = p.forward_step(obs, h, c)
    draws = []
    for i in range(500):
        raw, _, _, _, _ = p.act(obs, h, c, np.random.default_rng(i), stochastic=True)
        draws.append(raw[0] - mean[0])
    sd = np.std(np.array(draws), axis=0)
    assert np.all(sd < 0.009), "samples hug the mean at the exploration floor"
    assert np.all(sd > 0.004), "still stochastic, not collapsed"


def test_act_log_prob_consistency(rng):
    p = small_policy()
    obs = rng.standard_normal((2, OBS_DIM))
    h, c = p.zero_state(2)
    raw, logp, _, _, _ = p.act(obs, h, c, rng, stochastic=True)
    mean, _, _, _, _ = p.forward_step(obs, h, c)
    assert np.allclose(logp, gaussian_log_prob(raw, mean, p.log_std))


def test_clock_encoding_continuous_across_wrap():
    a = clock_encoding(0.999)
    b = clock_encoding(0.001)
    assert np.linalg.norm(a - b) < 0.02, "phase wrap must not jump the encoding"
    assert np.allclose(clock_encoding(0.25), [1.0, 0.0], atol=1e-12)


def test_policy_checkpoint_round_trip(tmp_path, rng):
    p = small_policy(seed=9)
    path = tmp_path / "policy.npz"
    p.save(path, {"training_ticks": 42})
    q = small_policy(seed=1)  # different init
    meta = q.load(path)
    assert meta["training_ticks"] == 42
    for k in p.params():
        assert np.array_equal(p.params()[k], q.params()[k]), f"{k} differs after load"


def test_dynamics_snapshot_transfers_only_the_lstm(tmp_path):
    donor = small_policy(seed=2, command_schema="velocity")
    path = tmp_path / "dyn.npz"
    save_dynamics_snapshot(path, donor, source_task="velocity_command", training_ticks=1000)
    target = small_policy(seed=7, command_schema="footstep")
    head_before = {k: v.copy() for k, v in target.head.params.items()}
    meta = load_dynamics_module(target, path)
    assert meta["source_task"] == "velocity_command"
    for k in donor.lstm.params:
        assert np.array_equal(target.lstm.params[k], donor.lstm.params[k])
    for k in head_before:
        assert np.array_equal(target.head.params[k], head_before[k]), "heads keep fresh init"


def test_dynamics_snapshot_rejects_schema_mismatch(tmp_path):
    donor = small_policy(seed=2)
    path = tmp_path / "dyn.npz"
    save_dynamics_snapshot(path, donor, source_task="velocity_command", training_ticks=1)
    params, meta = nn.load_params(path)
    meta["proprio_schema_hash"] = "0" * 16
    nn.save_params(path, params, meta)
    with pytest.raises(ConfigError):
        load_dynamics_module(small_policy(seed=1), path)

    wide = Policy(PolicyConfig(lstm_hidden=16), np.random.default_rng(0))
    path2 = tmp_path / "dyn2.npz"
    save_dynamics_snapshot(path2, wide, source_task="velocity_command", training_ticks=1)
    with pytest.raises(ConfigError):
        load_dynamics_module(small_policy(seed=1), path2)


def test_full_checkpoint_is_not_a_snapshot(tmp_path):
    p = small_policy()
    path = tmp_path / "full.npz"
    p.save(path)
    with pytest.raises(ConfigError):
        load_dynamics_module(small_policy(seed=1), path)
