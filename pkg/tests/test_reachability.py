"""Step-error model tests: loss formula oracles, gradient checks against
central differences, branch-replay collection contracts, and fit determinism.

Collection tests run the walker at near-zero gravity so the pendulum stays
put: touchdowns keep their clock-driven cadence, nothing ever falls, and the
counting contracts become exact.
"""

import numpy as np
import pytest

from stepstone import nn
from stepstone.policy import Policy, PolicyConfig
from stepstone.reachability import (COMMAND_BOX_X, COMMAND_BOX_Y,
                                    ERROR_THRESHOLD, LATENT_DIM, LATENT_WEIGHT,
                                    STATE_DIM, TUPLE_COLUMNS, CollectConfig,
                                    FitConfig, ReachabilityModel, TupleDataset,
                                    collect_dataset, collect_eval_dataset,
                                    command_grid, reachability_loss,
                                    reachability_loss_batch, reachable_region,
                                    sample_command_box, train_model,
                                    tuple_loss, write_fit_curve_csv)
from stepstone.sim import ConfigError, PhysicsParams, RandomizationRanges

# pendulum frozen in place: clock still drives touchdowns, falls impossible
LOWG = PhysicsParams(gravity=1e-4, sensor_noise_std=0.0, touchdown_slip_std=0.0)
LOWG_RANGES = RandomizationRanges(gravity=(1e-4, 1e-4),
                                  sensor_noise_std=(0.0, 0.0),
                                  touchdown_slip_std=(0.0, 0.0),
                                  command_latency_ticks=(0, 0))


def fresh_policy(seed: int = 0) -> Policy:
    return Policy(PolicyConfig(), np.random.default_rng(seed))


def random_tuples(rng, n: int):
    s = rng.standard_normal((n, STATE_DIM))
    s_next = rng.standard_normal((n, STATE_DIM))
    c = sample_command_box(rng, n)
    eps = rng.uniform(0.0, 0.5, n)
    return s, s_next, c, eps


# -- loss formula ---------------------------------------------------------------


def test_tuple_loss_matches_worked_example():
    z_next = np.zeros(LATENT_DIM)
    z_hat = np.zeros(LATENT_DIM)
    z_hat[0] = 0.1                      # squared residual norm 0.01
    val = tuple_loss(0.1, 0.2, z_next, z_hat)
    assert abs(val - 0.06) < 1e-12, "0.01 error term + 5 * 0.01 latent term"


def test_tuple_loss_zero_for_perfect_prediction(rng):
    z = rng.standard_normal(LATENT_DIM)
    assert tuple_loss(0.3, 0.3, z, z.copy()) == 0.0


def test_latent_term_scales_quadratically(rng):
    z = np.zeros(LATENT_DIM)
    d = rng.standard_normal(LATENT_DIM)
    one = tuple_loss(0.0, 0.0, z, d)
    two = tuple_loss(0.0, 0.0, z, 2.0 * d)
    assert abs(two - 4.0 * one) < 1e-9 * max(one, 1.0)


def test_batch_loss_is_mean_of_per_tuple_formula(rng):
    model = ReachabilityModel(rng, hidden=(16, 16))
    s, s_next, c, eps = random_tuples(rng, 7)
    loss, _, info = reachability_loss_batch(model, s, s_next, c, eps,
                                            with_grads=False)
    eps_hat, z_hat = model.predict_state_batch(s, c)
    z_next = model.encode(s_next)
    manual = np.mean([tuple_loss(eps[k], eps_hat[k], z_next[k], z_hat[k])
                      for k in range(7)])
    assert abs(loss - manual) < 1e-12
    assert info["err_term"] >= 0.0 and info["latent_term"] >= 0.0
    assert abs(info["err_term"] + info["latent_term"] - loss) < 1e-12


def test_single_tuple_wrapper_matches_batch_of_one(rng):
    model = ReachabilityModel(rng, hidden=(16, 16))
    s, s_next, c, eps = random_tuples(rng, 1)
    a = reachability_loss(model, s[0], s_next[0], c[0], float(eps[0]))
    b, _, _ = reachability_loss_batch(model, s, s_next, c, eps, with_grads=False)
    assert abs(a - b) < 1e-15


def test_loss_gradients_match_finite_differences():
    for seed in range(3):
        rng = np.random.default_rng([seed, 77])
        model = ReachabilityModel(rng, hidden=(8, 8))
        s, s_next, c, eps = random_tuples(rng, 3)
        _, grads, _ = reachability_loss_batch(model, s, s_next, c, eps)
        params = model.params()
        numeric = nn.finite_difference_grads(
            lambda: reachability_loss_batch(model, s, s_next, c, eps,
                                            with_grads=False)[0],
            params, max_entries_per_array=10, rng=rng)
        err = nn.max_relative_error(grads, numeric)
        assert err < 1e-4, f"seed {seed}: max relative gradient error {err:.2e}"


# -- prediction contracts ---------------------------------------------------------


def test_predict_composition_identity(rng):
    model = ReachabilityModel(rng, hidden=(16, 16))
    s = rng.standard_normal(STATE_DIM)
    c = sample_command_box(rng)[0]
    z = model.encode(s)[0]
    direct = model.predict(s, c)
    via_latent = model.predict(z, c)
    assert direct[0] == via_latent[0]
    assert np.array_equal(direct[1], via_latent[1])


def test_predict_shapes_and_dim_check(rng):
    model = ReachabilityModel(rng, hidden=(16, 16))
    s = rng.standard_normal(STATE_DIM)
    c = np.array([0.2, 0.0])
    eps_hat, z_next = model.predict(s, c)
    assert isinstance(eps_hat, float)
    assert z_next.shape == (LATENT_DIM,)
    with pytest.raises(ConfigError):
        model.predict(rng.standard_normal(5), c)


def test_encoder_is_deterministic(rng):
    model = ReachabilityModel(rng)
    s = rng.standard_normal((4, STATE_DIM))
    assert np.array_equal(model.encode(s), model.encode(s.copy()))


def test_model_save_load_roundtrip(tmp_path, rng):
    model = ReachabilityModel(rng, hidden=(16, 16))
    model.meta = {"variant": "Vanilla"}
    path = tmp_path / "model.npz"
    model.save(path)
    back = ReachabilityModel.load(path)
    s, _, c, _ = random_tuples(rng, 5)
    a_eps, a_z = model.predict_state_batch(s, c)
    b_eps, b_z = back.predict_state_batch(s, c)
    assert np.array_equal(a_eps, b_eps) and np.array_equal(a_z, b_z)
    assert back.meta["variant"] == "Vanilla"
    # a non-reachability checkpoint must be refused
    nn.save_params(tmp_path / "other.npz", {"w": np.zeros(2)}, {"kind": "policy"})
    with pytest.raises(ConfigError):
        ReachabilityModel.load(tmp_path / "other.npz")


# -- reachable region -------------------------------------------------------------


def test_command_grid_covers_the_box():
    grid = command_grid()
    assert grid.shape == (26 * 21, 2)
    assert grid[:, 0].min() == COMMAND_BOX_X[0]
    assert abs(grid[:, 0].max() - COMMAND_BOX_X[1]) < 1e-9
    assert abs(grid[:, 1].min() - COMMAND_BOX_Y[0]) < 1e-9
    assert abs(grid[:, 1].max() - COMMAND_BOX_Y[1]) < 1e-9


def test_reachable_region_threshold_limits(rng):
    model = ReachabilityModel(rng, hidden=(16, 16))
    s = rng.standard_normal(STATE_DIM)
    everything = reachable_region(model, s, threshold=np.inf)
    assert everything["reachable"].shape == (26 * 21, 2)
    nothing = reachable_region(model, s, threshold=-1.0)
    assert nothing["reachable"].shape == (0, 2)
    default = reachable_region(model, s)
    assert default["threshold"] == ERROR_THRESHOLD
    assert default["mask"].sum() == default["reachable"].shape[0]


# -- collection ------------------------------------------------------------------


def small_cfg(**kw) -> CollectConfig:
    base = dict(variant="Vanilla", n_episodes=6, branches=5, seed=3)
    base.update(kw)
    return CollectConfig(**base)


def test_counting_contract_without_falls():
    ds = collect_dataset(fresh_policy(), small_cfg(), nominal=LOWG)
    assert len(ds) == 6 * 5, "no falls: every episode contributes every branch"
    assert ds.info["discarded_episodes"] == 0
    assert ds.info["discarded_branches"] == 0
    assert np.all(ds.eps >= 0.0) and np.all(np.isfinite(ds.eps))
    assert np.all(ds.c[:, 0] >= COMMAND_BOX_X[0])
    assert np.all(ds.c[:, 0] <= COMMAND_BOX_X[1])
    assert np.all(np.abs(ds.c[:, 1]) <= COMMAND_BOX_Y[1])
    assert sorted(set(ds.branch)) == list(range(5))
    assert len(set(ds.episode)) == 6
    assert ds.s.shape == (30, STATE_DIM) and ds.s_next.shape == (30, STATE_DIM)


def test_collection_accounting_identity_with_falls():
    # real gravity and an untrained policy: most prefixes end in a fall
    cfg = small_cfg(n_episodes=8, branches=3)
    ds = collect_dataset(fresh_policy(), cfg, nominal=PhysicsParams())
    kept = cfg.n_episodes - ds.info["discarded_episodes"]
    assert len(ds) == kept * cfg.branches - ds.info["discarded_branches"]
    assert ds.info["discarded_episodes"] > 0, "untrained walkers must fall"


def test_collection_is_deterministic():
    a = collect_dataset(fresh_policy(), small_cfg(), nominal=LOWG)
    b = collect_dataset(fresh_policy(), small_cfg(), nominal=LOWG)
    assert np.array_equal(a.s, b.s) and np.array_equal(a.s_next, b.s_next)
    assert np.array_equal(a.c, b.c) and np.array_equal(a.eps, b.eps)


def test_touchdown_averaging_reduces_to_vanilla_when_noiseless():
    vanilla = collect_dataset(fresh_policy(), small_cfg(), nominal=LOWG)
    avg = collect_dataset(fresh_policy(),
                          small_cfg(variant="NoisyTouchdownAvg", k_repeats=5),
                          nominal=LOWG)
    # zero process noise: all five repeats coincide; the mean of five equal
    # floats can still round one ulp away from the single sample
    assert np.allclose(vanilla.eps, avg.eps, rtol=0.0, atol=1e-12)
    assert np.array_equal(vanilla.s, avg.s)
    assert np.array_equal(vanilla.s_next, avg.s_next)
    assert np.array_equal(vanilla.c, avg.c)
    assert avg.variant == "NoisyTouchdownAvg"


def test_procedural_noise_perturbs_the_prefix():
    vanilla = collect_dataset(fresh_policy(), small_cfg(), nominal=LOWG)
    noisy = collect_dataset(fresh_policy(),
                            small_cfg(variant="NoisyProcedural"),
                            nominal=LOWG)
    assert not np.array_equal(vanilla.s, noisy.s), \
        "command jitter must reach the anchored snapshots"
    # jitter applies to prefix commands only; stored targets stay in the box
    assert np.all(noisy.c[:, 0] >= COMMAND_BOX_X[0])
    assert np.all(noisy.c[:, 0] <= COMMAND_BOX_X[1])


def test_dynrand_draws_per_episode_physics():
    vanilla = collect_dataset(fresh_policy(), small_cfg(), nominal=LOWG)
    dyn = collect_dataset(fresh_policy(), small_cfg(variant="DynRand"),
                          nominal=LOWG, ranges=LOWG_RANGES)
    assert len(dyn) == 6 * 5, "low-gravity ranges keep every episode alive"
    assert not np.array_equal(vanilla.s, dyn.s), \
        "randomized pendulum heights must change the snapshots"


def test_eval_dataset_disjoint_seeds_and_same_schema():
    pol = fresh_policy()
    train = collect_dataset(pol, small_cfg(), nominal=LOWG)
    ev = collect_eval_dataset(pol, small_cfg(), nominal=LOWG)
    assert set(train.episode).isdisjoint(set(ev.episode))
    assert ev.variant == "Eval"
    assert ev.s.shape[1] == train.s.shape[1] == STATE_DIM
    assert ev.c.shape[1] == 2
    assert np.var(ev.eps) > 0.0, "held-out errors must vary"


def test_collect_config_validation():
    with pytest.raises(ConfigError):
        CollectConfig(variant="Nope").validate()
    with pytest.raises(ConfigError):
        CollectConfig(prefix_lo=5, prefix_hi=4).validate()
    with pytest.raises(ConfigError):
        CollectConfig(branches=0).validate()


# -- dataset files ---------------------------------------------------------------


def test_tuple_csv_roundtrip(tmp_path):
    ds = collect_dataset(fresh_policy(), small_cfg(), nominal=LOWG)
    path = tmp_path / "tuples.csv"
    ds.save(path)
    back = TupleDataset.load(path)
    assert back.variant == ds.variant and back.seed == ds.seed
    assert np.array_equal(back.s, ds.s)
    assert np.array_equal(back.s_next, ds.s_next)
    assert np.array_equal(back.c, ds.c)
    assert np.array_equal(back.eps, ds.eps)
    assert np.array_equal(back.episode, ds.episode)
    assert np.array_equal(back.branch, ds.branch)
    path2 = tmp_path / "tuples2.csv"
    back.save(path2)
    assert path.read_bytes() == path2.read_bytes(), "re-save must be byte-identical"


def test_tuple_csv_rejects_foreign_files(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("episode,foo\n1,2\n")
    with pytest.raises(ConfigError):
        TupleDataset.load(p)
    p2 = tmp_path / "bad2.csv"
    p2.write_text("# stepstone-tuples v1 variant=Vanilla seed=0\nwrong,header\n")
    with pytest.raises(ConfigError):
        TupleDataset.load(p2)


def test_tuple_columns_schema():
    assert TUPLE_COLUMNS[:3] == ["variant", "episode", "branch"]
    assert TUPLE_COLUMNS[-3:] == ["cx", "cy", "eps"]
    assert len(TUPLE_COLUMNS) == 3 + 2 * STATE_DIM + 3


# -- model fitting ---------------------------------------------------------------


def collect_pair():
    pol = fresh_policy()
    train = collect_dataset(pol, small_cfg(n_episodes=10, branches=6),
                            nominal=LOWG)
    ev = collect_eval_dataset(pol, small_cfg(n_episodes=8, branches=6),
                              nominal=LOWG)
    return train, ev


def test_training_is_deterministic():
    train, ev = collect_pair()
    fit = FitConfig(iterations=40, batch=32, seed=5, eval_every=20)
    m1, c1 = train_model(train, fit, eval_dataset=ev)
    m2, c2 = train_model(train, fit, eval_dataset=ev)
    for k, v in m1.params().items():
        assert np.array_equal(v, m2.params()[k]), f"nondeterministic {k}"
    assert c1 == c2


def test_training_improves_heldout_error():
    train, ev = collect_pair()
    fit = FitConfig(iterations=800, batch=64, seed=2, eval_every=200)
    model, curve = train_model(train, fit, eval_dataset=ev)
    init = ReachabilityModel(np.random.default_rng([fit.seed, 31]))
    init_eps, _ = init.predict_state_batch(ev.s, ev.c)
    init_mae = float(np.abs(init_eps - ev.eps).mean())
    final_mae = curve[-1]["eval_mae"]
    assert final_mae < init_mae, \
        f"eval MAE {final_mae:.4f} should beat the untrained {init_mae:.4f}"
    assert model.meta["variant"] == train.variant
    assert model.meta["n_tuples"] == len(train)


def test_fit_curve_rows_and_csv(tmp_path):
    train, ev = collect_pair()
    fit = FitConfig(iterations=60, batch=32, seed=1, eval_every=30)
    _, curve = train_model(train, fit, eval_dataset=ev)
    assert [row["iteration"] for row in curve] == [30, 60]
    for row in curve:
        assert abs(row["err_term"] + row["latent_term"] - row["loss"]) < 1e-12
        assert np.isfinite(row["eval_mae"])
    path = tmp_path / "fit.csv"
    write_fit_curve_csv(path, curve)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "iteration,loss,err_term,latent_term,eval_mae"
    assert len(lines) == 1 + len(curve)


def test_empty_dataset_is_rejected():
    ds = TupleDataset(variant="Vanilla", seed=0,
                      s=np.zeros((0, STATE_DIM)), s_next=np.zeros((0, STATE_DIM)),
                      c=np.zeros((0, 2)), eps=np.zeros(0),
                      episode=np.zeros(0, dtype=np.int64),
                      branch=np.zeros(0, dtype=np.int64))
    with pytest.raises(ConfigError):
        train_model(ds, FitConfig(iterations=1))
