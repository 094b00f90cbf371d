"""PPO on recurrent rollout windows.

The update re-runs full env columns through the network (BPTT restarting at
episode boundaries), so gradients are exact for the truncation scheme used at
collection time.  All losses and gradients run through the hand-written
network core; nothing here owns parameters beyond the optimizer state.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import nn
from .policy import (Policy, PolicyConfig, gaussian_entropy,
                     load_dynamics_module, save_dynamics_snapshot)
from .rollout import (RewardWeights, RolloutBatch, SequenceProvider,
                      TrainingRunner, VelocityProvider, quiet, run_episodes)
from .sim import ConfigError, PhysicsParams, RandomizationRanges

CURVE_COLUMNS = ("samples", "reward", "step_error", "clip_frac", "kl", "completion")

EVAL_REGIMES = ["forward"] * 8 + ["in-place"] * 4 + ["lateral"] * 2 + ["backward"] * 2


@dataclass
class TrainConfig:
    task: str = "footstep"
    total_ticks: int = 2_400_000
    n_envs: int = 16
    horizon: int = 300           # episode length == collection window
    chunk_ticks: int = 30        # truncated-BPTT chunk inside the window
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    epochs: int = 4
    minibatch_envs: int = 4
    lr: float = 3e-4
    lr_decay: bool = True
    lr_floor: float = 0.05       # fraction of lr kept at the end of the schedule
    entropy_coef: float = 1e-3
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    randomize: bool = True
    seed: int = 0
    eval_every_updates: int = 10
    eval_episodes: int = 16
    eval_seed: int = 9999
    eval_max_ticks: int = 300
    bootstrap_snapshot: Optional[str] = None
    checkpoint_every_updates: int = 0   # 0 disables periodic checkpoints
    command_ramp_frac: float = 0.5   # updates fraction over which command ranges grow
    reward: RewardWeights = field(default_factory=RewardWeights)

    def validate(self) -> None:
        if self.task not in ("footstep", "velocity"):
            raise ConfigError(f"unknown task {self.task!r}")
        if not 0.0 <= self.command_ramp_frac <= 1.0:
            raise ConfigError("command_ramp_frac must lie in [0, 1]")
        if self.n_envs % self.minibatch_envs != 0:
            raise ConfigError("n_envs must be a multiple of minibatch_envs")
        if self.chunk_ticks < 1 or self.horizon % self.chunk_ticks != 0:
            raise ConfigError("horizon must be a multiple of chunk_ticks")
        if self.total_ticks < self.n_envs * self.horizon:
            raise ConfigError("total_ticks below one rollout window")
        if not (0.0 < self.gamma <= 1.0 and 0.0 <= self.lam <= 1.0):
            raise ConfigError("bad discount/lambda")


def lr_schedule(cfg: TrainConfig, update_idx: int, n_updates: int) -> float:
    """Linear decay from cfg.lr to cfg.lr * cfg.lr_floor across the run."""
    if not cfg.lr_decay:
        return cfg.lr
    frac = update_idx / max(n_updates - 1, 1)
    return cfg.lr * max(1.0 - frac, cfg.lr_floor)


def compute_gae(batch: RolloutBatch, gamma: float, lam: float):
    """Masked GAE over a window; falls cut bootstrapping, the window edge
    bootstraps from the stored value estimate.  Returns (advantages, returns)."""
    T, B = batch.reward.shape
    adv = np.zeros((T, B))
    lastgae = np.zeros(B)
    nextv = batch.bootstrap
    for t in reversed(range(T)):
        nonterm = 1.0 - batch.done[t].astype(float)
        delta = batch.reward[t] + gamma * nextv * nonterm - batch.value[t]
        lastgae = delta + gamma * lam * nonterm * lastgae
        adv[t] = lastgae
        nextv = batch.value[t]
    return adv, adv + batch.value


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def ppo_minibatch(policy: Policy, cfg: TrainConfig, obs: np.ndarray,
                  resets: np.ndarray, raw: np.ndarray, old_logp: np.ndarray,
                  adv: np.ndarray, ret: np.ndarray, h0=None, c0=None):
    """Composite PPO loss (clipped surrogate + value + entropy) with exact
    gradients through the replayed sequence chunk.  h0/c0 carry the recorded
    recurrent state into the chunk (constant, no gradient past the boundary).
    Returns (loss, grads, info)."""
    means, values, _, caches = policy.forward_sequence(obs, resets, h0, c0)
    log_std = policy.log_std
    std = np.exp(log_std)
    z = (raw - means) / std
    new_logp = (-0.5 * z * z - log_std
                - 0.5 * math.log(2.0 * math.pi)).sum(axis=-1)
    ratio = np.exp(new_logp - old_logp)
    pg1 = -adv * ratio
    pg2 = -adv * np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip)
    pg = np.maximum(pg1, pg2)
    n_samples = pg.size
    pi_loss = float(pg.mean())
    v_err = values - ret
    v_loss = float(0.5 * (v_err * v_err).mean())
    entropy = gaussian_entropy(log_std)
    loss = pi_loss + cfg.vf_coef * v_loss - cfg.entropy_coef * entropy

    # gradient of the surrogate w.r.t. new_logp: flows through the unclipped
    # branch, and through the clipped branch only inside the trust band
    # (outside it the clip saturates to zero slope)
    inside = (ratio > 1.0 - cfg.clip) & (ratio < 1.0 + cfg.clip)
    take1 = pg1 >= pg2
    dlogp = np.where(take1 | inside, -adv * ratio, 0.0) / n_samples
    dmeans = dlogp[..., None] * (z / std)
    dlog_std = (dlogp[..., None] * (z * z - 1.0)).sum(axis=(0, 1))
    dlog_std -= cfg.entropy_coef  # entropy bonus, d(ent)/dlog_std = 1
    dvalues = cfg.vf_coef * v_err / n_samples

    grads = policy.backward_sequence(caches, resets, dmeans, dvalues)
    grads["log_std"] = dlog_std
    info = {
        "pi_loss": pi_loss,
        "v_loss": v_loss,
        "clip_hits": int((~inside).sum()),
        "n_samples": n_samples,
        "kl": float((old_logp - new_logp).mean()),
    }
    return loss, grads, info


def ppo_update(policy: Policy, adam: nn.Adam, batch: RolloutBatch,
               adv: np.ndarray, ret: np.ndarray, cfg: TrainConfig,
               mrng: np.random.Generator, lr: float) -> dict:
    """Clipped-surrogate update: epochs over shuffled minibatches, each an
    (env group) x (time chunk) slice replayed from its recorded recurrent
    state."""
    T, B = batch.logp.shape
    mb = cfg.minibatch_envs
    ck = cfg.chunk_ticks
    n_groups = B // mb
    n_chunks = T // ck
    clip_hits = 0
    clip_total = 0
    kl_sum = 0.0
    kl_n = 0
    pi_loss_last = v_loss_last = 0.0

    for _ in range(cfg.epochs):
        groups = mrng.permutation(B).reshape(n_groups, mb)
        for piece in mrng.permutation(n_groups * n_chunks):
            g, k = divmod(int(piece), n_chunks)
            cols = groups[g]
            t0, t1 = k * ck, (k + 1) * ck
            _, grads, info = ppo_minibatch(
                policy, cfg, batch.obs[t0:t1, cols], batch.reset[t0:t1, cols],
                batch.raw[t0:t1, cols], batch.logp[t0:t1, cols],
                adv[t0:t1, cols], ret[t0:t1, cols],
                h0=batch.h0[t0, cols], c0=batch.c0[t0, cols])
            nn.clip_grads_(grads, cfg.max_grad_norm)
            adam.step(grads, lr=lr)
            policy.clamp_log_std_()
            clip_hits += info["clip_hits"]
            clip_total += info["n_samples"]
            kl_sum += info["kl"]
            kl_n += 1
            pi_loss_last = info["pi_loss"]
            v_loss_last = info["v_loss"]

    return {
        "clip_frac": clip_hits / max(clip_total, 1),
        "kl": kl_sum / max(kl_n, 1),
        "pi_loss": pi_loss_last,
        "v_loss": v_loss_last,
        "entropy": gaussian_entropy(policy.log_std),
        "lr": lr,
    }


# -- evaluation -----------------------------------------------------------------


def evaluate_policy(policy: Policy, cfg: TrainConfig,
                    nominal: PhysicsParams) -> dict:
    """Held-out deterministic evaluation: fixed command seeds, noise and
    randomization off, so curves are comparable across training seeds."""
    if cfg.task == "footstep":
        provider = SequenceProvider(fixed_regimes=EVAL_REGIMES)
        results = run_episodes(policy, provider, cfg.eval_episodes,
                               seed=cfg.eval_seed, nominal=quiet(nominal),
                               noisy_obs=False, stochastic=False,
                               reward_weights=cfg.reward, task="footstep",
                               max_ticks=cfg.eval_max_ticks)
        errors = [e for r in results for e in r.scored_errors]
        pairs = [p for r in results for p in r.step_pairs]
        return {
            "reward": float(np.mean([r.total_reward for r in results])),
            "step_error": float(np.mean(errors)) if errors else float("nan"),
            "completion": float(np.mean([not r.fell for r in results])),
            "step_pairs": pairs,
        }
    provider = VelocityProvider()
    results = run_episodes(policy, provider, cfg.eval_episodes,
                           seed=cfg.eval_seed, nominal=quiet(nominal),
                           noisy_obs=False, stochastic=False,
                           reward_weights=cfg.reward, task="velocity",
                           max_ticks=cfg.eval_max_ticks)
    track = [e for r in results for e in r.tracking_errors]
    return {
        "reward": float(np.mean([r.total_reward for r in results])),
        "step_error": float(np.mean(track)) if track else float("nan"),
        "completion": float(np.mean([not r.fell for r in results])),
        "step_pairs": [],
    }


# -- training loops ----------------------------------------------------------------


@dataclass
class TrainResult:
    policy: Policy
    curve: List[dict]
    final_eval: dict
    checkpoint_path: Optional[Path] = None
    snapshot_path: Optional[Path] = None


def write_curve_csv(path, rows: List[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CURVE_COLUMNS)
        for row in rows:
            w.writerow([row["samples"], f"{row['reward']:.6f}",
                        f"{row['step_error']:.6f}", f"{row['clip_frac']:.6f}",
                        f"{row['kl']:.8f}", f"{row['completion']:.6f}"])


def run_training(cfg: TrainConfig, out_dir: Optional[Path] = None,
                 nominal: PhysicsParams = PhysicsParams(),
                 policy: Optional[Policy] = None,
                 quiet_log: bool = True) -> TrainResult:
    """Full PPO run for either task; returns the trained policy and curve."""
    cfg.validate()
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    if policy is None:
        prng = np.random.default_rng([cfg.seed, 3])
        policy = Policy(PolicyConfig(command_schema=cfg.task), prng)
    if cfg.bootstrap_snapshot:
        load_dynamics_module(policy, cfg.bootstrap_snapshot)

    ranges = RandomizationRanges() if cfg.randomize else None
    runner = TrainingRunner(policy, cfg.n_envs, seed=cfg.seed, task=cfg.task,
                            nominal=nominal, randomize=ranges,
                            horizon=cfg.horizon, reward_weights=cfg.reward)
    adam = nn.Adam(policy.params(), lr=cfg.lr)
    mrng = np.random.default_rng([cfg.seed, 13])

    window_samples = cfg.n_envs * cfg.horizon
    n_updates = cfg.total_ticks // window_samples
    curve: List[dict] = []
    recent_clip: List[float] = []
    recent_kl: List[float] = []

    ramp = max(int(cfg.command_ramp_frac * n_updates), 1)
    for u in range(n_updates):
        lr = lr_schedule(cfg, u, n_updates)
        if cfg.task == "footstep" and cfg.command_ramp_frac > 0:
            runner.provider.difficulty = min(1.0, (u + 1) / ramp)
        batch = runner.collect_window()
        adv, ret = compute_gae(batch, cfg.gamma, cfg.lam)
        stats = ppo_update(policy, adam, batch, normalize_advantages(adv), ret,
                           cfg, mrng, lr)
        recent_clip.append(stats["clip_frac"])
        recent_kl.append(stats["kl"])

        last = u == n_updates - 1
        if (u + 1) % cfg.eval_every_updates == 0 or last:
            ev = evaluate_policy(policy, cfg, nominal)
            row = {
                "samples": (u + 1) * window_samples,
                "reward": ev["reward"],
                "step_error": ev["step_error"],
                "clip_frac": float(np.mean(recent_clip)),
                "kl": float(np.mean(recent_kl)),
                "completion": ev["completion"],
            }
            curve.append(row)
            recent_clip.clear()
            recent_kl.clear()
            if not quiet_log:
                print(f"update {u + 1}/{n_updates} samples {row['samples']} "
                      f"reward {row['reward']:.3f} err {row['step_error']:.3f} "
                      f"completion {row['completion']:.2f}", flush=True)
            if out_dir is not None:
                write_curve_csv(out_dir / "curve.csv", curve)
        if (out_dir is not None and cfg.checkpoint_every_updates
                and (u + 1) % cfg.checkpoint_every_updates == 0):
            policy.save(out_dir / f"checkpoint_{u + 1:05d}.npz",
                        {"training_ticks": (u + 1) * window_samples,
                         "task": cfg.task})

    final_eval = evaluate_policy(policy, cfg, nominal)
    ck_path = snap_path = None
    if out_dir is not None:
        ck_path = out_dir / "checkpoint_final.npz"
        policy.save(ck_path, {"training_ticks": n_updates * window_samples,
                              "task": cfg.task})
        nn.export_params_json(out_dir / "checkpoint_final.json",
                              policy.params(), policy.meta())
        write_curve_csv(out_dir / "curve.csv", curve)
        snap_path = out_dir / "dynamics_snapshot.npz"
        save_dynamics_snapshot(snap_path, policy,
                               source_task=f"{cfg.task}_command",
                               training_ticks=n_updates * window_samples)
    return TrainResult(policy=policy, curve=curve, final_eval=final_eval,
                       checkpoint_path=ck_path, snapshot_path=snap_path)


def pretrain_velocity_policy(cfg: TrainConfig, out_dir=None,
                             nominal: PhysicsParams = PhysicsParams(),
                             quiet_log: bool = True) -> TrainResult:
    if cfg.task != "velocity":
        cfg = replace(cfg, task="velocity")
    return run_training(cfg, out_dir, nominal, quiet_log=quiet_log)


def train_footstep_policy(cfg: TrainConfig, out_dir=None,
                          nominal: PhysicsParams = PhysicsParams(),
                          quiet_log: bool = True) -> TrainResult:
    if cfg.task != "footstep":
        cfg = replace(cfg, task="footstep")
    return run_training(cfg, out_dir, nominal, quiet_log=quiet_log)
