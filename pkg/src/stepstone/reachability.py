"""Step-error prediction from touchdown-time state.

An encoder maps the post-touchdown robot state to a latent vector; a predictor
maps (latent, command) to the expected step error and the next latent.  Data
comes from branch-replayed collection episodes: a procedural walking prefix is
run once, the simulator state is snapshotted at the final prefix touchdown,
and many candidate commands are executed from identical starts.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from . import nn
from .policy import Policy, action_from_raw
from .rollout import build_obs, generate_command_sequence, standing_reset
from .sim import ConfigError, PhysicsParams, RandomizationRanges, VecSim

STATE_DIM = 8            # proprio (7, includes stance side) + last applied dphi
LATENT_DIM = 16
LATENT_WEIGHT = 5.0      # weight of the latent consistency term
COMMAND_BOX_X = (0.0, 0.5)
COMMAND_BOX_Y = (-0.2, 0.2)
ERROR_THRESHOLD = 0.10   # reachable means predicted error below this

VARIANTS = ("Vanilla", "DynRand", "NoisyProcedural", "NoisyTouchdownAvg")
EVAL_TAG = "Eval"

# ticks between touchdowns never exceed ceil(0.5 / DPHI_MIN) = 24
MAX_STEP_TICKS = 40
MAX_PREFIX_TICKS = 280

TUPLE_COLUMNS = (["variant", "episode", "branch"]
                 + [f"s{k}" for k in range(STATE_DIM)]
                 + [f"n{k}" for k in range(STATE_DIM)]
                 + ["cx", "cy", "eps"])


def state_snapshot(sim: VecSim, i: int, applied_dphi: float) -> np.ndarray:
    """The s vector for walker i: noiseless proprio + the clock increment the
    policy actually realized on the touchdown tick."""
    return np.concatenate([sim.proprio(noisy=False)[i], [applied_dphi]])


def sample_command_box(rng: np.random.Generator, n: int = 1) -> np.ndarray:
    x = rng.uniform(*COMMAND_BOX_X, size=n)
    y = rng.uniform(*COMMAND_BOX_Y, size=n)
    return np.stack([x, y], axis=1)


def in_command_box(c: np.ndarray) -> np.ndarray:
    """Boolean mask of commands inside the training box (model domain)."""
    c = np.atleast_2d(np.asarray(c, dtype=float))
    return ((c[:, 0] >= COMMAND_BOX_X[0]) & (c[:, 0] <= COMMAND_BOX_X[1])
            & (c[:, 1] >= COMMAND_BOX_Y[0]) & (c[:, 1] <= COMMAND_BOX_Y[1]))


# -- model ------------------------------------------------------------------


class ReachabilityModel:
    """Encoder s -> z plus predictor (z, c) -> (eps_hat, z_next)."""

    def __init__(self, rng: np.random.Generator, hidden=(128, 128)):
        self.encoder = nn.Mlp((STATE_DIM, *hidden, LATENT_DIM), rng,
                              hidden_activation="relu")
        self.predictor = nn.Mlp((LATENT_DIM + 2, *hidden, 1 + LATENT_DIM), rng,
                                hidden_activation="relu")
        self.meta: dict = {}

    def params(self) -> dict:
        out = {f"enc.{k}": v for k, v in self.encoder.params.items()}
        out.update({f"pred.{k}": v for k, v in self.predictor.params.items()})
        return out

    def encode(self, s: np.ndarray) -> np.ndarray:
        s = np.atleast_2d(s)
        return self.encoder(s)

    def predict(self, s_or_z: np.ndarray, c: np.ndarray):
        """(eps_hat, z_next) for one state (dim 8) or latent (dim 16)."""
        v = np.asarray(s_or_z, dtype=float)
        if v.ndim != 1 or v.shape[0] not in (STATE_DIM, LATENT_DIM):
            raise ConfigError("predict wants one state (8) or latent (16) vector")
        z = self.encode(v)[0] if v.shape[0] == STATE_DIM else v
        eps_hat, z_next = self.predict_latent_batch(z[None, :],
                                                    np.asarray(c, float)[None, :])
        return float(eps_hat[0]), z_next[0]

    def predict_latent_batch(self, z: np.ndarray, c: np.ndarray):
        out = self.predictor(np.concatenate([z, c], axis=1))
        return out[:, 0], out[:, 1:]

    def predict_state_batch(self, s: np.ndarray, c: np.ndarray):
        return self.predict_latent_batch(self.encode(s), c)

    def save(self, path, extra_meta: Optional[dict] = None) -> None:
        meta = {"kind": "reachability", "state_dim": STATE_DIM,
                "latent_dim": LATENT_DIM, **self.meta, **(extra_meta or {})}
        nn.save_params(path, self.params(), meta)

    @classmethod
    def load(cls, path) -> "ReachabilityModel":
        params, meta = nn.load_params(path)
        if meta.get("kind") != "reachability":
            raise ConfigError(f"{path} is not a reachability checkpoint")
        model = cls(np.random.default_rng(0))
        for k, v in model.encoder.params.items():
            model.encoder.params[k] = params[f"enc.{k}"]
        for k, v in model.predictor.params.items():
            model.predictor.params[k] = params[f"pred.{k}"]
        model.meta = {k: v for k, v in meta.items()
                      if k not in ("kind", "format_version")}
        return model


def tuple_loss(eps: float, eps_hat: float, z_next: np.ndarray,
               z_hat: np.ndarray) -> float:
    """Per-tuple loss formula: (eps - eps_hat)^2 + gamma * |z_next - z_hat|^2."""
    d = np.asarray(z_hat, float) - np.asarray(z_next, float)
    return float((eps - eps_hat) ** 2 + LATENT_WEIGHT * (d * d).sum())


def reachability_loss_batch(model: ReachabilityModel, s: np.ndarray,
                            s_next: np.ndarray, c: np.ndarray,
                            eps: np.ndarray, with_grads: bool = True):
    """Mean per-tuple loss (eps - eps_hat)^2 + gamma * |z_next - z_hat|^2.

    The latent target z_next comes from the same encoder and receives
    gradients (end-to-end training, no stop-gradient on the target).
    Returns (loss, grads, info); grads keyed like model.params().
    """
    B = s.shape[0]
    z, enc_cache = model.encoder.forward(s)
    z_next, enc_cache2 = model.encoder.forward(s_next)
    pred, pred_cache = model.predictor.forward(np.concatenate([z, c], axis=1))
    eps_hat = pred[:, 0]
    z_hat = pred[:, 1:]
    r = eps_hat - eps
    d = z_hat - z_next
    err_term = float((r * r).mean())
    lat_term = float(LATENT_WEIGHT * (d * d).sum(axis=1).mean())
    loss = err_term + lat_term
    info = {"err_term": err_term, "latent_term": lat_term,
            "mae": float(np.abs(r).mean())}
    if not with_grads:
        return loss, None, info

    dpred = np.empty_like(pred)
    dpred[:, 0] = 2.0 * r / B
    dpred[:, 1:] = 2.0 * LATENT_WEIGHT * d / B
    dzc, pred_grads = model.predictor.backward(pred_cache, dpred)
    _, enc_grads = model.encoder.backward(enc_cache, dzc[:, :LATENT_DIM])
    dz_next = -2.0 * LATENT_WEIGHT * d / B
    _, enc_grads2 = model.encoder.backward(enc_cache2, dz_next)
    nn.add_grads_(enc_grads, enc_grads2)
    grads = {f"enc.{k}": v for k, v in enc_grads.items()}
    grads.update({f"pred.{k}": v for k, v in pred_grads.items()})
    return loss, grads, info


def reachability_loss(model: ReachabilityModel, s: np.ndarray,
                      s_next: np.ndarray, c: np.ndarray, eps: float) -> float:
    loss, _, _ = reachability_loss_batch(model, np.atleast_2d(s),
                                         np.atleast_2d(s_next),
                                         np.atleast_2d(c),
                                         np.atleast_1d(eps), with_grads=False)
    return loss


# -- datasets ------------------------------------------------------------------


@dataclass
class TupleDataset:
    variant: str
    seed: int
    s: np.ndarray          # (N, 8)
    s_next: np.ndarray     # (N, 8)
    c: np.ndarray          # (N, 2)
    eps: np.ndarray        # (N,)
    episode: np.ndarray    # (N,) int episode seed ids
    branch: np.ndarray     # (N,) int
    info: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.s.shape[0]

    def save(self, path) -> None:
        with open(path, "w", newline="") as f:
            f.write(f"# stepstone-tuples v1 variant={self.variant} "
                    f"seed={self.seed}\n")
            w = csv.writer(f)
            w.writerow(TUPLE_COLUMNS)
            for k in range(len(self)):
                row = ([self.variant, int(self.episode[k]), int(self.branch[k])]
                       + [repr(float(v)) for v in self.s[k]]
                       + [repr(float(v)) for v in self.s_next[k]]
                       + [repr(float(self.c[k, 0])), repr(float(self.c[k, 1])),
                          repr(float(self.eps[k]))])
                w.writerow(row)

    @classmethod
    def load(cls, path) -> "TupleDataset":
        with open(path, newline="") as f:
            head = f.readline().strip()
            if not head.startswith("# stepstone-tuples v1"):
                raise ConfigError(f"{path}: not a tuple dataset")
            meta = dict(p.split("=", 1) for p in head.split()[3:])
            rows = list(csv.reader(f))
        if rows[0] != list(TUPLE_COLUMNS):
            raise ConfigError(f"{path}: unexpected tuple schema")
        body = rows[1:]
        n = len(body)
        s = np.empty((n, STATE_DIM))
        s_next = np.empty((n, STATE_DIM))
        c = np.empty((n, 2))
        eps = np.empty(n)
        episode = np.empty(n, dtype=np.int64)
        branch = np.empty(n, dtype=np.int64)
        for k, row in enumerate(body):
            episode[k] = int(row[1])
            branch[k] = int(row[2])
            vals = [float(v) for v in row[3:]]
            s[k] = vals[:STATE_DIM]
            s_next[k] = vals[STATE_DIM:2 * STATE_DIM]
            c[k] = vals[2 * STATE_DIM:2 * STATE_DIM + 2]
            eps[k] = vals[-1]
        return cls(variant=meta["variant"], seed=int(meta["seed"]), s=s,
                   s_next=s_next, c=c, eps=eps, episode=episode, branch=branch)


@dataclass
class CollectConfig:
    variant: str = "Vanilla"
    n_episodes: int = 120
    branches: int = 8            # collection commands replayed per episode
    prefix_lo: int = 4           # procedural touchdowns before the snapshot
    prefix_hi: int = 8
    k_repeats: int = 5           # NoisyTouchdownAvg averaging factor
    proc_noise_std: float = 0.03  # NoisyProcedural command jitter, meters
    seed: int = 0
    seed_tag: int = 17           # eval datasets use a disjoint tag

    def validate(self) -> None:
        if self.variant not in VARIANTS + (EVAL_TAG,):
            raise ConfigError(f"unknown collection variant {self.variant!r}")
        if not (1 <= self.prefix_lo <= self.prefix_hi):
            raise ConfigError("bad prefix range")
        if self.n_episodes < 1 or self.branches < 1 or self.k_repeats < 1:
            raise ConfigError("counts must be positive")


def _policy_tick(policy: Policy, sim: VecSim, command_obs: np.ndarray, h, c,
                 stochastic: bool, arng) -> tuple:
    obs = build_obs(sim, command_obs, noisy=True)
    raw, _, _, h, c = policy.act(obs, h, c, arng, stochastic=stochastic)
    offsets, dphi = action_from_raw(raw)
    return sim.control_tick(offsets, dphi), h, c


def collect_dataset(policy: Policy, cfg: CollectConfig,
                    nominal: PhysicsParams = PhysicsParams(),
                    randomize_prefix_targets: bool = False,
                    ranges: Optional[RandomizationRanges] = None) -> TupleDataset:
    """Branch-replayed tuple collection.

    Lockstep across episodes: run each episode's procedural prefix once,
    snapshot (sim state, recurrent state) at its final prefix touchdown, then
    for every branch command restore the snapshot and execute one collection
    step.  Branch RNG streams are fresh per (episode, branch, repeat), so
    branches from one episode differ only in the command and noise draws.
    """
    cfg.validate()
    B = cfg.n_episodes
    sim = VecSim(B, nominal)
    if cfg.variant != "DynRand":
        ranges = None
    elif ranges is None:
        ranges = RandomizationRanges()

    command_obs = np.zeros((B, 2))
    prefix_left = np.zeros(B, dtype=int)
    prefix_cmd = np.zeros((B, 2))      # (dx, dy deviation), mirrored per side
    ep_ids = np.zeros(B, dtype=np.int64)
    anchored = np.zeros(B, dtype=bool)
    discarded_eps = 0

    def prefix_command(i: int, ep_rng) -> np.ndarray:
        side = -1.0 if sim.stance_is_left[i] else 1.0
        dx, dy = prefix_cmd[i]
        if cfg.variant == "NoisyProcedural":
            jitter = ep_rng.normal(0.0, cfg.proc_noise_std, size=2)
        else:
            jitter = np.zeros(2)
        return np.array([dx, side * 0.5 * nominal.nominal_step_width + dy]) + jitter

    ep_rngs = []
    for i in range(B):
        ep_ids[i] = cfg.seed_tag * (1 << 32) + i
        ep_rng = np.random.default_rng([cfg.seed, cfg.seed_tag, i])
        ep_rngs.append(ep_rng)
        params = ranges.sample(ep_rng) if ranges is not None else nominal
        sim.set_params(i, params)
        sim.set_rng(i, ep_rng)
        standing_reset(sim, i, ep_rng)
        prefix_left[i] = int(ep_rng.integers(cfg.prefix_lo, cfg.prefix_hi + 1))
        prefix_cmd[i] = [ep_rng.uniform(0.0, 0.5),
                         ep_rng.uniform(-0.5 * nominal.nominal_step_width,
                                        0.5 * nominal.nominal_step_width)]
        command_obs[i] = prefix_command(i, ep_rngs[i])

    h, c = policy.zero_state(B)
    snap_state = [None] * B
    snap_h = np.zeros_like(h)
    snap_c = np.zeros_like(c)
    snap_s = np.zeros((B, STATE_DIM))
    branch_targets = np.zeros((B, cfg.branches, 2))

    for _ in range(MAX_PREFIX_TICKS):
        res, h, c = _policy_tick(policy, sim, command_obs, h, c, False, None)
        for i in np.nonzero(res.touchdown & ~anchored & ~sim.fallen)[0]:
            if randomize_prefix_targets:
                prefix_cmd[i] = [ep_rngs[i].uniform(0.0, 0.5),
                                 ep_rngs[i].uniform(-0.5 * nominal.nominal_step_width,
                                                    0.5 * nominal.nominal_step_width)]
            prefix_left[i] -= 1
            if prefix_left[i] > 0:
                command_obs[i] = prefix_command(i, ep_rngs[i])
            else:
                anchored[i] = True
                snap_state[i] = sim.state_view(i)
                snap_h[i] = h[i]
                snap_c[i] = c[i]
                snap_s[i] = state_snapshot(sim, i, float(res.applied_dphi[i]))
                branch_targets[i] = sample_command_box(ep_rngs[i], cfg.branches)
        if (anchored | sim.fallen).all():
            break
    # an env that fell after its snapshot was taken still replays cleanly
    live = anchored
    discarded_eps = int(B - live.sum())

    repeats = cfg.k_repeats if cfg.variant == "NoisyTouchdownAvg" else 1
    rows_s: List[np.ndarray] = []
    rows_next: List[np.ndarray] = []
    rows_c: List[np.ndarray] = []
    rows_eps: List[float] = []
    rows_ep: List[int] = []
    rows_branch: List[int] = []
    discarded_branches = 0

    live_idx = np.nonzero(live)[0]
    for j in range(cfg.branches):
        eps_acc = np.zeros((B, repeats))
        ok = np.zeros((B, repeats), dtype=bool)
        first_next = np.zeros((B, STATE_DIM))
        for k in range(repeats):
            for i in live_idx:
                sim.load_state(i, snap_state[i])
                sim.set_rng(i, np.random.default_rng([cfg.seed, cfg.seed_tag,
                                                      int(i), 23, j, k]))
                h[i] = snap_h[i]
                c[i] = snap_c[i]
                command_obs[i] = branch_targets[i, j]
            world_target = sim.com + command_obs
            pending = live.copy()
            for _ in range(MAX_STEP_TICKS):
                res, h, c = _policy_tick(policy, sim, command_obs, h, c,
                                         False, None)
                for i in np.nonzero(res.touchdown & pending)[0]:
                    if not sim.fallen[i]:
                        eps_acc[i, k] = np.linalg.norm(res.new_stance[i]
                                                       - world_target[i])
                        ok[i, k] = True
                        if k == 0:
                            first_next[i] = state_snapshot(
                                sim, i, float(res.applied_dphi[i]))
                    pending[i] = False
                pending &= ~sim.fallen
                if not pending.any():
                    break
        for i in live_idx:
            if ok[i].all():
                rows_s.append(snap_s[i].copy())
                rows_next.append(first_next[i].copy())
                rows_c.append(branch_targets[i, j].copy())
                rows_eps.append(float(eps_acc[i].mean()))
                rows_ep.append(int(ep_ids[i]))
                rows_branch.append(j)
            else:
                discarded_branches += 1

    n = len(rows_eps)
    ds = TupleDataset(
        variant=cfg.variant, seed=cfg.seed,
        s=np.array(rows_s).reshape(n, STATE_DIM),
        s_next=np.array(rows_next).reshape(n, STATE_DIM),
        c=np.array(rows_c).reshape(n, 2),
        eps=np.array(rows_eps), episode=np.array(rows_ep, dtype=np.int64),
        branch=np.array(rows_branch, dtype=np.int64),
        info={"discarded_episodes": discarded_eps,
              "discarded_branches": discarded_branches,
              "episodes": cfg.n_episodes})
    return ds


def collect_eval_dataset(policy: Policy, cfg: CollectConfig,
                         nominal: PhysicsParams = PhysicsParams()) -> TupleDataset:
    """Held-out tuples: Vanilla recipe but every prefix step gets its own
    random target, under a seed tag disjoint from all training datasets."""
    eval_cfg = CollectConfig(variant=EVAL_TAG, n_episodes=cfg.n_episodes,
                             branches=cfg.branches, prefix_lo=cfg.prefix_lo,
                             prefix_hi=cfg.prefix_hi, seed=cfg.seed,
                             seed_tag=19)
    return collect_dataset(policy, eval_cfg, nominal,
                           randomize_prefix_targets=True)


# -- training ------------------------------------------------------------------


@dataclass
class FitConfig:
    iterations: int = 3000
    batch: int = 256
    lr: float = 1e-3
    seed: int = 0
    eval_every: int = 100


def train_model(dataset: TupleDataset, fit: FitConfig,
                eval_dataset: Optional[TupleDataset] = None
                ) -> Tuple[ReachabilityModel, List[dict]]:
    """Minibatch Adam on shuffled tuples; identical budget for every variant.

    Returns (model, curve); curve rows log the split loss terms and the
    held-out mean |eps - eps_hat| when an eval set is provided.
    """
    if len(dataset) == 0:
        raise ConfigError("empty tuple dataset")
    rng = np.random.default_rng([fit.seed, 29])
    model = ReachabilityModel(np.random.default_rng([fit.seed, 31]))
    adam = nn.Adam(model.params(), lr=fit.lr)
    curve: List[dict] = []

    def eval_mae() -> float:
        if eval_dataset is None or len(eval_dataset) == 0:
            return float("nan")
        eps_hat, _ = model.predict_state_batch(eval_dataset.s, eval_dataset.c)
        return float(np.abs(eps_hat - eval_dataset.eps).mean())

    for it in range(fit.iterations):
        idx = rng.integers(0, len(dataset), size=min(fit.batch, len(dataset)))
        loss, grads, info = reachability_loss_batch(
            model, dataset.s[idx], dataset.s_next[idx], dataset.c[idx],
            dataset.eps[idx])
        adam.step(grads, lr=fit.lr)
        if (it + 1) % fit.eval_every == 0 or it == fit.iterations - 1:
            curve.append({"iteration": it + 1, "loss": loss,
                          "err_term": info["err_term"],
                          "latent_term": info["latent_term"],
                          "eval_mae": eval_mae()})
    model.meta = {"variant": dataset.variant, "fit_seed": fit.seed,
                  "iterations": fit.iterations, "n_tuples": len(dataset)}
    return model, curve


def write_fit_curve_csv(path, curve: List[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "loss", "err_term", "latent_term", "eval_mae"])
        for row in curve:
            w.writerow([row["iteration"], f"{row['loss']:.8f}",
                        f"{row['err_term']:.8f}", f"{row['latent_term']:.8f}",
                        f"{row['eval_mae']:.8f}"])


# -- reachable region ------------------------------------------------------------


def command_grid(pitch: float = 0.02) -> np.ndarray:
    """Lattice over the command box, (N, 2); default 26 x 21 points."""
    xs = np.round(np.arange(COMMAND_BOX_X[0], COMMAND_BOX_X[1] + 1e-9, pitch), 9)
    ys = np.round(np.arange(COMMAND_BOX_Y[0], COMMAND_BOX_Y[1] + 1e-9, pitch), 9)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def reachable_region(model: ReachabilityModel, s: np.ndarray,
                     threshold: float = ERROR_THRESHOLD,
                     grid: Optional[np.ndarray] = None) -> dict:
    """Grid commands whose predicted step error is below the threshold."""
    grid = command_grid() if grid is None else np.asarray(grid, float)
    z = model.encode(np.asarray(s, float)[None, :])
    zs = np.repeat(z, grid.shape[0], axis=0)
    eps_hat, _ = model.predict_latent_batch(zs, grid)
    mask = eps_hat < threshold
    return {"grid": grid, "eps_hat": eps_hat, "mask": mask,
            "reachable": grid[mask], "threshold": threshold}
