"""Episode drivers: command generation, reward shaping, and lockstep batched
rollouts for PPO windows and deterministic evaluation episodes.

Parallelism is a vectorized batch in one process.  Every episode owns one RNG
stream derived from (master seed, window, env slot, episode index), so results
are independent of batch width and bit-identical across reruns.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .policy import (COMMAND_DIM, OBS_DIM, Policy, action_from_raw,
                     clock_encoding)
from .sim import (CONTROL_DT, DPHI_MAX, DPHI_MIN, DPHI_NOMINAL, LEFT, RIGHT,
                  PhysicsParams, RandomizationRanges, TouchdownRecord, VecSim,
                  ConfigError, trajectory_line)

REGIMES = ("forward", "backward", "in-place", "lateral")
DEFAULT_REGIME_WEIGHTS = {"forward": 0.55, "backward": 0.15,
                          "in-place": 0.15, "lateral": 0.15}


@dataclass(frozen=True)
class RewardWeights:
    w_step: float = 1.0          # touchdown bonus scale
    sigma_step: float = 0.15     # meters of placement error per e-fold
    w_alive: float = 0.05        # per-tick survival bonus
    w_vel: float = 0.1           # penalty above the speed cap
    v_cap: float = 2.0
    w_dphi: float = 0.05         # cadence deviation penalty on (dphi - nominal)^2
    sigma_vel: float = 0.25      # velocity-task tracking scale


DPHI_RANGE = DPHI_MAX - DPHI_MIN


def footstep_tick_reward(w: RewardWeights, speed: np.ndarray,
                         applied_dphi: np.ndarray, td_error: np.ndarray,
                         td_mask: np.ndarray) -> np.ndarray:
    over = np.maximum(speed - w.v_cap, 0.0)
    # cadence deviation in units of the legal range: railing the clock costs
    # w_dphi/4 per tick, so timing stays a usable degree of freedom
    dev = (applied_dphi - DPHI_NOMINAL) / DPHI_RANGE
    r = w.w_alive - w.w_vel * over * over - w.w_dphi * dev * dev
    bonus = w.w_step * np.exp(-td_error / w.sigma_step)
    return r + np.where(td_mask, bonus, 0.0)


def velocity_tick_reward(w: RewardWeights, com_vel: np.ndarray,
                         v_des: np.ndarray) -> np.ndarray:
    err = np.sqrt(((com_vel - v_des) ** 2).sum(axis=1))
    return np.exp(-err / w.sigma_vel) + w.w_alive


# -- commands -------------------------------------------------------------------


@dataclass
class CommandSequence:
    regime: str
    offsets: np.ndarray          # (N, 2) target chain in episode start coordinates
    sides: np.ndarray            # (N,) +1 where the left foot lands


def generate_command_sequence(regime: str, n_steps: int, first_side: int,
                              rng: np.random.Generator,
                              width: float = 0.2,
                              difficulty: float = 1.0) -> CommandSequence:
    """Procedural footstep plan for one episode, as a chain in the start frame.

    first_side is the sign (+1 left) of the first upcoming touchdown; sides
    strictly alternate from there.  offsets[k] is the k-th target in episode
    start coordinates: x marches by the per-step draw, y straddles the walking
    line at side * width / 2.  difficulty in [0, 1] scales the command ranges
    (training ramp); 1.0 is the full distribution.
    """
    if regime not in REGIMES:
        raise ConfigError(f"unknown command regime {regime!r}")
    d = float(np.clip(difficulty, 0.0, 1.0))
    x_max = 0.1 + 0.4 * d
    dy_max = 0.5 * width * (0.25 + 0.75 * d)
    sides = first_side * (-1) ** np.arange(n_steps)
    y = sides * (0.5 * width)
    x = np.zeros(n_steps)
    if regime == "forward":
        x = np.cumsum(rng.uniform(0.0, x_max, n_steps))
        y = y + rng.uniform(-dy_max, dy_max, n_steps)
    elif regime == "backward":
        x = -np.cumsum(rng.uniform(0.0, x_max, n_steps))
        y = y + rng.uniform(-dy_max, dy_max, n_steps)
    elif regime == "lateral":
        drift = d * rng.uniform(-0.08, 0.08)
        y = y + drift * np.arange(1, n_steps + 1) + rng.uniform(-0.1, 0.1, n_steps)
    # in-place keeps x = 0, y = side * width / 2 exactly
    return CommandSequence(regime=regime, offsets=np.stack([x, y], axis=1),
                           sides=sides.astype(int))


def next_touchdown_side(sim: VecSim, i: int) -> int:
    """Sign of the foot that lands next: the current swing side."""
    return -1 if sim.stance_is_left[i] else 1


def clamp_command(cmd: np.ndarray, side: int, width: float,
                  difficulty: float) -> np.ndarray:
    """Pull an issued target offset into the difficulty-scaled command envelope.

    World-anchored chains make the raw offset grow without bound once the
    walker lags its plan, and the touchdown bonus flattens to zero there.
    Clamping keeps every issued command reachable (so the bonus keeps a usable
    gradient at every touchdown) while still pointing at the true target; for
    a walker that is tracking well the clamp is the identity.
    """
    d = float(np.clip(difficulty, 0.0, 1.0))
    x_max = 0.1 + 0.4 * d
    # forward/backward y jitter is dy_max; lateral jitter is a flat 0.1
    y_slack = 0.5 * width * (0.25 + 0.75 * d) + 0.1
    y0 = side * 0.5 * width
    return np.array([float(np.clip(cmd[0], -x_max, x_max)),
                     y0 + float(np.clip(cmd[1] - y0, -y_slack, y_slack))])


class CommandProvider:
    """Task controller: supplies the command stream for each env slot."""

    has_targets = True   # whether commands are positional targets scoring errors

    def reset(self, i: int, sim: VecSim, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def on_touchdown(self, i: int, sim: VecSim,
                     rec: TouchdownRecord) -> Optional[np.ndarray]:
        """Next command offset, or None when the episode is complete."""
        raise NotImplementedError

    def tick(self, i: int, sim: VecSim, ticks_in_episode: int) -> Optional[np.ndarray]:
        """Optional per-tick command override (used by the velocity task)."""
        return None

    def scored(self, i: int) -> bool:
        """Whether the upcoming touchdown counts toward error metrics."""
        return True


class SequenceProvider(CommandProvider):
    """Procedural target chains, one regime drawn per episode.

    The chain is fixed in the world at reset time; each touchdown command is
    the next chain point relative to the current pelvis, so tracking errors
    do not compound into the remaining commands.  Issued offsets are clamped
    into the difficulty-scaled envelope (see clamp_command)."""

    def __init__(self, regime_weights: Optional[Dict[str, float]] = None,
                 fixed_regimes: Optional[Sequence[str]] = None,
                 width: float = 0.2, n_steps: int = 32,
                 difficulty: float = 1.0):
        self.width = width
        self.n_steps = n_steps
        self.difficulty = difficulty  # command-range scale, ramped by training
        self.fixed_regimes = list(fixed_regimes) if fixed_regimes else None
        weights = dict(regime_weights or DEFAULT_REGIME_WEIGHTS)
        self._names = list(weights)
        probs = np.array([weights[k] for k in self._names], dtype=float)
        self._probs = probs / probs.sum()
        self._state: Dict[int, list] = {}

    def reset(self, i, sim, rng):
        if self.fixed_regimes is not None:
            # env slot == episode index in evaluation batches
            regime = self.fixed_regimes[i % len(self.fixed_regimes)]
        else:
            regime = self._names[int(rng.choice(len(self._names), p=self._probs))]
        seq = generate_command_sequence(regime, self.n_steps,
                                        next_touchdown_side(sim, i), rng,
                                        self.width, self.difficulty)
        chain = seq.offsets + sim.com[i]
        self._state[i] = [chain, 0]
        return clamp_command(chain[0] - sim.com[i], seq.sides[0],
                             self.width, self.difficulty)

    def on_touchdown(self, i, sim, rec):
        st = self._state[i]
        st[1] += 1
        chain, ptr = st
        side = next_touchdown_side(sim, i)
        if ptr >= len(chain):
            # chain exhausted: hold position with the in-place nominal
            return np.array([0.0, side * self.width * 0.5])
        return clamp_command(chain[ptr] - sim.com[i], side,
                             self.width, self.difficulty)


class VelocityProvider(CommandProvider):
    """Velocity/direction commands, resampled on a fixed tick schedule."""

    has_targets = False

    def __init__(self, resample_every: int = 120,
                 vx_range: Tuple[float, float] = (-0.6, 1.0),
                 vy_range: Tuple[float, float] = (-0.3, 0.3)):
        self.resample_every = resample_every
        self.vx_range = vx_range
        self.vy_range = vy_range
        self._state: Dict[int, list] = {}

    def _draw(self, rng):
        return np.array([rng.uniform(*self.vx_range), rng.uniform(*self.vy_range)])

    def reset(self, i, sim, rng):
        v = self._draw(rng)
        self._state[i] = [rng, v]
        return v.copy()

    def on_touchdown(self, i, sim, rec):
        return self._state[i][1].copy()

    def tick(self, i, sim, ticks_in_episode):
        if ticks_in_episode > 0 and ticks_in_episode % self.resample_every == 0:
            rng, _ = self._state[i]
            v = self._draw(rng)
            self._state[i][1] = v
            return v.copy()
        return None


# -- shared helpers ---------------------------------------------------------------


def build_obs(sim: VecSim, command_obs: np.ndarray, noisy: bool) -> np.ndarray:
    pro = sim.proprio(noisy=noisy)
    enc = clock_encoding(sim.phase)
    return np.concatenate([pro, enc, command_obs], axis=1)


def standing_reset(sim: VecSim, i: int, rng: np.random.Generator,
                   origin=(0.0, 0.0), com_jitter: float = 0.02,
                   vel_jitter: float = 0.1, phase: Optional[float] = None) -> None:
    """Fresh standing configuration with randomized phase and velocity."""
    if phase is None:
        phase = float(rng.uniform(0.0, 1.0))
    stance_left = phase < 0.5
    sign = 1.0 if stance_left else -1.0
    w = float(sim.width[i])
    origin = np.asarray(origin, dtype=float)
    stance = origin + np.array([0.0, sign * w / 2.0])
    swing = origin + np.array([0.0, -sign * w / 2.0])
    com = origin + rng.normal(0.0, com_jitter, 2)
    vel = rng.normal(0.0, vel_jitter, 2)
    sim.reset_walker(i, com=com, vel=vel, stance=stance, swing=swing,
                     stance_side=LEFT if stance_left else RIGHT, phase=phase)


def quiet(params: PhysicsParams) -> PhysicsParams:
    """Deterministic variant of a parameter set: all noise sources off."""
    return replace(params, sensor_noise_std=0.0, touchdown_slip_std=0.0)


# -- training windows ----------------------------------------------------------------


@dataclass
class RolloutBatch:
    obs: np.ndarray        # (T, B, OBS_DIM)
    raw: np.ndarray        # (T, B, 3)
    logp: np.ndarray       # (T, B)
    value: np.ndarray      # (T, B)
    reward: np.ndarray     # (T, B)
    done: np.ndarray       # (T, B) bool: episode ended (fall) after this tick
    reset: np.ndarray      # (T, B) bool: tick starts a fresh episode
    h0: np.ndarray         # (T, B, H) recurrent state entering each tick
    c0: np.ndarray         # (T, B, H)
    bootstrap: np.ndarray  # (B,) value estimate past the window edge
    stats: dict = field(default_factory=dict)


class TrainingRunner:
    """Collects fixed-length windows; every window restarts all env slots so
    recurrent truncation stays aligned with episode starts."""

    def __init__(self, policy: Policy, n_envs: int, *, seed: int,
                 task: str = "footstep",
                 nominal: PhysicsParams = PhysicsParams(),
                 randomize: Optional[RandomizationRanges] = None,
                 horizon: int = 300,
                 reward_weights: RewardWeights = RewardWeights(),
                 provider: Optional[CommandProvider] = None,
                 noisy_obs: bool = True):
        if task not in ("footstep", "velocity"):
            raise ConfigError(f"unknown task {task!r}")
        self.policy = policy
        self.sim = VecSim(n_envs, nominal)
        self.n_envs = n_envs
        self.seed = seed
        self.task = task
        self.nominal = nominal
        self.randomize = randomize
        self.horizon = horizon
        self.weights = reward_weights
        self.noisy_obs = noisy_obs
        if provider is None:
            provider = SequenceProvider() if task == "footstep" else VelocityProvider()
        self.provider = provider
        self.window_idx = 0

    def _reset_env(self, i: int, window: int, episode: int,
                   command_obs: np.ndarray, world_target: np.ndarray) -> None:
        ep_rng = np.random.default_rng([self.seed, 11, window, i, episode])
        params = self.randomize.sample(ep_rng) if self.randomize else self.nominal
        self.sim.set_params(i, params)
        self.sim.set_rng(i, ep_rng)
        standing_reset(self.sim, i, ep_rng)
        first = self.provider.reset(i, self.sim, ep_rng)
        command_obs[i] = first
        world_target[i] = self.sim.com[i] + first

    def collect_window(self) -> RolloutBatch:
        T, B = self.horizon, self.n_envs
        window = self.window_idx
        self.window_idx += 1
        arng = np.random.default_rng([self.seed, 7, window])

        H = self.policy.cfg.lstm_hidden
        obs_buf = np.empty((T, B, OBS_DIM))
        raw_buf = np.empty((T, B, 3))
        logp_buf = np.empty((T, B))
        val_buf = np.empty((T, B))
        rew_buf = np.empty((T, B))
        done_buf = np.zeros((T, B), dtype=bool)
        reset_buf = np.zeros((T, B), dtype=bool)
        h_buf = np.empty((T, B, H))
        c_buf = np.empty((T, B, H))

        command_obs = np.zeros((B, COMMAND_DIM))
        world_target = np.zeros((B, 2))
        episode_k = np.zeros(B, dtype=int)
        ticks_in_ep = np.zeros(B, dtype=int)
        ep_return = np.zeros(B)

        falls = 0
        episodes_done = 0
        finished_returns: List[float] = []
        td_errors: List[float] = []

        for i in range(B):
            self._reset_env(i, window, 0, command_obs, world_target)
        reset_buf[0, :] = True
        h, c = self.policy.zero_state(B)

        for t in range(T):
            for i in range(B):
                v = self.provider.tick(i, self.sim, int(ticks_in_ep[i]))
                if v is not None:
                    command_obs[i] = v
            obs = build_obs(self.sim, command_obs, self.noisy_obs)
            h_buf[t] = h
            c_buf[t] = c
            raw, logp, value, h, c = self.policy.act(obs, h, c, arng, stochastic=True)
            offsets, dphi = action_from_raw(raw)
            res = self.sim.control_tick(offsets, dphi)

            eps_vec = np.zeros(B)
            if self.provider.has_targets:
                for i in np.nonzero(res.touchdown)[0]:
                    eps = float(np.linalg.norm(res.new_stance[i] - world_target[i]))
                    eps_vec[i] = eps
                    td_errors.append(eps)
                    nxt = self.provider.on_touchdown(i, self.sim, None)
                    command_obs[i] = nxt
                    world_target[i] = self.sim.com[i] + nxt
            else:
                for i in np.nonzero(res.touchdown)[0]:
                    command_obs[i] = self.provider.on_touchdown(i, self.sim, None)

            if self.task == "footstep":
                rew = footstep_tick_reward(self.weights, self.sim.speed(),
                                           res.applied_dphi, eps_vec, res.touchdown)
            else:
                rew = velocity_tick_reward(self.weights, self.sim.vel, command_obs)

            obs_buf[t] = obs
            raw_buf[t] = raw
            logp_buf[t] = logp
            val_buf[t] = value
            rew_buf[t] = rew
            done_buf[t] = res.newly_fallen
            ep_return += rew
            ticks_in_ep += 1

            fallen_now = np.nonzero(res.newly_fallen)[0]
            falls += len(fallen_now)
            episodes_done += len(fallen_now)
            for i in fallen_now:
                finished_returns.append(float(ep_return[i]))
                ep_return[i] = 0.0
                ticks_in_ep[i] = 0
                if t + 1 < T:
                    episode_k[i] += 1
                    self._reset_env(i, window, int(episode_k[i]), command_obs,
                                    world_target)
                    reset_buf[t + 1, i] = True
                    h[i] = 0.0
                    c[i] = 0.0

        final_obs = build_obs(self.sim, command_obs, self.noisy_obs)
        _, bootstrap, _, _, _ = self.policy.forward_step(final_obs, h, c)

        survivors = ep_return[~done_buf[T - 1]]
        stats = {
            "samples": T * B,
            "falls": falls,
            "episodes": episodes_done + int((~done_buf[T - 1]).sum()),
            "mean_return": float(np.mean(finished_returns + list(survivors)))
            if (finished_returns or survivors.size) else 0.0,
            "mean_td_error": float(np.mean(td_errors)) if td_errors else float("nan"),
            "touchdowns": len(td_errors),
        }
        return RolloutBatch(obs=obs_buf, raw=raw_buf, logp=logp_buf, value=val_buf,
                            reward=rew_buf, done=done_buf, reset=reset_buf,
                            h0=h_buf, c0=c_buf, bootstrap=bootstrap, stats=stats)


# -- evaluation episodes ----------------------------------------------------------------


@dataclass
class EpisodeResult:
    records: List[TouchdownRecord]
    scored_errors: List[float]
    fell: bool
    completed: bool
    ticks: int
    total_reward: float
    step_pairs: List[Tuple[float, float]]  # (commanded offset norm, step duration)
    tracking_errors: List[float] = field(default_factory=list)


def run_episodes(policy: Policy, provider: CommandProvider, n_episodes: int, *,
                 seed: int, nominal: PhysicsParams,
                 randomize: Optional[RandomizationRanges] = None,
                 noisy_obs: bool = False, stochastic: bool = False,
                 reward_weights: RewardWeights = RewardWeights(),
                 task: str = "footstep", max_ticks: int = 600,
                 trajectory_sink: Optional[Callable[[int, dict], None]] = None,
                 controller=None) -> List[EpisodeResult]:
    """Run n episodes in lockstep until each completes, falls, or times out.

    controller, when given, replaces the policy's action path (used by test
    doubles and scripted baselines); it is called as
    controller(sim, command_obs, world_target) -> (offsets, dphi) arrays.
    """
    B = n_episodes
    sim = VecSim(B, nominal)
    results = [EpisodeResult([], [], False, False, 0, 0.0, []) for _ in range(B)]
    command_obs = np.zeros((B, COMMAND_DIM))
    world_target = np.zeros((B, 2))
    last_td_time = np.zeros(B)
    last_cmd_norm = np.zeros(B)
    active = np.ones(B, dtype=bool)

    for i in range(B):
        ep_rng = np.random.default_rng([seed, i])
        params = randomize.sample(ep_rng) if randomize else nominal
        sim.set_params(i, params)
        sim.set_rng(i, ep_rng)
        standing_reset(sim, i, ep_rng)
        first = provider.reset(i, sim, ep_rng)
        command_obs[i] = first
        world_target[i] = sim.com[i] + first
        last_cmd_norm[i] = float(np.linalg.norm(first))

    h, c = policy.zero_state(B)
    arng = np.random.default_rng([seed, 999983])

    for t in range(max_ticks):
        if not active.any():
            break
        for i in np.nonzero(active)[0]:
            v = provider.tick(i, sim, t)
            if v is not None:
                command_obs[i] = v
        obs = build_obs(sim, command_obs, noisy_obs)
        if controller is None:
            raw, _, _, h, c = policy.act(obs, h, c, arng if stochastic else None,
                                         stochastic=stochastic)
            offsets, dphi = action_from_raw(raw)
        else:
            offsets, dphi = controller(sim, command_obs, world_target)
        res = sim.control_tick(offsets, dphi)

        eps_vec = np.zeros(B)
        for i in np.nonzero(res.touchdown & active)[0]:
            r = results[i]
            side = LEFT if res.td_left[i] else RIGHT
            eps = float(np.linalg.norm(res.new_stance[i] - world_target[i]))
            eps_vec[i] = eps
            rec = TouchdownRecord(step_index=int(sim.step_count[i]),
                                  time_s=float(sim.time[i]), side=side,
                                  target_xy=world_target[i].copy(),
                                  touchdown_xy=res.new_stance[i].copy(),
                                  error_m=eps)
            r.records.append(rec)
            if provider.has_targets and provider.scored(i):
                r.scored_errors.append(eps)
                r.step_pairs.append((float(last_cmd_norm[i]),
                                     float(sim.time[i] - last_td_time[i])))
            last_td_time[i] = float(sim.time[i])
            nxt = provider.on_touchdown(i, sim, rec)
            if nxt is None:
                r.completed = True
                active[i] = False
            else:
                command_obs[i] = nxt
                world_target[i] = sim.com[i] + nxt
                last_cmd_norm[i] = float(np.linalg.norm(nxt))

        if task == "footstep":
            rew = footstep_tick_reward(reward_weights, sim.speed(),
                                       res.applied_dphi, eps_vec, res.touchdown)
        else:
            rew = velocity_tick_reward(reward_weights, sim.vel, command_obs)
            for i in np.nonzero(active)[0]:
                results[i].tracking_errors.append(
                    float(np.linalg.norm(sim.vel[i] - command_obs[i])))

        for i in np.nonzero(active)[0]:
            results[i].total_reward += float(rew[i])
            results[i].ticks += 1
            if trajectory_sink is not None and i == 0:
                event = None
                if res.touchdown[i]:
                    event = "touchdown_" + (LEFT if res.td_left[i] else RIGHT)
                trajectory_sink(t, {"line": trajectory_line(
                    t, sim.state_view(i), command_obs[i], float(res.applied_dphi[i]),
                    event)})

        newly = np.nonzero(res.newly_fallen & active)[0]
        for i in newly:
            results[i].fell = True
            active[i] = False

    return results
