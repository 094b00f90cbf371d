"""Two-part walking policy.

A single-layer LSTM consumes only proprioception (the dynamics module);
feedforward action and value heads consume the LSTM output together with the
clock encoding and the current command.  Keeping task inputs out of the
recurrent path is what makes the dynamics module transferable between the
velocity-command task and the footstep task: snapshots carry the LSTM weights
plus a proprioception schema hash that is verified on load.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from . import nn
from .sim import DPHI_MAX, DPHI_MIN, DPHI_NOMINAL, ConfigError

PROPRIO_FIELDS = (
    "com_vel_x", "com_vel_y",
    "com_minus_stance_x", "com_minus_stance_y",
    "swing_minus_pelvis_x", "swing_minus_pelvis_y",
    "stance_side_flag",
)
PROPRIO_DIM = len(PROPRIO_FIELDS)
CLOCK_DIM = 2
COMMAND_DIM = 2
OBS_DIM = PROPRIO_DIM + CLOCK_DIM + COMMAND_DIM
ACTION_DIM = 3

# raw network outputs map to physical units through fixed scales; the sim
# applies the hard clamps, so the map itself stays bijective for log-probs
POS_SCALE_M = 0.4
DPHI_SCALE = 1.5 * 0.5 * (DPHI_MAX - DPHI_MIN)

LOG_STD_MIN = -5.0
LOG_STD_MAX = 0.5

SNAPSHOT_KIND = "dynamics_module"


def proprio_schema_hash() -> str:
    return hashlib.sha256(",".join(PROPRIO_FIELDS).encode()).hexdigest()[:16]


def clock_encoding(phase):
    """Continuous embedding of the periodic phase: (sin, cos) of 2*pi*phase."""
    phase = np.asarray(phase, dtype=float)
    return np.stack([np.sin(2.0 * np.pi * phase), np.cos(2.0 * np.pi * phase)], axis=-1)


@dataclass
class Command:
    """Pelvis-relative target offset, fixed between touchdowns."""

    offset_xy: np.ndarray
    valid: bool = True


@dataclass
class Action:
    swing_offset: np.ndarray
    dphi: float
    raw: np.ndarray
    log_prob: Optional[float] = None


def action_from_raw(raw: np.ndarray):
    """Map raw network outputs to physical units; works on (..., 3) arrays."""
    raw = np.asarray(raw, dtype=float)
    offsets = raw[..., :2] * POS_SCALE_M
    dphi = DPHI_NOMINAL + raw[..., 2] * DPHI_SCALE
    return offsets, dphi


def gaussian_log_prob(raw, mean, log_std):
    """Diagonal-Gaussian log density in raw action space, summed over dims."""
    z = (raw - mean) / np.exp(log_std)
    return (-0.5 * z * z - log_std - 0.5 * math.log(2.0 * math.pi)).sum(axis=-1)


def gaussian_entropy(log_std) -> float:
    return float((log_std + 0.5 * math.log(2.0 * math.pi * math.e)).sum())


@dataclass
class PolicyConfig:
    lstm_hidden: int = 64
    head_hidden: Tuple[int, ...] = (64, 64)
    value_hidden: Tuple[int, ...] = (64, 64)
    init_log_std: float = -0.7
    command_schema: str = "footstep"  # or "velocity"
    head_out_scale: float = 0.01


class Policy:
    """LSTM dynamics module + feedforward action/value heads."""

    def __init__(self, cfg: PolicyConfig, rng: np.random.Generator):
        self.cfg = cfg
        H = cfg.lstm_hidden
        self.lstm = nn.LstmCell(PROPRIO_DIM, H, rng)
        head_in = H + CLOCK_DIM + COMMAND_DIM
        self.head = nn.Mlp([head_in, *cfg.head_hidden, ACTION_DIM], rng,
                           hidden_activation="relu", out_scale=cfg.head_out_scale)
        self.value = nn.Mlp([head_in, *cfg.value_hidden, 1], rng,
                            hidden_activation="relu")
        self.log_std = np.full(ACTION_DIM, cfg.init_log_std)
        self._params = {}
        for k, v in self.lstm.params.items():
            self._params["lstm." + k] = v
        for k, v in self.head.params.items():
            self._params["head." + k] = v
        for k, v in self.value.params.items():
            self._params["value." + k] = v
        self._params["log_std"] = self.log_std

    def params(self) -> dict:
        return self._params

    def clamp_log_std_(self) -> None:
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)

    def zero_state(self, batch: int):
        return self.lstm.zero_state(batch)

    # -- forward -----------------------------------------------------------

    @staticmethod
    def split_obs(obs: np.ndarray):
        return obs[..., :PROPRIO_DIM], obs[..., PROPRIO_DIM:]

    def forward_step(self, obs: np.ndarray, h: np.ndarray, c: np.ndarray):
        """obs: (B, OBS_DIM) -> (mean_raw, value, h2, c2, cache).

        Only the proprio block enters the LSTM; clock and command join at
        the heads.
        """
        proprio, task = self.split_obs(obs)
        h2, c2, lstm_cache = self.lstm.step(proprio, h, c)
        feats = np.concatenate([h2, task], axis=1)
        mean, head_cache = self.head.forward(feats)
        val, value_cache = self.value.forward(feats)
        cache = (lstm_cache, head_cache, value_cache)
        return mean, val[:, 0], h2, c2, cache

    def forward_sequence(self, obs: np.ndarray, resets: np.ndarray,
                         h0: Optional[np.ndarray] = None,
                         c0: Optional[np.ndarray] = None):
        """obs: (T, B, OBS_DIM); resets: (T, B) bool marking episode starts.

        h0/c0 seed the recurrent state for truncated-BPTT chunks (treated as
        constants, no gradient); omitted they default to zeros.  Hidden state
        is zeroed where resets are set, so truncation windows stay aligned
        with episode boundaries.
        """
        T, B, _ = obs.shape
        if h0 is None:
            h, c = self.zero_state(B)
        else:
            h, c = h0.copy(), c0.copy()
        means = np.empty((T, B, ACTION_DIM))
        values = np.empty((T, B))
        caches = []
        for t in range(T):
            if resets[t].any():
                keep = (~resets[t])[:, None]
                h = h * keep
                c = c * keep
            means[t], values[t], h, c, cache = self.forward_step(obs[t], h, c)
            caches.append(cache)
        return means, values, (h, c), caches

    def backward_sequence(self, caches, resets: np.ndarray,
                          dmeans: np.ndarray, dvalues: np.ndarray) -> dict:
        """Exact BPTT through forward_sequence; returns grads keyed like params().

        Gradient flow is cut at reset positions, matching the zeroed state.
        """
        T = len(caches)
        grads = {k: np.zeros_like(v) for k, v in self._params.items()}
        lstm_grads = self.lstm.zero_grads()
        head_grads = {k: np.zeros_like(v) for k, v in self.head.params.items()}
        value_grads = {k: np.zeros_like(v) for k, v in self.value.params.items()}
        H = self.cfg.lstm_hidden
        dh_next = None
        dc_next = None
        for t in reversed(range(T)):
            lstm_cache, head_cache, value_cache = caches[t]
            dfeat_head, hg = self.head.backward(head_cache, dmeans[t])
            dfeat_val, vg = self.value.backward(value_cache, dvalues[t][:, None])
            nn.add_grads_(head_grads, hg)
            nn.add_grads_(value_grads, vg)
            dfeat = dfeat_head + dfeat_val
            dh = dfeat[:, :H]
            if dh_next is not None:
                dh = dh + dh_next
                dc = dc_next
            else:
                dc = np.zeros_like(dh)
            _, dh_prev, dc_prev = self.lstm.backward_step(lstm_cache, dh, dc, lstm_grads)
            cut = resets[t][:, None]
            dh_next = np.where(cut, 0.0, dh_prev)
            dc_next = np.where(cut, 0.0, dc_prev)
        for k, v in lstm_grads.items():
            grads["lstm." + k] = v
        for k, v in head_grads.items():
            grads["head." + k] = v
        for k, v in value_grads.items():
            grads["value." + k] = v
        return grads

    # -- acting --------------------------------------------------------------

    def act(self, obs: np.ndarray, h: np.ndarray, c: np.ndarray,
            rng: Optional[np.random.Generator] = None, stochastic: bool = True):
        """Batched action selection: returns (raw, log_prob, value, h2, c2)."""
        mean, value, h2, c2, _ = self.forward_step(obs, h, c)
        if stochastic:
            if rng is None:
                raise ConfigError("stochastic action needs an rng")
            raw = mean + np.exp(self.log_std) * rng.standard_normal(mean.shape)
        else:
            raw = mean
        logp = gaussian_log_prob(raw, mean, self.log_std)
        return raw, logp, value, h2, c2

    def act_single(self, obs: np.ndarray, h, c, rng=None, stochastic=True):
        raw, logp, value, h2, c2 = self.act(obs[None, :], h, c, rng, stochastic)
        offsets, dphi = action_from_raw(raw[0])
        action = Action(swing_offset=offsets, dphi=float(dphi), raw=raw[0],
                        log_prob=float(logp[0]))
        return action, float(value[0]), h2, c2

    # -- persistence ------------------------------------------------------------

    def meta(self) -> dict:
        return {
            "proprio_schema_hash": proprio_schema_hash(),
            "lstm_hidden": self.cfg.lstm_hidden,
            "command_schema": self.cfg.command_schema,
            "obs_dim": OBS_DIM,
        }

    def save(self, path, extra_meta: Optional[dict] = None) -> None:
        meta = self.meta()
        meta.update(extra_meta or {})
        nn.save_params(path, self._params, meta)

    def load(self, path) -> dict:
        params, meta = nn.load_params(path)
        if meta.get("proprio_schema_hash") != proprio_schema_hash():
            raise ConfigError("checkpoint proprioception schema does not match this build")
        missing = set(self._params) - set(params)
        if missing:
            raise ConfigError(f"checkpoint missing parameters: {sorted(missing)}")
        for k, v in self._params.items():
            if params[k].shape != v.shape:
                raise ConfigError(f"checkpoint shape mismatch for {k}")
            v[...] = params[k]
        return meta


def save_dynamics_snapshot(path, policy: Policy, source_task: str,
                           training_ticks: int) -> None:
    """Persist only the recurrent dynamics module plus its schema metadata."""
    meta = {
        "kind": SNAPSHOT_KIND,
        "source_task": source_task,
        "training_ticks": int(training_ticks),
        "proprio_schema_hash": proprio_schema_hash(),
        "lstm_hidden": policy.cfg.lstm_hidden,
    }
    nn.save_params(path, dict(policy.lstm.params), meta)


def load_dynamics_module(policy: Policy, path) -> dict:
    """Copy snapshot LSTM weights into policy (heads keep their fresh init)."""
    params, meta = nn.load_params(path)
    if meta.get("kind") != SNAPSHOT_KIND:
        raise ConfigError(f"{path} is not a dynamics-module snapshot")
    if meta.get("proprio_schema_hash") != proprio_schema_hash():
        raise ConfigError("snapshot proprioception schema does not match this build")
    if meta.get("lstm_hidden") != policy.cfg.lstm_hidden:
        raise ConfigError("snapshot hidden width does not match the policy")
    for k in policy.lstm.params:
        policy.lstm.params[k][...] = params[k]
    return meta
