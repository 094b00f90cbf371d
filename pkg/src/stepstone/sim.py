"""Reduced-order 3D walker: a point-mass CoM at constant height (linear
inverted pendulum about the stance foot) plus a kinematic swing foot driven
by a saturated PD loop, paced by a policy-adjustable periodic clock.

State advances at a 2 kHz inner rate grouped into 40 Hz control ticks.  A
batch of independent walkers is stepped in lockstep; the single-walker
helpers at the bottom run a batch of one through the same code path.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np

CONTROL_RATE_HZ = 40.0
CONTROL_DT = 1.0 / CONTROL_RATE_HZ
INNER_DT = 1.0 / 2000.0
INNER_STEPS_PER_TICK = int(round(CONTROL_DT / INNER_DT))  # 50

# A gait cycle (two steps) must last between these bounds, enforced by
# clamping the per-tick phase increment.
CYCLE_TIME_MIN_S = 0.65
CYCLE_TIME_MAX_S = 1.2
DPHI_MIN = 1.0 / (CYCLE_TIME_MAX_S * CONTROL_RATE_HZ)
DPHI_MAX = 1.0 / (CYCLE_TIME_MIN_S * CONTROL_RATE_HZ)
DPHI_NOMINAL = 0.5 * (DPHI_MIN + DPHI_MAX)

FALL_SPEED_LIMIT = 3.0   # m/s on the CoM, above this the walker counts as fallen
SWING_HOLD_PHASE = 0.1   # phase after touchdown during which set-points are ignored
SWING_CLEARANCE_M = 0.1  # apex of the cosmetic swing-height profile

LEFT = "L"
RIGHT = "R"

TRAJECTORY_LOG_VERSION = 1
TOUCHDOWN_CSV_COLUMNS = (
    "step_index", "time_s", "side", "target_x", "target_y",
    "touchdown_x", "touchdown_y", "error_m",
)


class ConfigError(ValueError):
    """Raised for invalid configuration values (bad ranges, malformed files)."""


class SimulationBlowup(RuntimeError):
    """Raised when walker state goes non-finite."""


@dataclass(frozen=True)
class PhysicsParams:
    """Scalar physical parameters of one walker instance."""

    gravity: float = 9.81
    z0: float = 1.0                    # constant CoM height
    r_max: float = 0.8                 # max CoM-to-stance-foot reach before falling
    swing_max_speed: float = 2.0       # swing foot velocity cap
    swing_max_accel: float = 80.0      # swing foot acceleration cap
    swing_kp: float = 400.0
    swing_kd: float = 40.0
    sensor_noise_std: float = 0.005    # per-channel proprioception noise
    touchdown_slip_std: float = 0.01   # foot placement noise at touchdown
    command_latency_ticks: int = 0
    nominal_step_width: float = 0.2

    @property
    def omega(self) -> float:
        return math.sqrt(self.gravity / self.z0)

    def validate(self) -> None:
        positive = ("gravity", "z0", "r_max", "swing_max_speed", "swing_max_accel",
                    "swing_kp", "swing_kd", "nominal_step_width")
        for name in positive:
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("sensor_noise_std", "touchdown_slip_std"):
            if getattr(self, name) < 0.0:
                raise ConfigError(f"{name} must be non-negative")
        if self.command_latency_ticks < 0:
            raise ConfigError("command_latency_ticks must be non-negative")
        if self.command_latency_ticks > MAX_LATENCY_TICKS:
            raise ConfigError(f"command_latency_ticks above supported max {MAX_LATENCY_TICKS}")


MAX_LATENCY_TICKS = 2

_RANGE_FIELDS = (
    "gravity", "z0", "r_max", "swing_max_speed", "swing_max_accel",
    "swing_kp", "swing_kd", "sensor_noise_std", "touchdown_slip_std",
    "command_latency_ticks", "nominal_step_width",
)


@dataclass(frozen=True)
class RandomizationRanges:
    """Per-parameter [lo, hi] intervals sampled once per episode."""

    gravity: tuple = (9.81 * 0.95, 9.81 * 1.05)
    z0: tuple = (0.9, 1.1)
    r_max: tuple = (0.8, 0.8)
    swing_max_speed: tuple = (2.0, 2.0)
    swing_max_accel: tuple = (80.0, 80.0)
    swing_kp: tuple = (320.0, 480.0)
    swing_kd: tuple = (32.0, 48.0)
    sensor_noise_std: tuple = (0.0, 0.01)
    touchdown_slip_std: tuple = (0.0, 0.02)
    command_latency_ticks: tuple = (0, 2)
    nominal_step_width: tuple = (0.2, 0.2)

    def validate(self, nominal: PhysicsParams = PhysicsParams()) -> None:
        for name in _RANGE_FIELDS:
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"range for {name} has lo > hi: ({lo}, {hi})")
            v = getattr(nominal, name)
            if not (lo <= v <= hi):
                raise ConfigError(f"nominal {name}={v} outside range ({lo}, {hi})")

    def sample(self, rng: np.random.Generator) -> PhysicsParams:
        """Draw one parameter set, each scalar uniform in its interval."""
        values = {}
        for name in _RANGE_FIELDS:
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"range for {name} has lo > hi: ({lo}, {hi})")
            if name == "command_latency_ticks":
                values[name] = int(rng.integers(int(lo), int(hi) + 1))
            elif lo == hi:
                values[name] = float(lo)
            else:
                values[name] = float(rng.uniform(lo, hi))
        p = PhysicsParams(**values)
        p.validate()
        return p


def sample_randomization(ranges: RandomizationRanges, rng: np.random.Generator) -> PhysicsParams:
    return ranges.sample(rng)


@dataclass
class ClockState:
    """Periodic gait clock; phase in [0, 1), increment bounds fixed by contract."""

    phase: float = 0.0
    dphi_min: float = DPHI_MIN
    dphi_max: float = DPHI_MAX


@dataclass
class TouchdownRecord:
    step_index: int
    time_s: float
    side: str
    target_xy: np.ndarray
    touchdown_xy: np.ndarray
    error_m: float


@dataclass
class WalkerState:
    """Snapshot of one walker, sufficient to resume simulation exactly."""

    com_pos: np.ndarray
    com_vel: np.ndarray
    stance_pos: np.ndarray
    swing_pos: np.ndarray
    swing_vel: np.ndarray
    stance_side: str
    clock: ClockState
    time_s: float = 0.0
    fallen: bool = False
    swing_height: float = 0.0
    step_count: int = 0
    # engine bookkeeping, carried so single-step helpers stay exact
    prev_phase: float = 0.0
    phase_since_td: float = 0.0
    swing_target: Optional[np.ndarray] = None
    setpoint_hist: Optional[np.ndarray] = None

    def copy(self) -> "WalkerState":
        return WalkerState(
            com_pos=self.com_pos.copy(), com_vel=self.com_vel.copy(),
            stance_pos=self.stance_pos.copy(), swing_pos=self.swing_pos.copy(),
            swing_vel=self.swing_vel.copy(), stance_side=self.stance_side,
            clock=ClockState(self.clock.phase, self.clock.dphi_min, self.clock.dphi_max),
            time_s=self.time_s, fallen=self.fallen, swing_height=self.swing_height,
            step_count=self.step_count, prev_phase=self.prev_phase,
            phase_since_td=self.phase_since_td,
            swing_target=None if self.swing_target is None else self.swing_target.copy(),
            setpoint_hist=None if self.setpoint_hist is None else self.setpoint_hist.copy(),
        )


class TickResult:
    """Per-batch outcome of one control tick."""

    __slots__ = ("applied_dphi", "touchdown", "td_left", "new_stance", "newly_fallen")

    def __init__(self, applied_dphi, touchdown, td_left, new_stance, newly_fallen):
        self.applied_dphi = applied_dphi      # (B,)
        self.touchdown = touchdown            # (B,) bool
        self.td_left = td_left                # (B,) bool, valid where touchdown
        self.new_stance = new_stance          # (B,2) stance after any swap
        self.newly_fallen = newly_fallen      # (B,) bool


class VecSim:
    """Batch of independent walkers stepped in lockstep.

    Every per-walker physical parameter is an array so episodes in the same
    batch can run under different randomization draws.  Per-walker RNGs own
    sensor and slip noise so a walker's noise stream does not depend on its
    batch neighbours.
    """

    def __init__(self, n_envs: int, nominal: PhysicsParams = PhysicsParams()):
        if n_envs < 1:
            raise ConfigError("n_envs must be >= 1")
        B = self.n_envs = n_envs
        z2 = lambda: np.zeros((B, 2))
        self.com = z2()
        self.vel = z2()
        self.stance = z2()
        self.swing = z2()
        self.swing_vel = z2()
        self.active_target = z2()
        self.setpoint_hist = np.zeros((B, MAX_LATENCY_TICKS + 1, 2))
        self.stance_is_left = np.zeros(B, dtype=bool)
        self.phase = np.zeros(B)
        self.prev_phase = np.zeros(B)
        self.phase_since_td = np.zeros(B)
        self.swing_height = np.zeros(B)
        self.time = np.zeros(B)
        self.fallen = np.zeros(B, dtype=bool)
        self.step_count = np.zeros(B, dtype=np.int64)
        self.rngs: list = [np.random.default_rng(i) for i in range(B)]
        # parameter arrays
        self._alloc_params()
        for i in range(B):
            self.set_params(i, nominal)

    def _alloc_params(self):
        B = self.n_envs
        z = lambda: np.zeros(B)
        self.gravity = z(); self.z0 = z(); self.r_max = z()
        self.sw_vmax = z(); self.sw_amax = z(); self.kp = z(); self.kd = z()
        self.noise_std = z(); self.slip_std = z(); self.width = z()
        self.latency = np.zeros(B, dtype=np.int64)
        self._ch = z(); self._shw = z(); self._wsh = z()  # cosh/sinh factors at INNER_DT

    def set_params(self, i: int, p: PhysicsParams) -> None:
        p.validate()
        self.gravity[i] = p.gravity; self.z0[i] = p.z0; self.r_max[i] = p.r_max
        self.sw_vmax[i] = p.swing_max_speed; self.sw_amax[i] = p.swing_max_accel
        self.kp[i] = p.swing_kp; self.kd[i] = p.swing_kd
        self.noise_std[i] = p.sensor_noise_std; self.slip_std[i] = p.touchdown_slip_std
        self.latency[i] = p.command_latency_ticks; self.width[i] = p.nominal_step_width
        w = p.omega
        self._ch[i] = math.cosh(w * INNER_DT)
        self._shw[i] = math.sinh(w * INNER_DT) / w
        self._wsh[i] = math.sinh(w * INNER_DT) * w

    def params_view(self, i: int) -> PhysicsParams:
        return PhysicsParams(
            gravity=float(self.gravity[i]), z0=float(self.z0[i]), r_max=float(self.r_max[i]),
            swing_max_speed=float(self.sw_vmax[i]), swing_max_accel=float(self.sw_amax[i]),
            swing_kp=float(self.kp[i]), swing_kd=float(self.kd[i]),
            sensor_noise_std=float(self.noise_std[i]), touchdown_slip_std=float(self.slip_std[i]),
            command_latency_ticks=int(self.latency[i]), nominal_step_width=float(self.width[i]),
        )

    def set_rng(self, i: int, rng: np.random.Generator) -> None:
        self.rngs[i] = rng

    def reset_walker(self, i: int, *, com, vel, stance, swing, stance_side: str,
                     phase: float) -> None:
        """Place walker i in a fresh standing configuration."""
        stance_left = stance_side == LEFT
        if stance_left != (phase < 0.5):
            raise ConfigError("phase/stance mismatch: left stance needs phase in [0, 0.5)")
        self.com[i] = com; self.vel[i] = vel
        self.stance[i] = stance; self.swing[i] = swing
        self.swing_vel[i] = 0.0
        self.active_target[i] = swing
        self.setpoint_hist[i] = 0.0
        self.stance_is_left[i] = stance_left
        self.phase[i] = phase; self.prev_phase[i] = phase
        # treat the start like a fresh touchdown so the hold window applies
        self.phase_since_td[i] = 0.0
        self.swing_height[i] = 0.0
        self.time[i] = 0.0
        self.fallen[i] = False
        self.step_count[i] = 0

    # -- tick stages ------------------------------------------------------

    def _push_setpoints(self, offsets: np.ndarray) -> None:
        live = ~self.fallen
        self.setpoint_hist[:, 1:] = self.setpoint_hist[:, :-1]
        self.setpoint_hist[:, 0] = offsets
        delayed = self.setpoint_hist[np.arange(self.n_envs), self.latency]
        lim = self.r_max[:, None]
        delayed = np.clip(delayed, -lim, lim)
        allow = live & (self.phase_since_td >= SWING_HOLD_PHASE)
        target = self.com + delayed
        self.active_target = np.where(allow[:, None], target, self.active_target)

    def _advance_clock(self, dphi: np.ndarray):
        live = ~self.fallen
        applied = np.clip(dphi, DPHI_MIN, DPHI_MAX)
        applied = np.where(live, applied, 0.0)
        self.prev_phase = self.phase.copy()
        raw = self.phase + applied
        wrap = raw >= 1.0
        cross = (~wrap) & (self.prev_phase < 0.5) & (raw >= 0.5)
        self.phase = np.where(wrap, raw - 1.0, raw)
        self.phase_since_td = self.phase_since_td + applied
        return applied, wrap & live, cross & live

    def _execute_touchdown(self, i: int) -> np.ndarray:
        """Swap feet for walker i; returns the new stance position (slip applied)."""
        slip = self.rngs[i].normal(0.0, self.slip_std[i], size=2)
        old_stance = self.stance[i].copy()
        new_stance = self.swing[i] + slip
        self.stance[i] = new_stance
        self.swing[i] = old_stance
        self.swing_vel[i] = 0.0
        self.stance_is_left[i] = ~self.stance_is_left[i]
        self.phase_since_td[i] = 0.0
        self.active_target[i] = old_stance  # hold until the window passes
        self.swing_height[i] = 0.0
        self.step_count[i] += 1
        return new_stance

    def _inner_steps(self, n: int) -> None:
        live = (~self.fallen)[:, None]
        ch = self._ch[:, None]; shw = self._shw[:, None]; wsh = self._wsh[:, None]
        kp = self.kp[:, None]; kd = self.kd[:, None]
        amax = self.sw_amax; vmax = self.sw_vmax
        com = self.com; vel = self.vel; stance = self.stance
        swing = self.swing; swing_vel = self.swing_vel; tgt = self.active_target
        any_fallen = bool(self.fallen.any())
        for _ in range(n):
            d = com - stance
            new_com = stance + d * ch + vel * shw
            new_vel = d * wsh + vel * ch
            acc = kp * (tgt - swing) - kd * swing_vel
            an = np.sqrt((acc * acc).sum(axis=1))
            acc *= np.minimum(1.0, amax / np.maximum(an, 1e-12))[:, None]
            sv = swing_vel + acc * INNER_DT
            vn = np.sqrt((sv * sv).sum(axis=1))
            sv *= np.minimum(1.0, vmax / np.maximum(vn, 1e-12))[:, None]
            new_swing = swing + sv * INNER_DT
            if any_fallen:
                com = np.where(live, new_com, com)
                vel = np.where(live, new_vel, vel)
                swing_vel = np.where(live, sv, swing_vel)
                swing = np.where(live, new_swing, swing)
            else:
                com = new_com; vel = new_vel; swing_vel = sv; swing = new_swing
        self.com = com; self.vel = vel
        self.swing = swing; self.swing_vel = swing_vel

    def _update_fall_time_height(self) -> np.ndarray:
        live = ~self.fallen
        reach = np.sqrt(((self.com - self.stance) ** 2).sum(axis=1))
        speed = np.sqrt((self.vel ** 2).sum(axis=1))
        newly = live & ((reach > self.r_max) | (speed > FALL_SPEED_LIMIT))
        self.fallen |= newly
        self.time = np.where(live, self.time + CONTROL_DT, self.time)
        progress = np.clip(self.phase_since_td / 0.5, 0.0, 1.0)
        self.swing_height = np.where(
            ~self.fallen, SWING_CLEARANCE_M * np.sin(np.pi * progress), self.swing_height)
        return newly

    def control_tick(self, offsets: np.ndarray, dphi: np.ndarray) -> TickResult:
        """One 40 Hz update: set-points, clock, touchdowns, 50 inner steps."""
        if not (np.isfinite(self.com).all() and np.isfinite(self.vel).all()
                and np.isfinite(self.swing).all()):
            raise SimulationBlowup("non-finite walker state")
        self._push_setpoints(np.asarray(offsets, dtype=float))
        applied, wrap, cross = self._advance_clock(np.asarray(dphi, dtype=float))
        td = wrap | cross
        new_stance = self.stance.copy()
        for i in np.nonzero(td)[0]:
            new_stance[i] = self._execute_touchdown(i)
        self._inner_steps(INNER_STEPS_PER_TICK)
        newly = self._update_fall_time_height()
        # wrap means the LEFT foot just landed; crossing 0.5 means the RIGHT did
        return TickResult(applied, td, wrap, new_stance, newly)

    # -- observation helpers ----------------------------------------------

    def proprio(self, noisy: bool = True) -> np.ndarray:
        """(B, 7): com vel, com minus stance, swing minus pelvis, stance-side flag."""
        side = np.where(self.stance_is_left, 1.0, -1.0)
        out = np.concatenate(
            [self.vel, self.com - self.stance, self.swing - self.com, side[:, None]],
            axis=1)
        if noisy:
            for i in range(self.n_envs):
                out[i, :6] += self.rngs[i].normal(0.0, self.noise_std[i], size=6)
        return out

    def reach(self) -> np.ndarray:
        return np.sqrt(((self.com - self.stance) ** 2).sum(axis=1))

    def speed(self) -> np.ndarray:
        return np.sqrt((self.vel ** 2).sum(axis=1))

    # -- snapshots for branching and single-walker helpers ------------------

    _SNAP_ARRAYS = ("com", "vel", "stance", "swing", "swing_vel", "active_target",
                    "setpoint_hist", "stance_is_left", "phase", "prev_phase",
                    "phase_since_td", "swing_height", "time", "fallen", "step_count")

    def snapshot(self) -> dict:
        return {k: getattr(self, k).copy() for k in self._SNAP_ARRAYS}

    def restore(self, snap: dict) -> None:
        for k in self._SNAP_ARRAYS:
            getattr(self, k)[...] = snap[k]

    def state_view(self, i: int) -> WalkerState:
        return WalkerState(
            com_pos=self.com[i].copy(), com_vel=self.vel[i].copy(),
            stance_pos=self.stance[i].copy(), swing_pos=self.swing[i].copy(),
            swing_vel=self.swing_vel[i].copy(),
            stance_side=LEFT if self.stance_is_left[i] else RIGHT,
            clock=ClockState(phase=float(self.phase[i])),
            time_s=float(self.time[i]), fallen=bool(self.fallen[i]),
            swing_height=float(self.swing_height[i]), step_count=int(self.step_count[i]),
            prev_phase=float(self.prev_phase[i]),
            phase_since_td=float(self.phase_since_td[i]),
            swing_target=self.active_target[i].copy(),
            setpoint_hist=self.setpoint_hist[i].copy(),
        )

    def load_state(self, i: int, s: WalkerState) -> None:
        self.com[i] = s.com_pos; self.vel[i] = s.com_vel
        self.stance[i] = s.stance_pos; self.swing[i] = s.swing_pos
        self.swing_vel[i] = s.swing_vel
        self.stance_is_left[i] = s.stance_side == LEFT
        self.phase[i] = s.clock.phase; self.prev_phase[i] = s.prev_phase
        self.phase_since_td[i] = s.phase_since_td
        self.swing_height[i] = s.swing_height
        self.time[i] = s.time_s; self.fallen[i] = s.fallen
        self.step_count[i] = s.step_count
        self.active_target[i] = s.swing_pos if s.swing_target is None else s.swing_target
        self.setpoint_hist[i] = 0.0 if s.setpoint_hist is None else s.setpoint_hist


# -- single-walker helpers (batch-of-one through the same engine) -----------


def _sim_for(state: WalkerState, params: PhysicsParams,
             rng: Optional[np.random.Generator] = None) -> VecSim:
    sim = VecSim(1, params)
    sim.load_state(0, state)
    if rng is not None:
        sim.set_rng(0, rng)
    return sim


def advance_inner(state: WalkerState, params: PhysicsParams,
                  dt: float = INNER_DT) -> WalkerState:
    """One 2 kHz integration step; dt is fixed by the inner-rate contract."""
    if abs(dt - INNER_DT) > 1e-12:
        raise ConfigError(f"inner step must run at dt={INNER_DT}, got {dt}")
    if state.fallen:
        raise ConfigError("cannot advance a fallen walker")
    sim = _sim_for(state, params)
    sim._inner_steps(1)
    out = sim.state_view(0)
    out.time_s = state.time_s  # inner steps do not own the tick clock
    return out


def apply_action(state: WalkerState, action, params: PhysicsParams) -> WalkerState:
    """Apply one control-tick action: set-point through the latency queue
    (ignored inside the post-touchdown hold window), then the clamped clock
    increment.  Touchdown detection/execution is separate."""
    sim = _sim_for(state, params)
    offs = np.asarray(action.swing_offset, dtype=float).reshape(1, 2)
    sim._push_setpoints(offs)
    sim._advance_clock(np.asarray([action.dphi], dtype=float))
    return sim.state_view(0)


def check_touchdown(state: WalkerState) -> Optional[str]:
    """Which foot (if any) lands at the current phase edge.

    Wrap past 1.0 lands the LEFT foot; crossing 0.5 from below lands the
    RIGHT.  Clamped increments keep both from happening in one tick.
    """
    if state.clock.phase < state.prev_phase:
        return LEFT
    if state.prev_phase < 0.5 <= state.clock.phase:
        return RIGHT
    return None


def execute_touchdown(state: WalkerState, target_xy: np.ndarray,
                      params: PhysicsParams, rng: np.random.Generator):
    """Swap stance and swing feet, apply slip, and score placement error."""
    side = check_touchdown(state)
    if side is None:
        raise ConfigError("no touchdown pending at current phase")
    expect_left = state.stance_side == RIGHT
    if (side == LEFT) != expect_left:
        raise ConfigError("touchdown side does not alternate with stance side")
    sim = _sim_for(state, params, rng)
    new_stance = sim._execute_touchdown(0)
    out = sim.state_view(0)
    target = np.asarray(target_xy, dtype=float)
    err = float(np.linalg.norm(new_stance - target))
    rec = TouchdownRecord(step_index=out.step_count, time_s=out.time_s, side=side,
                          target_xy=target.copy(), touchdown_xy=new_stance.copy(),
                          error_m=err)
    return out, rec


def is_fallen(state: WalkerState, params: PhysicsParams) -> bool:
    """Fall predicate: latched, or reach/speed beyond the configured limits."""
    if state.fallen:
        return True
    reach = float(np.linalg.norm(state.com_pos - state.stance_pos))
    speed = float(np.linalg.norm(state.com_vel))
    return reach > params.r_max or speed > FALL_SPEED_LIMIT


# -- logging helpers ---------------------------------------------------------


def write_touchdown_csv(path, records: Sequence[TouchdownRecord]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(TOUCHDOWN_CSV_COLUMNS)
        for r in records:
            w.writerow([
                r.step_index, f"{r.time_s:.6f}", r.side,
                f"{r.target_xy[0]:.6f}", f"{r.target_xy[1]:.6f}",
                f"{r.touchdown_xy[0]:.6f}", f"{r.touchdown_xy[1]:.6f}",
                f"{r.error_m:.6f}",
            ])


def trajectory_line(tick: int, state: WalkerState, offsets, dphi,
                    event: Optional[str]) -> str:
    """One JSONL record of the per-tick trajectory log."""
    rec = {
        "v": TRAJECTORY_LOG_VERSION,
        "tick": tick,
        "t": round(state.time_s, 6),
        "com": [round(float(x), 6) for x in state.com_pos],
        "vel": [round(float(x), 6) for x in state.com_vel],
        "stance": [round(float(x), 6) for x in state.stance_pos],
        "swing": [round(float(x), 6) for x in state.swing_pos],
        "swing_h": round(state.swing_height, 6),
        "side": state.stance_side,
        "phase": round(state.clock.phase, 6),
        "offset": [round(float(x), 6) for x in np.asarray(offsets, dtype=float)],
        "dphi": round(float(dphi), 8),
        "event": event,
        "fallen": state.fallen,
    }
    return json.dumps(rec, separators=(",", ":"))
