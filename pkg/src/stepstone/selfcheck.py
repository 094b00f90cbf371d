"""Runtime verification shared by the selftest command and the acceptance
suite: analytic gradients against central finite differences, closed-form
pendulum motion, and the gait-cycle duration bounds."""

from __future__ import annotations

import math
from typing import Tuple

import numpy as np

from . import nn
from .policy import OBS_DIM, Policy, PolicyConfig
from .reachability import (STATE_DIM, ReachabilityModel,
                           reachability_loss_batch, sample_command_box)
from .sim import (DPHI_MAX, DPHI_MIN, LEFT, ClockState, PhysicsParams, VecSim,
                  WalkerState, advance_inner)

GRADIENT_TOL = 1e-4
DYNAMICS_TOL = 1e-6
CYCLE_BOUNDS = (0.65, 1.2)
CYCLE_SLACK = 0.025


def _stable_fd(loss_fn, params, *, keys=None, entries: int = 8,
               h: float = 1e-5, seed: int = 0) -> dict:
    """Central differences with ReLU-kink entries masked out.

    A central difference straddling an activation kink does not estimate the
    gradient at the point (zero-initialized biases even sit exactly on one).
    At each probed entry the left and right one-sided slopes are compared;
    where they disagree beyond curvature noise the entry is set to NaN so
    max_relative_error skips it, keeping the strict tolerance everywhere the
    finite difference is valid.
    """
    keys = list(params.keys()) if keys is None else list(keys)
    rng = np.random.default_rng([seed, 5])
    f0 = loss_fn()
    out = {}
    for k in keys:
        p = params[k]
        flat = p.reshape(-1)
        g = np.full(flat.size, np.nan)
        idx = np.arange(flat.size)
        if flat.size > entries:
            idx = rng.choice(flat.size, size=entries, replace=False)
        for j in idx:
            orig = flat[j]
            flat[j] = orig + h
            fp = loss_fn()
            flat[j] = orig - h
            fm = loss_fn()
            flat[j] = orig
            right = (fp - f0) / h
            left = (f0 - fm) / h
            if abs(right - left) <= 1e-3 * max(abs(right), abs(left), 1e-3):
                g[j] = (fp - fm) / (2.0 * h)
        out[k] = g.reshape(p.shape)
    return out


def policy_gradient_check(n_seeds: int = 20, T: int = 2, B: int = 2) -> float:
    """Worst relative error of 2-step BPTT gradients vs finite differences.

    Small hidden sizes keep the probe dense enough to be meaningful while the
    whole sweep stays under a minute; the backward pass under test is the
    same code path at every width.
    """
    worst = 0.0
    for seed in range(n_seeds):
        rng = np.random.default_rng([seed, 101])
        p = Policy(PolicyConfig(lstm_hidden=8, head_hidden=(8,),
                                value_hidden=(8,)), rng)
        obs = rng.standard_normal((T, B, OBS_DIM))
        resets = np.zeros((T, B), dtype=bool)
        resets[0] = True

        def loss_fn():
            means, values, _, _ = p.forward_sequence(obs, resets)
            return float((means ** 2).sum() + (values ** 2).sum())

        means, values, _, caches = p.forward_sequence(obs, resets)
        analytic = p.backward_sequence(caches, resets, 2.0 * means, 2.0 * values)
        keys = [k for k in p.params() if k != "log_std"]
        numeric = _stable_fd(loss_fn, p.params(), keys=keys, seed=seed)
        worst = max(worst, nn.max_relative_error(
            {k: analytic[k] for k in keys}, numeric))
    return worst


def reachability_gradient_check(n_seeds: int = 20, n_tuples: int = 3) -> float:
    """Worst relative error of the step-error model loss gradients."""
    worst = 0.0
    for seed in range(n_seeds):
        rng = np.random.default_rng([seed, 77])
        model = ReachabilityModel(rng, hidden=(8, 8))
        s = rng.standard_normal((n_tuples, STATE_DIM))
        s_next = rng.standard_normal((n_tuples, STATE_DIM))
        c = sample_command_box(rng, n_tuples)
        eps = np.abs(rng.normal(0.1, 0.05, n_tuples))
        _, grads, _ = reachability_loss_batch(model, s, s_next, c, eps)
        params = model.params()
        numeric = _stable_fd(
            lambda: reachability_loss_batch(model, s, s_next, c, eps,
                                            with_grads=False)[0],
            params, seed=seed)
        worst = max(worst, nn.max_relative_error(grads, numeric))
    return worst


def dynamics_closed_form_check(n_cases: int = 12, inner_steps: int = 200) -> float:
    """Max |simulated - closed form| CoM offset over single stance phases.

    The pendulum about a fixed stance point has the exact solution
    x(t) = x0 cosh(w t) + (v0 / w) sinh(w t) per axis, w = sqrt(g / z0).
    """
    p = PhysicsParams(touchdown_slip_std=0.0, sensor_noise_std=0.0)
    w = math.sqrt(p.gravity / p.z0)
    rng = np.random.default_rng(2024)
    t = inner_steps * (1.0 / 2000.0)
    worst = 0.0
    for _ in range(n_cases):
        x0 = rng.uniform(-0.15, 0.15, 2)
        v0 = rng.uniform(-0.4, 0.4, 2)
        st = WalkerState(com_pos=x0.copy(), com_vel=v0.copy(),
                         stance_pos=np.zeros(2),
                         swing_pos=np.array([0.0, -0.1]),
                         swing_vel=np.zeros(2), stance_side=LEFT,
                         clock=ClockState(phase=0.2))
        for _ in range(inner_steps):
            st = advance_inner(st, p)
        expect = x0 * math.cosh(w * t) + (v0 / w) * math.sinh(w * t)
        worst = max(worst, float(np.abs(st.com_pos - expect).max()))
    return worst


def clock_cycle_check(n_sequences: int = 10_000, ticks: int = 300,
                      seed: int = 0) -> Tuple[float, float]:
    """(min, max) full gait-cycle duration under random clock actions.

    Cycle = time between consecutive left-foot touchdowns.  Near-zero gravity
    keeps every walker upright so the clock runs the whole window; commanded
    increments deliberately overshoot the legal range to exercise clamping.
    """
    params = PhysicsParams(gravity=1e-4, touchdown_slip_std=0.0,
                           sensor_noise_std=0.0)
    vec = VecSim(n_sequences, params)
    for i in range(n_sequences):
        vec.reset_walker(i, com=(0, 0), vel=(0, 0), stance=(0, 0.1),
                         swing=(0, -0.1), stance_side=LEFT, phase=0.0)
    rng = np.random.default_rng(seed)
    last_left = np.full(n_sequences, np.nan)
    lo, hi = np.inf, -np.inf
    offsets = np.zeros((n_sequences, 2))
    for _ in range(ticks):
        dphi = rng.uniform(DPHI_MIN - 0.05, DPHI_MAX + 0.05, n_sequences)
        res = vec.control_tick(offsets, dphi)
        left = res.touchdown & res.td_left
        if left.any():
            gaps = vec.time[left] - last_left[left]
            valid = gaps[~np.isnan(gaps)]
            if valid.size:
                lo = min(lo, float(valid.min()))
                hi = max(hi, float(valid.max()))
            last_left[left] = vec.time[left]
    return lo, hi


def run_selftest(n_seeds: int = 20, n_clock: int = 2000) -> Tuple[bool, str]:
    """All checks at module scale; returns (passed, printable report)."""
    lines = []
    ok = True

    g_pol = policy_gradient_check(n_seeds)
    ok &= g_pol <= GRADIENT_TOL
    lines.append(f"gradient max-rel-err policy (2-step BPTT): {g_pol:.3e} "
                 f"(tol {GRADIENT_TOL:.0e})")

    g_rch = reachability_gradient_check(n_seeds)
    ok &= g_rch <= GRADIENT_TOL
    lines.append(f"gradient max-rel-err reachability: {g_rch:.3e} "
                 f"(tol {GRADIENT_TOL:.0e})")

    dyn = dynamics_closed_form_check()
    ok &= dyn <= DYNAMICS_TOL
    lines.append(f"dynamics closed-form max deviation: {dyn:.3e} m "
                 f"(tol {DYNAMICS_TOL:.0e})")

    lo, hi = clock_cycle_check(n_clock)
    clock_ok = (lo >= CYCLE_BOUNDS[0] - CYCLE_SLACK - 1e-9
                and hi <= CYCLE_BOUNDS[1] + CYCLE_SLACK + 1e-9)
    ok &= clock_ok
    lines.append(f"gait cycle durations: [{lo:.3f}, {hi:.3f}] s "
                 f"(bounds [{CYCLE_BOUNDS[0]}, {CYCLE_BOUNDS[1]}] "
                 f"+/- {CYCLE_SLACK})")

    lines.append("selftest: " + ("PASS" if ok else "FAIL"))
    return ok, "\n".join(lines)
