"""Stepping-pattern evaluation and gap-crossing tasks.

A pattern pins an exact world-anchored footstep chain the policy must follow
one command at a time; metrics are per-step placement errors and crossing
speed.  Gap tasks drop stepping stones into a gap and score whether a stone
selection strategy plus the walking policy gets across.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats as scipy_stats

from .reachability import (COMMAND_BOX_X, ERROR_THRESHOLD, in_command_box,
                           state_snapshot)
from .rollout import (CommandProvider, next_touchdown_side, quiet,
                      run_episodes, standing_reset)
from .sim import ConfigError, PhysicsParams

PATTERN_HEADER = "patterns v1"
UNIFORM_GROUP = ("A", "F", "G", "H")
IRREGULAR_GROUP = ("B", "C", "D", "E")
STRATEGIES = ("Random", "RandomOnTDSide", "Closest", "ClosestOnTDSide",
              "ReachabilityModel")

LEFT_SIGN = {"L": 1, "R": -1}


# -- patterns ---------------------------------------------------------------------


@dataclass(frozen=True)
class StepSpec:
    side: int          # +1 left foot, -1 right foot
    length: float      # centerline advance from the previous step, m
    direction: float   # step heading in degrees off the pattern axis


@dataclass
class Pattern:
    id: str
    steps: List[StepSpec]
    description: str = ""

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    @property
    def group(self) -> str:
        if self.id in UNIFORM_GROUP:
            return "uniform"
        if self.id in IRREGULAR_GROUP:
            return "irregular"
        return "custom"


def parse_patterns(text: str) -> List[Pattern]:
    """Parse the versioned pattern format: header line, then blocks of
    'pattern <id> <description>' followed by one 'L|R length_m direction_deg'
    line per step."""
    patterns: List[Pattern] = []
    cur: Optional[Pattern] = None
    saw_header = False
    for ln, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s or s.startswith("#"):
            continue
        if not saw_header:
            if s != PATTERN_HEADER:
                raise ConfigError(f"line {ln}: expected header {PATTERN_HEADER!r}")
            saw_header = True
            continue
        if s.startswith("pattern "):
            parts = s.split(maxsplit=2)
            pid = parts[1]
            if any(p.id == pid for p in patterns):
                raise ConfigError(f"line {ln}: duplicate pattern id {pid!r}")
            cur = Pattern(id=pid, steps=[],
                          description=parts[2] if len(parts) > 2 else "")
            patterns.append(cur)
            continue
        if cur is None:
            raise ConfigError(f"line {ln}: step line before any pattern header")
        toks = s.split()
        k = len(cur.steps) + 1
        where = f"pattern {cur.id} step {k}"
        if len(toks) != 3 or toks[0] not in LEFT_SIGN:
            raise ConfigError(f"{where}: want 'L|R length_m direction_deg'")
        try:
            length, direction = float(toks[1]), float(toks[2])
        except ValueError:
            raise ConfigError(f"{where}: non-numeric length or direction")
        if not 0.0 <= length <= 0.5:
            raise ConfigError(f"{where}: length {length} outside [0, 0.5]")
        if abs(direction) > 45.0:
            raise ConfigError(f"{where}: |direction| exceeds 45 degrees")
        side = LEFT_SIGN[toks[0]]
        if cur.steps and cur.steps[-1].side == side:
            raise ConfigError(f"{where}: sides must strictly alternate")
        cur.steps.append(StepSpec(side=side, length=length, direction=direction))
    if not saw_header:
        raise ConfigError("empty pattern file")
    for p in patterns:
        if not p.steps:
            raise ConfigError(f"pattern {p.id} has no steps")
    return patterns


def load_patterns(path) -> List[Pattern]:
    return parse_patterns(Path(path).read_text())


def default_patterns() -> List[Pattern]:
    text = resources.files(__package__).joinpath(
        "data/patterns_default.txt").read_text()
    return parse_patterns(text)


def pattern_world_targets(pattern: Pattern, origin, width: float):
    """World foot targets for a pattern anchored at origin.

    The centerline marches by each step's (length, direction) vector; the foot
    target straddles it at side * width / 2.  Returns (targets (N, 2),
    sides (N,))."""
    c = np.asarray(origin, dtype=float).copy()
    targets = np.empty((len(pattern.steps), 2))
    sides = np.empty(len(pattern.steps), dtype=int)
    for k, s in enumerate(pattern.steps):
        th = math.radians(s.direction)
        c = c + s.length * np.array([math.cos(th), math.sin(th)])
        targets[k] = c + np.array([0.0, s.side * width / 2.0])
        sides[k] = s.side
    return targets, sides


class PatternProvider(CommandProvider):
    """Steps in place through a warmup, waits for the upcoming touchdown side
    to match the pattern's first step, then issues the pattern chain anchored
    at the pelvis position of that alignment touchdown."""

    has_targets = True

    def __init__(self, pattern: Pattern, width: float = 0.2,
                 warmup_touchdowns: int = 4, randomize_init: bool = True):
        self.pattern = pattern
        self.width = width
        self.warmup = warmup_touchdowns
        self.randomize_init = randomize_init
        self._state: Dict[int, dict] = {}

    def _hold(self, i, sim) -> np.ndarray:
        side = next_touchdown_side(sim, i)
        return np.array([0.0, side * self.width / 2.0])

    def reset(self, i, sim, rng):
        if not self.randomize_init:
            # repeatable trial: fixed phase, no state jitter
            standing_reset(sim, i, np.random.default_rng(0), phase=0.25,
                           com_jitter=0.0, vel_jitter=0.0)
        self._state[i] = {"mode": "warmup", "left": self.warmup,
                          "targets": None, "k": 0, "anchor_time": None,
                          "anchor_com": None, "final_time": None,
                          "final_com": None}
        return self._hold(i, sim)

    def scored(self, i) -> bool:
        # run_episodes asks before advancing: True iff the touchdown that just
        # landed was aiming at a pattern target
        return self._state[i]["mode"] == "pattern"

    def on_touchdown(self, i, sim, rec):
        st = self._state[i]
        if st["mode"] == "pattern":
            st["k"] += 1
            if st["k"] >= len(st["targets"]):
                st["mode"] = "done"
                st["final_time"] = float(sim.time[i])
                st["final_com"] = sim.com[i].copy()
                return None
            return st["targets"][st["k"]] - sim.com[i]
        st["left"] -= 1
        if st["left"] <= 0 and next_touchdown_side(sim, i) == self.pattern.steps[0].side:
            targets, _ = pattern_world_targets(self.pattern, sim.com[i], self.width)
            st.update(mode="pattern", k=0, targets=targets,
                      anchor_time=float(sim.time[i]),
                      anchor_com=sim.com[i].copy())
            return targets[0] - sim.com[i]
        return self._hold(i, sim)


@dataclass
class PatternResult:
    pattern_id: str
    n_steps: int
    n_trials: int
    n_success: int
    per_trial_errors: List[List[float]]   # successful trials only
    avg_error: float
    std_error: float
    max_error: float
    avg_speed: float

    @property
    def success_rate(self) -> float:
        return self.n_success / self.n_trials if self.n_trials else 0.0


def run_pattern(policy, pattern: Pattern, n_trials: int, *, seed: int,
                nominal: Optional[PhysicsParams] = None,
                warmup_touchdowns: int = 4, randomize_init: bool = True,
                max_ticks: int = 600, controller=None) -> PatternResult:
    """Evaluate a pattern over n_trials independent episodes.

    Fallen or timed-out trials count as failures: their errors are excluded
    from the error statistics but they stay in the success-rate denominator."""
    nominal = nominal if nominal is not None else quiet(PhysicsParams())
    prov = PatternProvider(pattern, width=nominal.nominal_step_width,
                           warmup_touchdowns=warmup_touchdowns,
                           randomize_init=randomize_init)
    results = run_episodes(policy, prov, n_trials, seed=seed, nominal=nominal,
                           max_ticks=max_ticks, controller=controller)
    per_trial: List[List[float]] = []
    speeds: List[float] = []
    n_success = 0
    for i, r in enumerate(results):
        if not (r.completed and not r.fell
                and len(r.scored_errors) == pattern.n_steps):
            continue
        n_success += 1
        per_trial.append(list(r.scored_errors))
        st = prov._state[i]
        span = st["final_time"] - st["anchor_time"]
        disp = float(np.linalg.norm(st["final_com"] - st["anchor_com"]))
        speeds.append(disp / span if span > 0 else 0.0)
    pooled = np.array([e for trial in per_trial for e in trial])
    avg = float(pooled.mean()) if pooled.size else float("nan")
    # summing can round the mean one ulp past the max when all errors are
    # equal; clamp so max_error >= avg_error holds exactly
    mx = max(float(pooled.max()), avg) if pooled.size else float("nan")
    return PatternResult(
        pattern_id=pattern.id, n_steps=pattern.n_steps, n_trials=n_trials,
        n_success=n_success, per_trial_errors=per_trial,
        avg_error=avg,
        std_error=float(pooled.std()) if pooled.size else float("nan"),
        max_error=mx,
        avg_speed=float(np.mean(speeds)) if speeds else float("nan"))


# -- stones and selection -----------------------------------------------------------


@dataclass(frozen=True)
class Stone:
    center: np.ndarray   # world xy
    size: float = 0.10   # square edge, m

    def contains(self, p) -> bool:
        # point-foot landing: strictly inside the square
        d = np.abs(np.asarray(p, dtype=float) - self.center)
        return bool((d < self.size / 2.0).all())


@dataclass
class SelectionContext:
    """Walker-side inputs to stone selection at a commitment touchdown."""
    nominal_td: np.ndarray        # hold-command landing point, world xy
    pelvis: np.ndarray            # command offsets are relative to this
    centerline_y: float = 0.0     # approach line; stone side = sign(y - this)
    state: Optional[np.ndarray] = None   # encoder input for the model strategy
    rng: Optional[np.random.Generator] = None


def select_stone(strategy: str, stones: Sequence[Stone],
                 ctx: SelectionContext, td_side: int, model=None) -> int:
    """Pick a stone index for the upcoming touchdown. Ties go to the lowest
    index; side-restricted strategies fall back to the full list when no stone
    sits on the touchdown side."""
    if not stones:
        raise ConfigError("select_stone needs at least one stone")
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown selection strategy {strategy!r}")
    centers = np.array([s.center for s in stones], dtype=float)
    sides = np.where(centers[:, 1] - ctx.centerline_y > 0, 1, -1)
    on_side = np.nonzero(sides == td_side)[0]
    pool = on_side if on_side.size else np.arange(len(stones))

    if strategy == "Random":
        if ctx.rng is None:
            raise ConfigError("Random strategy needs ctx.rng")
        return int(ctx.rng.integers(len(stones)))
    if strategy == "RandomOnTDSide":
        if ctx.rng is None:
            raise ConfigError("RandomOnTDSide strategy needs ctx.rng")
        return int(pool[ctx.rng.integers(pool.size)])
    if strategy == "Closest":
        d = np.linalg.norm(centers - ctx.nominal_td, axis=1)
        return int(np.argmin(d))
    if strategy == "ClosestOnTDSide":
        d = np.linalg.norm(centers - ctx.nominal_td, axis=1)
        return int(pool[np.argmin(d[pool])])
    # ReachabilityModel: argmin predicted error over in-box stone commands;
    # outside the model's command box the prediction is meaningless, so those
    # stones score +inf and the fallback is the closest offset
    if model is None or ctx.state is None:
        raise ConfigError("ReachabilityModel strategy needs a model and state")
    c = centers - ctx.pelvis
    z = model.encode(ctx.state)[0]
    eps_hat, _ = model.predict_latent_batch(
        np.repeat(z[None, :], len(stones), axis=0), c)
    eps_hat = np.where(in_command_box(c), eps_hat, np.inf)
    if not np.isfinite(eps_hat).any():
        return int(np.argmin(np.linalg.norm(c, axis=1)))
    return int(np.argmin(eps_hat))


# -- gap tasks ---------------------------------------------------------------------


@dataclass
class GapTaskConfig:
    gap_width: float = 0.60
    n_stones: int = 10
    stone_size: float = 0.10
    stone_x_range: Tuple[float, float] = (0.18, 0.50)   # into the gap from the near edge
    stone_y_range: Tuple[float, float] = (-0.30, 0.30)
    min_separation: float = 0.08       # between stone centers
    approach_distance: Tuple[float, float] = (0.9, 1.3)   # start this far before the gap
    approach_step: Tuple[float, float] = (0.25, 0.40)     # per-trial stride
    edge_margin: float = 0.12          # approach chain stops this short of the edge
    commit: str = "distance"           # distance | immediate | model
    commit_distance: float = 0.5       # pelvis-to-edge trigger for 'distance'
    model_threshold: float = ERROR_THRESHOLD   # predicted-error trigger for 'model'
    exit_target_past_edge: float = 0.20  # crossing command aims this far beyond the gap
    require_crossing: bool = True      # success needs the far edge cleared
    max_ticks: int = 900

    def validate(self) -> None:
        if self.commit not in ("distance", "immediate", "model"):
            raise ConfigError(f"unknown commit rule {self.commit!r}")
        if self.commit != "distance" and self.n_stones != 1:
            raise ConfigError("immediate/model commitment is a single-stone rule")
        if self.n_stones < 1:
            raise ConfigError("need at least one stone")
        half = self.stone_size / 2.0
        if self.stone_x_range[0] - half < 0 or self.stone_x_range[1] + half > self.gap_width:
            raise ConfigError("stones must lie entirely within the gap span")
        for name in ("stone_x_range", "stone_y_range", "approach_distance",
                     "approach_step"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} has lo > hi")
        if self.stone_size <= 0 or self.gap_width <= 0:
            raise ConfigError("sizes must be positive")

    @classmethod
    def single_stone(cls, commit: str = "model", **kw) -> "GapTaskConfig":
        kw.setdefault("stone_x_range", (0.12, 0.32))
        kw.setdefault("stone_y_range", (-0.12, 0.12))
        return cls(gap_width=0.40, n_stones=1, commit=commit, **kw)

    @classmethod
    def ten_stone(cls, **kw) -> "GapTaskConfig":
        return cls(**kw)


def place_stones(cfg: GapTaskConfig, rng: np.random.Generator) -> List[Stone]:
    stones: List[Stone] = []
    tries = 0
    while len(stones) < cfg.n_stones:
        tries += 1
        if tries > 1000:
            raise ConfigError("stone placement failed: ranges too tight for "
                              f"{cfg.n_stones} stones at separation "
                              f"{cfg.min_separation}")
        c = np.array([rng.uniform(*cfg.stone_x_range),
                      rng.uniform(*cfg.stone_y_range)])
        if all(np.linalg.norm(c - s.center) >= cfg.min_separation for s in stones):
            stones.append(Stone(center=c, size=cfg.stone_size))
    return stones


@dataclass
class GapTrial:
    stones: List[Stone]
    chosen: Optional[int] = None
    committed_xy: Optional[np.ndarray] = None
    crossing_xy: Optional[np.ndarray] = None
    outcome: Optional[str] = None   # crossed | gap | missed_stone | short_exit | fall | timeout
    success: bool = False


class GapProvider(CommandProvider):
    """Per-trial state machine: approach the gap under forward commands,
    commit to a stone per the configured rule, land on it, then step past the
    far edge.  Any touchdown in the open gap ends the trial."""

    has_targets = True

    def __init__(self, cfg: GapTaskConfig, strategy: str, width: float = 0.2,
                 model=None):
        cfg.validate()
        if strategy not in STRATEGIES:
            raise ConfigError(f"unknown selection strategy {strategy!r}")
        if (strategy == "ReachabilityModel" or cfg.commit == "model") and model is None:
            raise ConfigError("this strategy/commit rule needs a reachability model")
        self.cfg = cfg
        self.strategy = strategy
        self.width = width
        self.model = model
        self.trials: Dict[int, GapTrial] = {}
        self._state: Dict[int, dict] = {}

    def scored(self, i) -> bool:
        return False   # trial outcomes, not per-step error stats

    def reset(self, i, sim, rng):
        cfg = self.cfg
        start = -float(rng.uniform(*cfg.approach_distance))
        step = float(rng.uniform(*cfg.approach_step))
        stones = place_stones(cfg, rng)
        standing_reset(sim, i, rng, origin=(start, 0.0))
        self._state[i] = {"mode": "approach", "step": step, "stones": stones,
                          "rng": rng, "chosen": None}
        self.trials[i] = GapTrial(stones=stones)
        return self._approach_command(i, sim)

    def _approach_command(self, i, sim) -> np.ndarray:
        st = self._state[i]
        side = next_touchdown_side(sim, i)
        x = min(sim.com[i][0] + st["step"], -self.cfg.edge_margin)
        return np.array([x - sim.com[i][0],
                         side * self.width / 2.0 - sim.com[i][1]])

    def _model_state(self, i, sim) -> np.ndarray:
        applied_dphi = float((sim.phase[i] - sim.prev_phase[i]) % 1.0)
        return state_snapshot(sim, i, applied_dphi)

    def _commit_ready(self, i, sim) -> bool:
        cfg, st = self.cfg, self._state[i]
        if cfg.commit == "distance":
            return bool(sim.com[i][0] >= -cfg.commit_distance)
        c = st["stones"][0].center - sim.com[i]
        if not bool(in_command_box(c)[0]):
            return False
        if cfg.commit == "immediate":
            return True
        eps_hat, _ = self.model.predict(self._model_state(i, sim), c)
        return eps_hat < cfg.model_threshold

    def _commit(self, i, sim) -> np.ndarray:
        st = self._state[i]
        td_side = next_touchdown_side(sim, i)
        ctx = SelectionContext(
            nominal_td=sim.com[i] + np.array([0.0, td_side * self.width / 2.0]),
            pelvis=sim.com[i].copy(), centerline_y=0.0,
            state=self._model_state(i, sim) if self.model is not None else None,
            rng=st["rng"])
        k = select_stone(self.strategy, st["stones"], ctx, td_side,
                         model=self.model)
        st["chosen"] = k
        st["mode"] = "committed"
        self.trials[i].chosen = k
        return st["stones"][k].center - sim.com[i]

    def _finish(self, i, outcome: str):
        t = self.trials[i]
        t.outcome = outcome
        t.success = outcome == "crossed"
        return None

    def on_touchdown(self, i, sim, rec):
        st, cfg = self._state[i], self.cfg
        td = rec.touchdown_xy
        if st["mode"] == "committed":
            self.trials[i].committed_xy = np.array(td, dtype=float)
        elif st["mode"] == "crossing":
            self.trials[i].crossing_xy = np.array(td, dtype=float)
        in_gap = 0.0 < td[0] < cfg.gap_width
        on_stone = any(s.contains(td) for s in st["stones"])
        if in_gap and not on_stone:
            return self._finish(i, "gap")
        if st["mode"] == "approach":
            if self._commit_ready(i, sim):
                return self._commit(i, sim)
            return self._approach_command(i, sim)
        if st["mode"] == "committed":
            if not st["stones"][st["chosen"]].contains(td):
                return self._finish(i, "missed_stone")
            if not cfg.require_crossing:
                return self._finish(i, "crossed")
            st["mode"] = "crossing"
            side = next_touchdown_side(sim, i)
            x_step = min(COMMAND_BOX_X[1],
                         cfg.gap_width + cfg.exit_target_past_edge - sim.com[i][0])
            return np.array([x_step, side * self.width / 2.0])
        # crossing touchdown
        if td[0] > cfg.gap_width and not sim.fallen[i]:
            return self._finish(i, "crossed")
        return self._finish(i, "short_exit")


@dataclass
class GapResult:
    strategy: str
    commit: str
    gap_width: float
    n_stones: int
    n_trials: int
    successes: int
    trials: List[GapTrial]
    outcomes: Dict[str, int] = field(default_factory=dict)

    @property
    def success_rate(self) -> float:
        return self.successes / self.n_trials if self.n_trials else 0.0


def run_gap_task(policy, cfg: GapTaskConfig, strategy: str, n_trials: int, *,
                 seed: int, model=None,
                 nominal: Optional[PhysicsParams] = None,
                 controller=None) -> GapResult:
    """Run n_trials independent gap crossings and aggregate the success rate.

    Per-trial seeds derive from the master seed, so the aggregate is invariant
    to trial order and byte-identical across reruns."""
    nominal = nominal if nominal is not None else quiet(PhysicsParams())
    prov = GapProvider(cfg, strategy, width=nominal.nominal_step_width,
                       model=model)
    res = run_episodes(policy, prov, n_trials, seed=seed, nominal=nominal,
                       max_ticks=cfg.max_ticks, controller=controller)
    trials: List[GapTrial] = []
    outcomes: Dict[str, int] = {}
    successes = 0
    for i, r in enumerate(res):
        t = prov.trials[i]
        if t.outcome is None:
            t.outcome = "fall" if r.fell else "timeout"
        successes += int(t.success)
        outcomes[t.outcome] = outcomes.get(t.outcome, 0) + 1
        trials.append(t)
    return GapResult(strategy=strategy, commit=cfg.commit,
                     gap_width=cfg.gap_width, n_stones=cfg.n_stones,
                     n_trials=n_trials, successes=successes, trials=trials,
                     outcomes=outcomes)


# -- statistics ---------------------------------------------------------------------


def two_proportion_z(s1: int, n1: int, s2: int, n2: int):
    """One-sided pooled z-test that rate 1 exceeds rate 2: (z, p_value)."""
    if min(n1, n2) <= 0:
        raise ConfigError("two_proportion_z needs nonempty samples")
    p1, p2 = s1 / n1, s2 / n2
    pool = (s1 + s2) / (n1 + n2)
    se = math.sqrt(pool * (1.0 - pool) * (1.0 / n1 + 1.0 / n2))
    if se == 0.0:
        return 0.0, 0.5   # both all-success or both all-fail: no evidence
    z = (p1 - p2) / se
    return z, float(scipy_stats.norm.sf(z))


# -- reports ----------------------------------------------------------------------


PATTERN_CSV_COLUMNS = ("pattern", "group", "n_steps", "n_trials", "n_success",
                       "avg_error", "std_error", "max_error", "avg_speed")
GAP_CSV_COLUMNS = ("strategy", "commit", "gap_width", "n_stones", "n_trials",
                   "successes", "success_rate")
VARIANT_CSV_COLUMNS = ("variant", "eval_mae", "n_tuples")


def _fmt(x) -> str:
    return f"{x:.6f}" if isinstance(x, float) else str(x)


def pattern_rows(results: Sequence[PatternResult]) -> List[dict]:
    return [{"pattern": r.pattern_id,
             "group": ("uniform" if r.pattern_id in UNIFORM_GROUP else
                       "irregular" if r.pattern_id in IRREGULAR_GROUP else "custom"),
             "n_steps": r.n_steps, "n_trials": r.n_trials,
             "n_success": r.n_success, "avg_error": r.avg_error,
             "std_error": r.std_error, "max_error": r.max_error,
             "avg_speed": r.avg_speed} for r in results]


def gap_rows(results: Sequence[GapResult]) -> List[dict]:
    return [{"strategy": r.strategy, "commit": r.commit,
             "gap_width": r.gap_width, "n_stones": r.n_stones,
             "n_trials": r.n_trials, "successes": r.successes,
             "success_rate": r.success_rate} for r in results]


def _write_csv(path: Path, columns, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _text_table(columns, rows: Sequence[dict]) -> str:
    cells = [[_fmt(r[c]) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[j]) for row in cells)) if cells else len(c)
              for j, c in enumerate(columns)]
    out = ["  ".join(c.ljust(w) for c, w in zip(columns, widths)).rstrip()]
    for row in cells:
        out.append("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip())
    return "\n".join(out)


def score_report(pattern_results: Sequence[PatternResult] = (),
                 gap_results: Sequence[GapResult] = (),
                 variant_rows: Sequence[dict] = (),
                 out_dir=None) -> str:
    """Human-readable summary of every supplied section; with out_dir, also
    writes patterns.csv / gap.csv / variants.csv."""
    sections = []
    prows = pattern_rows(pattern_results)
    grows = gap_rows(gap_results)
    vrows = [dict(r) for r in variant_rows]
    sections.append("== pattern suite ==\n" + _text_table(PATTERN_CSV_COLUMNS, prows))
    sections.append("== gap crossing ==\n" + _text_table(GAP_CSV_COLUMNS, grows))
    sections.append("== step-error model variants ==\n"
                    + _text_table(VARIANT_CSV_COLUMNS, vrows))
    text = "\n\n".join(sections) + "\n"
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_csv(out_dir / "patterns.csv", PATTERN_CSV_COLUMNS, prows)
        _write_csv(out_dir / "gap.csv", GAP_CSV_COLUMNS, grows)
        _write_csv(out_dir / "variants.csv", VARIANT_CSV_COLUMNS, vrows)
        (out_dir / "report.txt").write_text(text)
    return text
