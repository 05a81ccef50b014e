"""Benchmark runner, trajectory logs, metrics and SVG plots.

A benchmark cell is one (planner, scenario) pair run over a list of seeds.
Every run goes through the full pipeline: Dijkstra plan at t=0, waypoints,
then the local planner each control step.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .costmap import ObservationConfig, rasterize
from .env import COLLISION, ERROR, SUCCESS, TIMEOUT, EnvConfig, EpisodeOutcome, TrajectoryRow, run_episode
from .gridworld import RobotState, ScenarioSpec, check_collision
from .nav_classic import DwaConfig, SpConfig, dwa_plan, sp_plan
from .scenarios import SUITE

log = logging.getLogger(__name__)

PLANNERS = ("sac", "dwa", "sp")
UNAVAILABLE = "unavailable"
TRAJ_FIELDS = [f.name for f in fields(TrajectoryRow)]


# --------------------------------------------------------------------------
# trajectory logs


@dataclass
class TrajectoryLog:
    rows: list

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def xy(self) -> np.ndarray:
        return np.array([[r.x, r.y] for r in self.rows], dtype=float).reshape(-1, 2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRAJ_FIELDS)
        for r in self.rows:
            w.writerow([repr(float(getattr(r, k))) for k in TRAJ_FIELDS])
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "TrajectoryLog":
        reader = csv.DictReader(io.StringIO(text))
        missing = set(TRAJ_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"trajectory CSV lacks columns {sorted(missing)}")
        return cls([TrajectoryRow(**{k: float(row[k]) for k in TRAJ_FIELDS}) for row in reader])

    @classmethod
    def load(cls, path) -> "TrajectoryLog":
        return cls.from_csv(Path(path).read_text())


def mover_positions_along(log: TrajectoryLog, spec: ScenarioSpec) -> list:
    """Per-row mover positions, replaying the halt rule against the logged robot poses."""
    halts = [None] * len(spec.movers)
    out = []
    for r in log.rows:
        pos = []
        for i, m in enumerate(spec.movers):
            p = m.position(r.t if halts[i] is None else halts[i])
            if halts[i] is None and m.halt_distance_m is not None \
                    and math.hypot(p[0] - r.x, p[1] - r.y) <= m.halt_distance_m:
                halts[i] = r.t
            pos.append(p)
        out.append(pos)
    return out


def reconstruct_outcome(log: TrajectoryLog, spec: ScenarioSpec, cfg: EnvConfig = EnvConfig()) -> str:
    """Outcome implied by the terminal row alone (plus the scenario geometry)."""
    if len(log) == 0:
        return ERROR
    last = log.rows[-1]
    movers = mover_positions_along(log, spec)[-1]
    world = rasterize(spec, last.t, movers)
    if check_collision(RobotState(last.x, last.y, last.yaw), world, cfg.footprint_m):
        return COLLISION
    if math.hypot(spec.goal[0] - last.x, spec.goal[1] - last.y) <= cfg.reward.goal_tolerance_m:
        return SUCCESS
    steps = int(round(last.t / cfg.dt_s))
    return TIMEOUT if steps >= spec.step_limit else ERROR


# --------------------------------------------------------------------------
# per-episode metrics


def travel_metrics(log: TrajectoryLog) -> dict:
    """Time (s), path length (m) and mean speed (m/s) of one run."""
    xy = log.xy
    dist = float(np.linalg.norm(np.diff(xy, axis=0), axis=1).sum()) if len(xy) > 1 else 0.0
    t = log.rows[-1].t - log.rows[0].t if len(log) else 0.0
    return {"time_s": t, "distance_m": dist, "speed_mps": dist / t if t > 0 else 0.0}


# --------------------------------------------------------------------------
# planners


def dwa_policy(cfg: Optional[DwaConfig] = None) -> Callable:
    cfg = cfg or DwaConfig()

    def policy(ctx):
        return dwa_plan(ctx.robot, ctx.velocity, ctx.waypoint, ctx.world, cfg)
    return policy


def sp_policy(cfg: Optional[SpConfig] = None) -> Callable:
    cfg = cfg or SpConfig()

    def policy(ctx):
        return sp_plan(ctx.robot, ctx.waypoint, ctx.costmap, cfg)
    return policy


def load_sac_policy(checkpoint) -> tuple:
    """(policy, observation config) from a checkpoint stem; raises FileNotFoundError."""
    from .autodiff import load_checkpoint
    from .sac import SacAgent, SacPolicy

    stem = Path(checkpoint)
    if stem.suffix in (".json", ".bin"):
        stem = stem.with_suffix("")
    if not stem.with_suffix(".json").exists():
        raise FileNotFoundError(f"no checkpoint at {stem}")
    agent = SacAgent.load(stem)
    _, meta = load_checkpoint(stem)
    obs = ObservationConfig(**meta["obs"]) if "obs" in meta else None
    return SacPolicy(agent), obs


# --------------------------------------------------------------------------
# benchmark


@dataclass
class CellReport:
    planner: str
    scenario: str
    seeds: list
    status: str = "ok"
    runs: int = 0
    success_rate: Optional[float] = None
    collision_rate: Optional[float] = None
    timeout_rate: Optional[float] = None
    error_rate: Optional[float] = None
    mean_travel_time_s: Optional[float] = None
    mean_travel_distance_m: Optional[float] = None
    mean_speed_mps: Optional[float] = None
    outcomes: list = field(default_factory=list)

    @classmethod
    def from_runs(cls, planner: str, scenario: str, seeds: list, outcomes: list, logs: list) -> "CellReport":
        n = len(outcomes)
        rep = cls(planner, scenario, list(seeds), runs=n, outcomes=list(outcomes))
        if n:
            rep.success_rate = outcomes.count(SUCCESS) / n
            rep.collision_rate = outcomes.count(COLLISION) / n
            rep.timeout_rate = outcomes.count(TIMEOUT) / n
            rep.error_rate = outcomes.count(ERROR) / n
        # travel metrics: per non-collision episode, then averaged
        ok = [travel_metrics(lg) for o, lg in zip(outcomes, logs) if o in (SUCCESS, TIMEOUT) and len(lg)]
        if ok:
            rep.mean_travel_time_s = float(np.mean([m["time_s"] for m in ok]))
            rep.mean_travel_distance_m = float(np.mean([m["distance_m"] for m in ok]))
            rep.mean_speed_mps = float(np.mean([m["speed_mps"] for m in ok]))
        return rep


CSV_FIELDS = ["planner", "scenario", "status", "runs", "success_rate", "collision_rate", "timeout_rate",
              "error_rate", "mean_travel_time_s", "mean_travel_distance_m", "mean_speed_mps", "seeds"]


@dataclass
class BenchmarkReport:
    cells: list
    seeds: list

    def cell(self, planner: str, scenario: str) -> CellReport:
        for c in self.cells:
            if c.planner == planner and c.scenario == scenario:
                return c
        raise KeyError((planner, scenario))

    def to_dict(self) -> dict:
        return {"seeds": list(self.seeds), "cells": [asdict(c) for c in self.cells]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for c in self.cells:
            d = asdict(c)
            d["seeds"] = " ".join(str(s) for s in c.seeds)
            w.writerow(["" if d[k] is None else d[k] for k in CSV_FIELDS])
        return buf.getvalue()

    def write(self, outdir) -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "report.json").write_text(self.to_json())
        (outdir / "report.csv").write_text(self.to_csv())


def run_benchmark(planners: Sequence[str], scenarios: Sequence[str], seeds: Sequence[int],
                  env_cfg: EnvConfig = EnvConfig(), checkpoint=None, outdir=None,
                  plots: bool = True, suite: Optional[dict] = None,
                  dwa: Optional[DwaConfig] = None, sp: Optional[SpConfig] = None) -> tuple:
    """Run every (planner, scenario, seed) once. Returns (report, {key: TrajectoryLog}).

    ``scenarios`` are names in ``suite`` (default: C1-C4). A ``sac`` planner
    whose checkpoint is missing gets an ``unavailable`` cell.
    """
    suite = SUITE if suite is None else suite
    cfg = replace(env_cfg, use_global_plan=True)
    outdir = Path(outdir) if outdir is not None else None
    if outdir is not None:
        (outdir / "trajectories").mkdir(parents=True, exist_ok=True)
    cells, logs = [], {}
    for planner in sorted(planners):
        if planner not in PLANNERS:
            raise ValueError(f"unknown planner {planner!r}; expected one of {PLANNERS}")
        pcfg, policy, obs = cfg, None, None
        if planner == "dwa":
            policy = dwa_policy(dwa)
        elif planner == "sp":
            policy = sp_policy(sp)
        else:
            try:
                policy, obs = load_sac_policy(checkpoint) if checkpoint is not None else (None, None)
            except FileNotFoundError as e:
                log.warning("%s", e)
            if obs is not None:
                pcfg = replace(cfg, obs=obs)
        for name in sorted(scenarios):
            if name not in suite:
                raise ValueError(f"unknown scenario {name!r}")
            if policy is None:
                cells.append(CellReport(planner, name, list(seeds), status=UNAVAILABLE))
                continue
            outcomes, run_logs = [], []
            for seed in seeds:
                spec = suite[name](seed)
                res: EpisodeOutcome = run_episode(spec, policy, pcfg)
                lg = TrajectoryLog(res.trajectory)
                outcomes.append(res.status)
                run_logs.append(lg)
                key = f"{planner}_{name}_seed{seed}"
                logs[key] = lg
                if outdir is not None:
                    lg.save(outdir / "trajectories" / f"{key}.csv")
                    if plots and len(lg):
                        (outdir / "trajectories" / f"{key}.svg").write_text(
                            render_trajectory(lg, spec, res.status, pcfg))
            cells.append(CellReport.from_runs(planner, name, list(seeds), outcomes, run_logs))
    report = BenchmarkReport(cells, list(seeds))
    if outdir is not None:
        report.write(outdir)
    return report, logs


# --------------------------------------------------------------------------
# SVG plots

PX_PER_M = 60.0
FORWARD_RAMP = ((198, 219, 239), (8, 48, 107))  # v = 0 .. v_max, blues
REVERSE_RAMP = ((253, 174, 107), (166, 54, 3))  # v = 0 .. v_min, oranges
OBSTACLE_GRAY = "#808080"
MOVER_GRAY = "#b0b0b0"


def _mix(ramp, s: float) -> str:
    s = min(max(s, 0.0), 1.0)
    c = [round(a + (b - a) * s) for a, b in zip(*ramp)]
    return "#{:02x}{:02x}{:02x}".format(*c)


def velocity_color(v: float, v_min: float = -0.5, v_max: float = 1.0) -> str:
    """Blue ramp for forward motion, orange ramp for reverse."""
    if v < 0:
        return _mix(REVERSE_RAMP, v / v_min if v_min < 0 else 1.0)
    return _mix(FORWARD_RAMP, v / v_max if v_max > 0 else 0.0)


def is_reverse_color(color: str) -> bool:
    r, _, b = (int(color[i:i + 2], 16) for i in (1, 3, 5))
    return r > b


def render_trajectory(log: TrajectoryLog, spec: ScenarioSpec, outcome: Optional[str] = None,
                      cfg: EnvConfig = EnvConfig()) -> str:
    """SVG of the scenario, the path coloured by signed linear velocity, and markers.

    Moving obstacles are drawn as the union of their disks at every logged
    time step. ``outcome`` defaults to the terminal-row reconstruction.
    """
    if len(log) == 0:
        raise ValueError("cannot render an empty trajectory log")
    if outcome is None:
        outcome = reconstruct_outcome(log, spec, cfg)
    x0, y0, x1, y1 = spec.extent
    W, H = (x1 - x0) * PX_PER_M, (y1 - y0) * PX_PER_M

    def px(x, y):
        return round((x - x0) * PX_PER_M, 2), round((y1 - y) * PX_PER_M, 2)

    def r_px(r):
        return round(r * PX_PER_M, 2)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W:.0f}" height="{H:.0f}" '
           f'viewBox="0 0 {W:.2f} {H:.2f}">',
           f'<title>{spec.name} {outcome}</title>',
           f'<rect x="0" y="0" width="{W:.2f}" height="{H:.2f}" fill="white"/>']
    out.append(f'<g class="static" fill="{OBSTACLE_GRAY}">')
    for r in spec.rects:
        ax, ay = px(r.xmin, r.ymax)
        out.append(f'<rect x="{ax}" y="{ay}" width="{r_px(r.xmax - r.xmin)}" '
                   f'height="{r_px(r.ymax - r.ymin)}"/>')
    for c in spec.circles:
        cx, cy = px(c.x, c.y)
        out.append(f'<circle cx="{cx}" cy="{cy}" r="{r_px(c.radius_m)}"/>')
    out.append('</g>')
    if spec.movers:
        out.append(f'<g class="mover" fill="{MOVER_GRAY}">')
        for pos in mover_positions_along(log, spec):
            for m, (mx, my) in zip(spec.movers, pos):
                cx, cy = px(mx, my)
                out.append(f'<circle cx="{cx}" cy="{cy}" r="{r_px(m.radius_m)}"/>')
        out.append('</g>')
    b = cfg.bounds
    out.append('<g class="trajectory" stroke-width="3" stroke-linecap="round">')
    for a, nxt in zip(log.rows[:-1], log.rows[1:]):
        # a row's (v, w) is the command that produced its pose
        (ax, ay), (bx, by) = px(a.x, a.y), px(nxt.x, nxt.y)
        kind = "reverse" if nxt.v < 0 else "forward"
        out.append(f'<line class="{kind}" x1="{ax}" y1="{ay}" x2="{bx}" y2="{by}" '
                   f'stroke="{velocity_color(nxt.v, b.v_min, b.v_max)}"/>')
    out.append('</g>')
    sx, sy = px(log.rows[0].x, log.rows[0].y)
    gx, gy = px(*spec.goal)
    out.append(f'<circle class="start" cx="{sx}" cy="{sy}" r="6" fill="#2ca02c"/>')
    out.append(f'<rect class="goal" x="{gx - 6}" y="{gy - 6}" width="12" height="12" fill="#9467bd"/>')
    if outcome == COLLISION:
        ex, ey = px(log.rows[-1].x, log.rows[-1].y)
        out.append(f'<path class="collision" d="M{ex - 7} {ey - 7}L{ex + 7} {ey + 7}M{ex - 7} {ey + 7}'
                   f'L{ex + 7} {ey - 7}" stroke="#d62728" stroke-width="3"/>')
    out.append('</svg>')
    return "\n".join(out) + "\n"
