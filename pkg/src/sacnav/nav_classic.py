"""Non-learned navigation: Dijkstra global planner, waypoint generator and
selector, Dynamic Window Approach and the shortest-path local planner."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .gridworld import (DT_S, FOOTPRINT_RADIUS_M, LETHAL, Action, ActionBounds, RobotState,
                        wrap_angle)

SQRT2 = math.sqrt(2.0)
# (drow, dcol) in a fixed order; diagonals last
NEIGHBOURS = ((-1, 0), (0, -1), (0, 1), (1, 0), (-1, -1), (-1, 1), (1, -1), (1, 1))

WAYPOINT_SPACING_M = 1.0
CLEARANCE_M = 0.4
WINDOW_SIZE = 8


class NoPath(Exception):
    """No traversable route between the requested cells."""


@dataclass
class GlobalPlan:
    points: list  # world (x, y) of cell centres, start first
    cells: list  # (row, col)
    cost: float  # accumulated traversal cost
    length: float = 0.0  # euclidean length in meters

    def __post_init__(self):
        if not self.length and len(self.points) > 1:
            p = np.asarray(self.points)
            self.length = float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum())


def step_cost(step_len: float, dest_cost: int, cost_weight: float) -> float:
    return step_len * (1.0 + dest_cost / 254.0 * cost_weight)


def plan_global(grid, start, goal, cost_weight: float = 1.0,
                allow_lethal_start: bool = False) -> GlobalPlan:
    """Minimum-cost 8-connected path between two world points.

    Moving into a cell costs ``step length * (1 + cost/254 * cost_weight)``;
    lethal cells are impassable and diagonal moves may not cut a lethal
    corner. Ties in the frontier pop the lower (row, col) first.
    """
    h, w = grid.height, grid.width
    s = grid.world_to_cell(*start)
    g = grid.world_to_cell(*goal)
    for name, (r, c) in (("start", s), ("goal", g)):
        if not (0 <= r < h and 0 <= c < w):
            raise NoPath(f"{name} {(r, c)} outside the grid")
    cost = grid.cost.astype(np.int64)
    free = cost < LETHAL
    if not free[g]:
        raise NoPath(f"goal cell {g} is lethal")
    if not free[s] and not allow_lethal_start:
        raise NoPath(f"start cell {s} is lethal")
    res = grid.resolution
    free_l = free.tolist()
    cost_l = cost.tolist()

    dist = {s: 0.0}
    parent = {s: None}
    done = set()
    heap = [(0.0, s[0], s[1])]
    while heap:
        d, r, c = heapq.heappop(heap)
        if (r, c) in done:
            continue
        done.add((r, c))
        if (r, c) == g:
            break
        for dr, dc in NEIGHBOURS:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < h and 0 <= nc < w) or not free_l[nr][nc] or (nr, nc) in done:
                continue
            if dr and dc:
                if not (free_l[r][nc] and free_l[nr][c]):
                    continue
                step = res * SQRT2
            else:
                step = res
            nd = d + step_cost(step, cost_l[nr][nc], cost_weight)
            if nd < dist.get((nr, nc), math.inf):
                dist[(nr, nc)] = nd
                parent[(nr, nc)] = (r, c)
                heapq.heappush(heap, (nd, nr, nc))
    if g not in done:
        raise NoPath(f"goal {g} unreachable from {s}")
    cells = []
    node = g
    while node is not None:
        cells.append(node)
        node = parent[node]
    cells.reverse()
    return GlobalPlan([grid.cell_center(r, c) for r, c in cells], cells, dist[g])


def make_waypoints(plan: GlobalPlan, spacing: float = WAYPOINT_SPACING_M) -> list:
    """Points at arc-length multiples of ``spacing`` along the plan, goal last."""
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    pts = np.asarray(plan.points, dtype=float)
    if len(pts) == 1:
        return [tuple(pts[0])]
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    out = []
    k = 1
    while k * spacing < total - 1e-9:
        s = k * spacing
        i = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg) - 1)
        f = (s - cum[i]) / seg[i] if seg[i] > 0 else 0.0
        out.append(tuple(pts[i] + f * (pts[i + 1] - pts[i])))
        k += 1
    out.append(tuple(pts[-1]))
    return out


def clearance_at(grid, x: float, y: float, limit: float = math.inf) -> float:
    """Distance from a world point to the nearest lethal cell centre (capped at ``limit``)."""
    lethal = grid.lethal
    if math.isfinite(limit):
        res = grid.resolution
        r0, c0 = grid.world_to_cell(x - limit, y - limit)
        r1, c1 = grid.world_to_cell(x + limit, y + limit)
        r0, c0 = max(r0, 0), max(c0, 0)
        r1, c1 = min(r1, grid.height - 1), min(c1, grid.width - 1)
        if r0 > r1 or c0 > c1:
            return limit
        sub = lethal[r0:r1 + 1, c0:c1 + 1]
    else:
        r0 = c0 = 0
        sub = lethal
    rows, cols = np.nonzero(sub)
    if rows.size == 0:
        return limit
    cx = grid.origin[0] + (cols + c0 + 0.5) * grid.resolution
    cy = grid.origin[1] + (rows + r0 + 0.5) * grid.resolution
    return float(min(np.sqrt(((cx - x) ** 2 + (cy - y) ** 2).min()), limit))


@dataclass
class WaypointList:
    points: list  # exactly WINDOW_SIZE entries
    selected: int
    start_index: int  # index into the full waypoint sequence of points[0]

    @property
    def waypoint(self) -> tuple:
        return self.points[self.selected]


def select_waypoint(waypoints: Sequence, robot: RobotState, grid,
                    clearance: float = CLEARANCE_M) -> tuple:
    """Pick the local planner's target from the waypoint sequence.

    The 8-entry window starts one past the waypoint closest to the robot;
    the first entry further than ``clearance`` from every lethal cell wins,
    otherwise the last entry.
    """
    if len(waypoints) == 0:
        raise ValueError("empty waypoint sequence")
    wp = np.asarray(waypoints, dtype=float)
    closest = int(np.argmin(np.hypot(wp[:, 0] - robot.x, wp[:, 1] - robot.y)))
    start = min(closest + 1, len(waypoints) - 1)
    window = [tuple(p) for p in wp[start:start + WINDOW_SIZE]]
    window += [tuple(wp[-1])] * (WINDOW_SIZE - len(window))
    chosen = WINDOW_SIZE - 1
    for i, p in enumerate(window):
        if clearance_at(grid, p[0], p[1], limit=clearance + grid.resolution) > clearance:
            chosen = i
            break
    wl = WaypointList(window, chosen, start)
    return wl.waypoint, wl


# --------------------------------------------------------------------------
# Dynamic Window Approach


@dataclass
class DwaConfig:
    acc_lin_mps2: float = 1.0
    acc_ang_radps2: float = 2.0
    bounds: ActionBounds = field(default_factory=ActionBounds)
    n_v: int = 11
    n_w: int = 21
    horizon_s: float = 1.5
    sim_dt_s: float = DT_S
    control_dt_s: float = DT_S
    w_path: float = 1.0
    w_clear: float = 0.3
    w_speed: float = 0.1
    clearance_cap_m: float = 1.0
    footprint_m: float = FOOTPRINT_RADIUS_M

    def __post_init__(self):
        if self.n_v < 2 or self.n_w < 2:
            raise ValueError("need at least 2 samples per velocity axis")
        if self.horizon_s <= 0 or self.sim_dt_s <= 0:
            raise ValueError("horizon and sim step must be positive")


def _axis_samples(center: float, reach: float, lo: float, hi: float, n: int) -> np.ndarray:
    a, b = max(center - reach, lo), min(center + reach, hi)
    if a > b:  # current velocity outside the bounds; use the nearest bound
        a = b = min(max(center, lo), hi)
    vals = a + (b - a) * np.linspace(0.0, 1.0, n)
    vals[np.abs(vals) < 1e-12] = 0.0
    return np.unique(vals)


def dynamic_window(v0: float, w0: float, cfg: DwaConfig) -> tuple:
    """Velocity lattice reachable within one control period."""
    b = cfg.bounds
    vs = _axis_samples(v0, cfg.acc_lin_mps2 * cfg.control_dt_s, b.v_min, b.v_max, cfg.n_v)
    ws = _axis_samples(w0, cfg.acc_ang_radps2 * cfg.control_dt_s, -b.w_max, b.w_max, cfg.n_w)
    return vs, ws


def rollout_arcs(robot: RobotState, vs: np.ndarray, ws: np.ndarray, cfg: DwaConfig) -> tuple:
    """Poses of every constant-(v, w) arc: arrays (n_arcs, n_steps) of x, y, yaw."""
    n = int(round(cfg.horizon_s / cfg.sim_dt_s))
    V, W = (a.ravel() for a in np.meshgrid(vs, ws, indexing="ij"))
    x = np.full(V.shape, robot.x)
    y = np.full(V.shape, robot.y)
    yaw = np.full(V.shape, robot.yaw)
    xs, ys, yaws = [], [], []
    for _ in range(n):
        x = x + V * np.cos(yaw) * cfg.sim_dt_s
        y = y + V * np.sin(yaw) * cfg.sim_dt_s
        yaw = (yaw + W * cfg.sim_dt_s + np.pi) % (2 * np.pi) - np.pi
        xs.append(x)
        ys.append(y)
        yaws.append(yaw)
    return V, W, np.stack(xs, 1), np.stack(ys, 1), np.stack(yaws, 1)


def _lethal_tree(grid):
    rows, cols = np.nonzero(grid.lethal)
    if rows.size == 0:
        return None
    pts = np.column_stack([grid.origin[0] + (cols + 0.5) * grid.resolution,
                           grid.origin[1] + (rows + 0.5) * grid.resolution])
    return cKDTree(pts)


def score_arcs(robot: RobotState, velocity: tuple, waypoint, grid, cfg: DwaConfig) -> tuple:
    """(V, W, score, admissible) for the whole dynamic window."""
    vs, ws = dynamic_window(velocity[0], velocity[1], cfg)
    V, W, X, Y, _ = rollout_arcs(robot, vs, ws, cfg)
    tree = _lethal_tree(grid)
    if tree is None:
        dist = np.full(X.shape, np.inf)
    else:
        dist, _ = tree.query(np.column_stack([X.ravel(), Y.ravel()]))
        dist = dist.reshape(X.shape)
    ox, oy = grid.origin
    inside = ((X >= ox) & (X < ox + grid.width * grid.resolution)
              & (Y >= oy) & (Y < oy + grid.height * grid.resolution))
    admissible = (inside & (dist > cfg.footprint_m + 1e-12)).all(axis=1)
    clear = np.minimum(dist.min(axis=1), cfg.clearance_cap_m)
    end_d = np.hypot(X[:, -1] - waypoint[0], Y[:, -1] - waypoint[1])
    score = -cfg.w_path * end_d + cfg.w_clear * clear + cfg.w_speed * V
    return V, W, score, admissible


def dwa_plan(robot: RobotState, velocity: tuple, waypoint, grid,
             cfg: Optional[DwaConfig] = None) -> Action:
    """Best admissible constant-velocity arc; (0, 0) when none is admissible.

    Ties (within 1e-9) prefer the lowest |w|, then the lowest v.
    """
    cfg = cfg or DwaConfig()
    V, W, score, ok = score_arcs(robot, velocity, waypoint, grid, cfg)
    if not ok.any():
        return Action(0.0, 0.0)
    best = score[ok].max()
    cand = np.flatnonzero(ok & (score >= best - 1e-9))
    i = min(cand, key=lambda j: (abs(W[j]), V[j]))
    return Action(float(V[i]), float(W[i]))


# --------------------------------------------------------------------------
# shortest-path local planner


@dataclass
class SpConfig:
    lookahead_m: float = 0.6
    k_w: float = 2.0
    bounds: ActionBounds = field(default_factory=ActionBounds)
    cost_weight: float = 1.0


def point_along(points: Sequence, s: float) -> tuple:
    """Point at arc length ``s`` along a polyline (clamped to its end)."""
    pts = np.asarray(points, dtype=float)
    for a, b in zip(pts[:-1], pts[1:]):
        seg = float(np.linalg.norm(b - a))
        if s <= seg and seg > 0:
            return tuple(a + (s / seg) * (b - a))
        s -= seg
    return tuple(pts[-1])


def sp_plan(robot: RobotState, waypoint, grid, cfg: Optional[SpConfig] = None) -> Action:
    """Steer toward the lookahead point of a fresh shortest path to the waypoint.

    Turn-then-move law: w = k_w * bearing (clamped), v = v_max * max(0, cos bearing).
    Returns the stop action when no path exists.
    """
    cfg = cfg or SpConfig()
    try:
        plan = plan_global(grid, (robot.x, robot.y), waypoint, cfg.cost_weight,
                           allow_lethal_start=True)
    except NoPath:
        return Action(0.0, 0.0)
    # the robot's own position replaces the start cell centre
    pts = [(robot.x, robot.y)] + plan.points[1:]
    if len(pts) == 1:
        pts.append(tuple(waypoint))
    target = point_along(pts, cfg.lookahead_m)
    bearing = wrap_angle(math.atan2(target[1] - robot.y, target[0] - robot.x) - robot.yaw)
    wmax = cfg.bounds.w_max
    w = min(max(cfg.k_w * bearing, -wmax), wmax)
    v = cfg.bounds.v_max * max(0.0, math.cos(bearing))
    return Action(v, w)
