"""Robot state, unicycle kinematics, obstacle worlds and scenario descriptions."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

LETHAL = 254

# Defaults for the simulated robot (Jackal-sized, see README for rationale).
DT_S = 0.2
V_MIN = -0.5
V_MAX = 1.0
W_MAX = 1.5
FOOTPRINT_RADIUS_M = 0.25
GOAL_TOLERANCE_M = 0.15
STEP_LIMIT = 200


def wrap_angle(a: float) -> float:
    """Wrap an angle into [-pi, pi)."""
    w = (a + math.pi) % (2.0 * math.pi) - math.pi
    # float modulo can land exactly on +pi for inputs a hair below -pi
    if w >= math.pi:
        w -= 2.0 * math.pi
    return w


@dataclass(frozen=True)
class RobotState:
    x: float
    y: float
    yaw: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.yaw)):
            raise ValueError(f"non-finite robot state {self}")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class Action:
    v: float
    w: float


@dataclass(frozen=True)
class ActionBounds:
    v_min: float = V_MIN
    v_max: float = V_MAX
    w_max: float = W_MAX

    @property
    def low(self) -> np.ndarray:
        return np.array([self.v_min, -self.w_max])

    @property
    def high(self) -> np.ndarray:
        return np.array([self.v_max, self.w_max])

    def contains(self, action: Action) -> bool:
        return self.v_min <= action.v <= self.v_max and abs(action.w) <= self.w_max

    def clamp(self, action: Action) -> Action:
        if self.contains(action):
            return action
        clamped = Action(min(max(action.v, self.v_min), self.v_max),
                         min(max(action.w, -self.w_max), self.w_max))
        log.warning("action %s outside bounds, clamped to %s", action, clamped)
        return clamped


def step(state: RobotState, action: Action, dt: float,
         bounds: Optional[ActionBounds] = None) -> RobotState:
    """Forward-Euler unicycle update.

    When ``bounds`` is given the action is clamped into them first.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if bounds is not None:
        action = bounds.clamp(action)
    return RobotState(state.x + action.v * math.cos(state.yaw) * dt,
                      state.y + action.v * math.sin(state.yaw) * dt,
                      state.yaw + action.w * dt)


# --------------------------------------------------------------------------
# collision and range queries on an OccupancyGrid


def check_collision(state: RobotState, world, footprint_radius: float) -> bool:
    """True iff a lethal cell centre lies within ``footprint_radius`` of the robot.

    Poses outside the grid count as collisions.
    """
    if not world.contains_point(state.x, state.y):
        return True
    res = world.resolution
    # float cell coordinates of the robot centre
    fc = (state.x - world.origin[0]) / res - 0.5
    fr = (state.y - world.origin[1]) / res - 0.5
    reach = footprint_radius / res
    c0 = max(int(math.floor(fc - reach)), 0)
    c1 = min(int(math.ceil(fc + reach)), world.width - 1)
    r0 = max(int(math.floor(fr - reach)), 0)
    r1 = min(int(math.ceil(fr + reach)), world.height - 1)
    window = world.cost[r0:r1 + 1, c0:c1 + 1] >= LETHAL
    if not window.any():
        return False
    rows, cols = np.nonzero(window)
    d2 = ((cols + c0 - fc) * res) ** 2 + ((rows + r0 - fr) * res) ** 2
    return bool((d2 <= footprint_radius ** 2 + 1e-12).any())


def raycast(state: RobotState, world, bearing: float, max_range: float) -> float:
    """Distance along a ray (relative ``bearing``) to the first lethal cell.

    Cells outside the grid are free; returns ``max_range`` if nothing is hit.
    """
    if max_range <= 0:
        raise ValueError("max_range must be positive")
    ds = world.resolution / 4.0
    s = np.arange(0.0, max_range + 1e-12, ds)
    a = state.yaw + bearing
    px = state.x + s * math.cos(a)
    py = state.y + s * math.sin(a)
    c = np.floor((px - world.origin[0]) / world.resolution).astype(int)
    r = np.floor((py - world.origin[1]) / world.resolution).astype(int)
    inside = (c >= 0) & (c < world.width) & (r >= 0) & (r < world.height)
    hit = np.zeros_like(inside)
    hit[inside] = world.cost[r[inside], c[inside]] >= LETHAL
    idx = np.flatnonzero(hit)
    if idx.size == 0:
        return float(max_range)
    return float(s[idx[0]])


# --------------------------------------------------------------------------
# scenario description


@dataclass
class RectObstacle:
    xmin: float
    ymin: float
    xmax: float
    ymax: float
    appear_time_s: float = 0.0


@dataclass
class CircleObstacle:
    x: float
    y: float
    radius_m: float
    appear_time_s: float = 0.0


@dataclass
class MovingObstacle:
    """A disk following a piecewise-linear path at per-segment speeds.

    ``halt_distance_m`` (optional) freezes the mover for the rest of the
    episode once the robot comes within that centre-to-centre distance.
    """

    radius_m: float
    path: list
    speeds_mps: list
    start_time_s: float = 0.0
    halt_distance_m: Optional[float] = None

    def __post_init__(self):
        self.path = [tuple(map(float, p)) for p in self.path]
        self.speeds_mps = [float(s) for s in self.speeds_mps]
        if len(self.path) < 1:
            raise ValueError("moving obstacle needs at least one path point")
        if len(self.speeds_mps) != len(self.path) - 1:
            raise ValueError("need one speed per path segment")
        if any(s <= 0 for s in self.speeds_mps):
            raise ValueError("segment speeds must be positive")

    def knot_times(self) -> np.ndarray:
        seg = [math.dist(a, b) / s for a, b, s in
               zip(self.path[:-1], self.path[1:], self.speeds_mps)]
        return self.start_time_s + np.concatenate([[0.0], np.cumsum(seg)])

    def position(self, t: float) -> tuple:
        """Interpolated centre at time ``t``; clamped to the ends of the schedule."""
        knots = self.knot_times()
        pts = np.asarray(self.path)
        x = float(np.interp(t, knots, pts[:, 0]))
        y = float(np.interp(t, knots, pts[:, 1]))
        return (x, y)


@dataclass
class ScenarioSpec:
    name: str
    width_cells: int
    height_cells: int
    resolution_m: float
    start: RobotState
    goal: tuple
    origin: tuple = (0.0, 0.0)
    rects: list = field(default_factory=list)
    circles: list = field(default_factory=list)
    movers: list = field(default_factory=list)
    step_limit: int = STEP_LIMIT
    seed: int = 0

    def __post_init__(self):
        if self.resolution_m <= 0:
            raise ValueError("resolution must be positive")
        self.goal = (float(self.goal[0]), float(self.goal[1]))
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    @property
    def extent(self) -> tuple:
        """(xmin, ymin, xmax, ymax) of the map in meters."""
        ox, oy = self.origin
        return (ox, oy, ox + self.width_cells * self.resolution_m,
                oy + self.height_cells * self.resolution_m)

    def validate(self) -> None:
        xmin, ymin, xmax, ymax = self.extent

        def inside(x, y):
            return xmin <= x <= xmax and ymin <= y <= ymax

        for r in self.rects:
            if not (inside(r.xmin, r.ymin) and inside(r.xmax, r.ymax)) or r.xmin > r.xmax or r.ymin > r.ymax:
                raise ValueError(f"{self.name}: rectangle {r} outside map or inverted")
        for c in self.circles:
            if not inside(c.x, c.y):
                raise ValueError(f"{self.name}: circle {c} outside map")
        for m in self.movers:
            for p in m.path:
                if not inside(*p):
                    raise ValueError(f"{self.name}: mover path point {p} outside map")
        if not inside(self.start.x, self.start.y) or not inside(*self.goal):
            raise ValueError(f"{self.name}: start or goal outside map")
        if self.step_limit < 1:
            raise ValueError("step_limit must be >= 1")
        # start/goal must be in free space at t=0
        from .costmap import rasterize
        grid = rasterize(self, 0.0)
        for p in [(self.start.x, self.start.y), self.goal]:
            r, c = grid.world_to_cell(*p)
            if grid.cost[r, c] >= LETHAL:
                raise ValueError(f"{self.name}: start/goal {p} lies in an obstacle")

    # JSON round trip; every field is written explicitly.
    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "width_cells": self.width_cells,
            "height_cells": self.height_cells,
            "resolution_m": self.resolution_m,
            "origin_m": list(self.origin),
            "start": {"x_m": self.start.x, "y_m": self.start.y, "yaw_rad": self.start.yaw},
            "goal": {"x_m": self.goal[0], "y_m": self.goal[1]},
            "rects": [{"xmin_m": r.xmin, "ymin_m": r.ymin, "xmax_m": r.xmax, "ymax_m": r.ymax,
                       "appear_time_s": r.appear_time_s} for r in self.rects],
            "circles": [{"x_m": c.x, "y_m": c.y, "radius_m": c.radius_m,
                         "appear_time_s": c.appear_time_s} for c in self.circles],
            "movers": [{"radius_m": m.radius_m, "path_m": [list(p) for p in m.path],
                        "speeds_mps": list(m.speeds_mps), "start_time_s": m.start_time_s,
                        "halt_distance_m": m.halt_distance_m} for m in self.movers],
            "step_limit": self.step_limit,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        try:
            return cls(
                name=d["name"],
                width_cells=int(d["width_cells"]),
                height_cells=int(d["height_cells"]),
                resolution_m=float(d["resolution_m"]),
                origin=tuple(d["origin_m"]),
                start=RobotState(d["start"]["x_m"], d["start"]["y_m"], d["start"]["yaw_rad"]),
                goal=(d["goal"]["x_m"], d["goal"]["y_m"]),
                rects=[RectObstacle(r["xmin_m"], r["ymin_m"], r["xmax_m"], r["ymax_m"],
                                    r["appear_time_s"]) for r in d["rects"]],
                circles=[CircleObstacle(c["x_m"], c["y_m"], c["radius_m"], c["appear_time_s"])
                         for c in d["circles"]],
                movers=[MovingObstacle(m["radius_m"], m["path_m"], m["speeds_mps"],
                                       m["start_time_s"], m["halt_distance_m"])
                        for m in d["movers"]],
                step_limit=int(d["step_limit"]),
                seed=int(d["seed"]),
            )
        except KeyError as e:
            raise ValueError(f"scenario document missing field {e}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioSpec":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "ScenarioSpec":
        return cls.from_json(Path(path).read_text())


def advance_moving_obstacles(spec: ScenarioSpec, t: float,
                             halt_times: Optional[Sequence[Optional[float]]] = None) -> list:
    """Centres of every moving obstacle at time ``t``.

    ``halt_times[i]``, when set, freezes mover ``i`` at its position at that time.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    out = []
    for i, m in enumerate(spec.movers):
        ti = t
        if halt_times is not None and halt_times[i] is not None:
            ti = min(t, halt_times[i])
        out.append(m.position(ti))
    return out
