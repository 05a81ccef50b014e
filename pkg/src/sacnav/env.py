"""Episode loop around a ScenarioSpec: kinematics, moving obstacles,
costmaps, reward and (optionally) the global-plan / waypoint pipeline."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .costmap import (InflationParams, ObservationConfig, OccupancyGrid, inflate, rasterize,
                      render_observation, stack_frames)
from .gridworld import (DT_S, FOOTPRINT_RADIUS_M, Action, ActionBounds, RobotState, ScenarioSpec,
                        advance_moving_obstacles, check_collision, raycast, step)
from .nav_classic import (CLEARANCE_M, WAYPOINT_SPACING_M, NoPath, clearance_at, make_waypoints,
                          plan_global, select_waypoint)
from .reward import RewardParams, transition_reward

log = logging.getLogger(__name__)

SUCCESS, COLLISION, TIMEOUT, ERROR = "success", "collision", "timeout", "error"
FRONT_RAYS = 9
FRONT_HALF_ANGLE = math.pi / 4


@dataclass(frozen=True)
class EnvConfig:
    dt_s: float = DT_S
    bounds: ActionBounds = field(default_factory=ActionBounds)
    footprint_m: float = FOOTPRINT_RADIUS_M
    reward: RewardParams = field(default_factory=RewardParams)
    inflation: InflationParams = field(default_factory=InflationParams)
    obs: ObservationConfig = field(default_factory=ObservationConfig)
    # full pipeline: Dijkstra plan at t=0, waypoints, per-step selection
    use_global_plan: bool = False
    waypoint_spacing_m: float = WAYPOINT_SPACING_M
    waypoint_clearance_m: float = CLEARANCE_M
    front_range_m: float = 4.0


class Context:
    """Everything a local planner may look at in one control step."""

    def __init__(self, env: "NavEnv", robot: RobotState, velocity: tuple, t: float,
                 world: OccupancyGrid, costmap: OccupancyGrid, waypoint: tuple):
        self.env = env
        self.robot = robot
        self.velocity = velocity
        self.t = t
        self.world = world
        self.costmap = costmap
        self.waypoint = waypoint
        self._frame = None

    @property
    def goal(self) -> tuple:
        return self.env.spec.goal

    def frame(self) -> np.ndarray:
        if self._frame is None:
            self._frame = render_observation(self.costmap, self.robot, self.waypoint, self.env.cfg.obs)
        return self._frame

    def observation(self) -> np.ndarray:
        """Frame-stacked image for the agent (renders lazily)."""
        k = self.env.cfg.obs.frame_stack
        hist = self.env.history[-k:]
        return stack_frames([c.frame() for c in hist], k)


@dataclass
class TrajectoryRow:
    t: float
    x: float
    y: float
    yaw: float
    v: float
    w: float
    min_front_obstacle_dist: float
    reward: float
    clearance: float
    waypoint_x: float
    waypoint_y: float


@dataclass
class EpisodeOutcome:
    status: str
    steps: int
    total_reward: float
    trajectory: list
    scenario: str = ""
    error: Optional[str] = None


def front_distance(robot: RobotState, world: OccupancyGrid, max_range: float) -> float:
    bearings = np.linspace(-FRONT_HALF_ANGLE, FRONT_HALF_ANGLE, FRONT_RAYS)
    return min(raycast(robot, world, float(b), max_range) for b in bearings)


class NavEnv:
    """One episode of one scenario; single-threaded, deterministic."""

    def __init__(self, spec: ScenarioSpec, cfg: EnvConfig = EnvConfig()):
        self.spec = spec
        self.cfg = cfg
        self.waypoints = None
        self.plan = None

    # -- state helpers
    def _grids(self, t: float) -> tuple:
        pos = advance_moving_obstacles(self.spec, t, self.halt_times)
        world = rasterize(self.spec, t, pos)
        return world, inflate(world, self.cfg.inflation), pos

    def _update_halts(self, t: float, positions) -> None:
        for i, m in enumerate(self.spec.movers):
            if m.halt_distance_m is None or self.halt_times[i] is not None:
                continue
            if math.hypot(positions[i][0] - self.robot.x, positions[i][1] - self.robot.y) <= m.halt_distance_m:
                self.halt_times[i] = t

    def _waypoint(self, world: OccupancyGrid) -> tuple:
        if self.waypoints is None:
            return self.spec.goal
        wp, _ = select_waypoint(self.waypoints, self.robot, world, self.cfg.waypoint_clearance_m)
        return wp

    def _context(self) -> Context:
        ctx = Context(self, self.robot, self.velocity, self.t, self.world, self.costmap,
                      self._waypoint(self.world))
        self.history.append(ctx)
        del self.history[:-max(self.cfg.obs.frame_stack, 1)]
        return ctx

    def reset(self) -> Context:
        self.t = 0.0
        self.steps = 0
        self.robot = self.spec.start
        self.velocity = (0.0, 0.0)
        self.halt_times = [None] * len(self.spec.movers)
        self.history = []
        self.world, self.costmap, pos = self._grids(0.0)
        self._update_halts(0.0, pos)
        if self.cfg.use_global_plan:
            self.plan = plan_global(self.costmap, (self.robot.x, self.robot.y), self.spec.goal)
            self.waypoints = make_waypoints(self.plan, self.cfg.waypoint_spacing_m)
        self.ctx = self._context()
        return self.ctx

    def row(self, action: Action, r: float) -> TrajectoryRow:
        return TrajectoryRow(
            round(self.steps * self.cfg.dt_s, 9), self.robot.x, self.robot.y, self.robot.yaw,
            action.v, action.w, front_distance(self.robot, self.world, self.cfg.front_range_m), r,
            self.pose_clearance(), self.ctx.waypoint[0], self.ctx.waypoint[1])

    def pose_clearance(self) -> float:
        if not self.world.contains_point(self.robot.x, self.robot.y):
            return 0.0
        return clearance_at(self.world, self.robot.x, self.robot.y)

    def goal_distance(self) -> float:
        return math.hypot(self.spec.goal[0] - self.robot.x, self.spec.goal[1] - self.robot.y)

    def step(self, action: Action) -> tuple:
        """Advance one control period. Returns (context, reward, done, status)."""
        action = self.cfg.bounds.clamp(action)
        old = self.robot
        waypoint = self.ctx.waypoint
        self.robot = step(self.robot, action, self.cfg.dt_s)
        self.velocity = (action.v, action.w)
        self.steps += 1
        self.t = self.steps * self.cfg.dt_s
        pos = advance_moving_obstacles(self.spec, self.t, self.halt_times)
        self._update_halts(self.t, pos)
        self.world, self.costmap, _ = self._grids(self.t)
        collision = check_collision(self.robot, self.world, self.cfg.footprint_m)
        r, _ = transition_reward(old, self.robot, waypoint, self.costmap, collision, self.cfg.reward)
        if collision:
            status = COLLISION
        elif self.goal_distance() <= self.cfg.reward.goal_tolerance_m:
            status = SUCCESS
        elif self.steps >= self.spec.step_limit:
            status = TIMEOUT
        else:
            status = None
        self.ctx = self._context()
        return self.ctx, r, status is not None, status


Policy = Callable[[Context], Action]


def run_episode(spec: ScenarioSpec, policy: Policy, cfg: EnvConfig = EnvConfig(),
                record: bool = True) -> EpisodeOutcome:
    """Roll ``policy`` out on ``spec`` until success, collision or timeout.

    A policy that raises ends the episode with status ``"error"``. Policies
    exposing ``reset()`` are reset first.
    """
    env = NavEnv(spec, cfg)
    try:
        ctx = env.reset()
    except NoPath as e:
        return EpisodeOutcome(ERROR, 0, 0.0, [], spec.name, f"no global plan: {e}")
    if hasattr(policy, "reset"):
        policy.reset()
    rows = [env.row(Action(0.0, 0.0), 0.0)] if record else []
    total = 0.0
    while True:
        try:
            action = policy(ctx)
        except Exception as e:  # noqa: BLE001 - any policy failure ends the episode
            log.warning("policy failed on %s at step %d: %s", spec.name, env.steps, e)
            return EpisodeOutcome(ERROR, env.steps, total, rows, spec.name, repr(e))
        ctx, r, done, status = env.step(action)
        total += r
        if record:
            rows.append(env.row(env.cfg.bounds.clamp(action), r))
        if done:
            return EpisodeOutcome(status, env.steps, total, rows, spec.name)


# simple reference policies


def stand_still(ctx: Context) -> Action:
    return Action(0.0, 0.0)


def drive_straight(speed: float = 1.0):
    def policy(ctx: Context) -> Action:
        return Action(speed, 0.0)
    return policy
