"""Shaped navigation reward: progress terms, sparse goal/collision terms and a
Gaussian obstacle-proximity penalty."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gridworld import GOAL_TOLERANCE_M, RobotState, wrap_angle


@dataclass(frozen=True)
class WaypointGeometry:
    d: float
    theta: float  # bearing = angle to waypoint - yaw, in [-pi, pi)

    @classmethod
    def of(cls, robot: RobotState, waypoint) -> "WaypointGeometry":
        dx, dy = waypoint[0] - robot.x, waypoint[1] - robot.y
        return cls(math.hypot(dx, dy), wrap_angle(math.atan2(dy, dx) - robot.yaw))


@dataclass(frozen=True)
class RewardParams:
    r_max: float = 10.0
    sigma_m: float = 0.5
    half_width_m: float = 1.0
    goal_tolerance_m: float = GOAL_TOLERANCE_M
    distance_weight: float = 1.0
    bearing_weight: float = 1.0

    def __post_init__(self):
        if min(self.r_max, self.sigma_m, self.half_width_m, self.goal_tolerance_m) <= 0:
            raise ValueError("reward parameters must be positive")


def progress_term(old: float, new: float) -> float:
    """Improvement ``old - new``; negative progress counts double."""
    delta = old - new
    return delta if delta >= 0 else 2.0 * delta


def gaussian_window(grid, robot: RobotState, params: RewardParams) -> tuple:
    """Kernel weights and normalized costs of the cells inside the truncation square."""
    res = grid.resolution
    hw = params.half_width_m
    c0 = max(int(math.floor((robot.x - hw - grid.origin[0]) / res)), 0)
    c1 = min(int(math.ceil((robot.x + hw - grid.origin[0]) / res)), grid.width - 1)
    r0 = max(int(math.floor((robot.y - hw - grid.origin[1]) / res)), 0)
    r1 = min(int(math.ceil((robot.y + hw - grid.origin[1]) / res)), grid.height - 1)
    if c0 > c1 or r0 > r1:
        return np.zeros(0), np.zeros(0)
    xs = grid.origin[0] + (np.arange(c0, c1 + 1) + 0.5) * res - robot.x
    ys = grid.origin[1] + (np.arange(r0, r1 + 1) + 0.5) * res - robot.y
    inside = (np.abs(xs)[None, :] <= hw + 1e-12) & (np.abs(ys)[:, None] <= hw + 1e-12)
    k = np.exp(-(xs[None, :] ** 2 + ys[:, None] ** 2) / (2.0 * params.sigma_m ** 2))
    cost = np.minimum(grid.cost[r0:r1 + 1, c0:c1 + 1] / 254.0, 1.0)
    return k[inside], cost[inside]


def gaussian_penalty(grid, robot: RobotState, params: RewardParams = RewardParams()) -> float:
    """Kernel-weighted mean of normalized cell costs around the robot, in [0, 1]."""
    k, cost = gaussian_window(grid, robot, params)
    mass = k.sum()
    if mass == 0:
        return 0.0
    return float(np.dot(k, cost) / mass)


def reward(geo_old: WaypointGeometry, geo_new: WaypointGeometry, collision: bool,
           penalty: float, params: RewardParams = RewardParams()) -> tuple:
    """Reward for one transition and whether it ends the episode.

    ``penalty`` is the Gaussian term evaluated in the new state. A collision
    takes precedence over reaching the waypoint.
    """
    r = params.distance_weight * progress_term(geo_old.d, geo_new.d)
    r += params.bearing_weight * progress_term(abs(geo_old.theta), abs(geo_new.theta))
    terminal = False
    if collision:
        r -= params.r_max
        terminal = True
    elif geo_new.d <= params.goal_tolerance_m:
        r += params.r_max
        terminal = True
    r -= penalty
    return r, terminal


def transition_reward(robot_old: RobotState, robot_new: RobotState, waypoint, grid_new,
                      collision: bool, params: RewardParams = RewardParams()) -> tuple:
    """Convenience wrapper computing geometry and the Gaussian term from poses."""
    return reward(WaypointGeometry.of(robot_old, waypoint), WaypointGeometry.of(robot_new, waypoint),
                  collision, gaussian_penalty(grid_new, robot_new, params), params)
