"""Scenario generators: single-obstacle training worlds and the C1-C4 test cases.

All generators are pure functions of their seed.
"""

from __future__ import annotations

import math

import numpy as np

from .gridworld import CircleObstacle, MovingObstacle, RectObstacle, RobotState, ScenarioSpec

WALL = 0.2
RES = 0.1

# training arena
ARENA_M = 9.0
GOAL_RANGE_M = (2.0, 3.5)
TRAIN_STEP_LIMIT = 60
WORLD_KINDS = ("offset", "grazing", "blocking")
HELD_OUT_SEED_OFFSET = 1_000_000


def boundary_walls(width_m: float, height_m: float, t: float = WALL) -> list:
    return [RectObstacle(0.0, 0.0, width_m, t), RectObstacle(0.0, height_m - t, width_m, height_m),
            RectObstacle(0.0, 0.0, t, height_m), RectObstacle(width_m - t, 0.0, width_m, height_m)]


def _spec(name, width_m, height_m, start, goal, rects=(), circles=(), movers=(), step_limit=200, seed=0):
    return ScenarioSpec(name=name, width_cells=int(round(width_m / RES)), height_cells=int(round(height_m / RES)),
                        resolution_m=RES, start=start, goal=goal,
                        rects=boundary_walls(width_m, height_m) + list(rects), circles=list(circles),
                        movers=list(movers), step_limit=step_limit, seed=seed)


def training_world(kind: int, seed: int) -> ScenarioSpec:
    """One start, one waypoint, one circular obstacle placed per ``kind``.

    kind 0 ("offset")   obstacle well beside the start-goal segment,
    kind 1 ("grazing")  obstacle edge close to the segment,
    kind 2 ("blocking") obstacle across the segment; a detour is required.
    """
    rng = np.random.default_rng([kind, seed])
    margin = 1.2
    while True:
        sx, sy = rng.uniform(margin, ARENA_M - margin, 2)
        ang = rng.uniform(-math.pi, math.pi)
        dist = rng.uniform(*GOAL_RANGE_M)
        gx, gy = sx + dist * math.cos(ang), sy + dist * math.sin(ang)
        if margin <= gx <= ARENA_M - margin and margin <= gy <= ARENA_M - margin:
            break
    radius = rng.uniform(0.3, 0.5)
    along = rng.uniform(0.4, 0.6) * dist
    if kind == 0:
        lateral = radius + rng.uniform(0.9, 1.5)
    elif kind == 1:
        lateral = radius + rng.uniform(0.15, 0.45)
    else:
        lateral = rng.uniform(0.0, 0.25)
    lateral *= rng.choice([-1.0, 1.0])
    ox = sx + along * math.cos(ang) - lateral * math.sin(ang)
    oy = sy + along * math.sin(ang) + lateral * math.cos(ang)
    ox = float(np.clip(ox, WALL + radius, ARENA_M - WALL - radius))
    oy = float(np.clip(oy, WALL + radius, ARENA_M - WALL - radius))
    start = RobotState(float(sx), float(sy), float(rng.uniform(-math.pi, math.pi)))
    return _spec(f"train-{WORLD_KINDS[kind]}-{seed}", ARENA_M, ARENA_M, start, (float(gx), float(gy)),
                 circles=[CircleObstacle(ox, oy, float(radius))], step_limit=TRAIN_STEP_LIMIT, seed=seed)


def random_world(seed: int, n_obstacles: int = 4, radius_range_m: tuple = (0.2, 0.6),
                 size_m: float = ARENA_M, step_limit: int = 150) -> ScenarioSpec:
    """Arena with ``n_obstacles`` random disks; start and goal keep clear of all of them."""
    if n_obstacles < 0:
        raise ValueError("n_obstacles must be >= 0")
    lo, hi = radius_range_m
    if not 0 < lo <= hi:
        raise ValueError("radius range must satisfy 0 < min <= max")
    rng = np.random.default_rng([7, seed])
    margin = WALL + hi + 0.1
    for _ in range(1000):
        sx, sy, gx, gy = rng.uniform(margin, size_m - margin, 4)
        if math.hypot(gx - sx, gy - sy) >= 0.4 * size_m:
            break
    circles = []
    while len(circles) < n_obstacles:
        r = float(rng.uniform(lo, hi))
        ox, oy = (float(v) for v in rng.uniform(WALL + r, size_m - WALL - r, 2))
        if min(math.hypot(ox - sx, oy - sy), math.hypot(ox - gx, oy - gy)) > r + 0.6:
            circles.append(CircleObstacle(ox, oy, r))
    start = RobotState(float(sx), float(sy), float(rng.uniform(-math.pi, math.pi)))
    return _spec(f"random-{n_obstacles}-{seed}", size_m, size_m, start, (float(gx), float(gy)),
                 circles=circles, step_limit=step_limit, seed=seed)


def training_curriculum(episode: int, seed: int = 0) -> ScenarioSpec:
    """Episode ``i`` draws world kind ``i mod 3`` with a fresh placement."""
    return training_world(episode % 3, seed * 100_003 + episode)


def held_out_worlds(episode: int, seed: int = 0) -> ScenarioSpec:
    """Evaluation placements disjoint from every training seed."""
    return training_world(episode % 3, HELD_OUT_SEED_OFFSET + seed * 100_003 + episode)


# --------------------------------------------------------------------------
# C1-C4 analogs

DOOR_WIDTH_M = 0.9


def c1_doorway(seed: int = 0) -> ScenarioSpec:
    """Two rooms split by a wall with a 0.9 m doorway near the top; the
    route goes up one room, through the door and back down the other."""
    rng = np.random.default_rng([1, seed])
    w, h = 8.0, 6.0
    door_lo = 4.4
    wall = [RectObstacle(3.9, 0.0, 4.1, door_lo), RectObstacle(3.9, door_lo + DOOR_WIDTH_M, 4.1, h)]
    sx = 2.5 + rng.uniform(-0.2, 0.2)
    start = RobotState(sx, 1.0, math.pi / 2)
    goal = (5.5 + rng.uniform(-0.2, 0.2), 1.0)
    return _spec(f"C1-{seed}", w, h, start, goal, rects=wall, step_limit=300, seed=seed)


def c2_unexpected_obstacle(seed: int = 0, appear_time_s: float = 0.2) -> ScenarioSpec:
    """Straight route; a disk lands on the global plan just after planning."""
    rng = np.random.default_rng([2, seed])
    w, h = 10.0, 6.0
    y = 3.0 + rng.uniform(-0.1, 0.1)
    obstacle = CircleObstacle(5.0 + rng.uniform(-0.3, 0.3), y, 0.35, appear_time_s)
    return _spec(f"C2-{seed}", w, h, RobotState(1.0, y, 0.0), (9.0, y), circles=[obstacle],
                 step_limit=300, seed=seed)


def c3_head_on(seed: int = 0, halt_distance_m: float = 1.0) -> ScenarioSpec:
    """A pedestrian walks down the robot's route toward it and halts when
    within ``halt_distance_m`` of the robot."""
    rng = np.random.default_rng([3, seed])
    w, h = 10.0, 6.0
    y = 3.0
    speed = rng.uniform(1.0, 1.4)
    ped = MovingObstacle(0.3, [(8.0, y + rng.uniform(-0.1, 0.1)), (1.0, y)], [speed],
                         start_time_s=rng.uniform(0.0, 0.6), halt_distance_m=halt_distance_m)
    return _spec(f"C3-{seed}", w, h, RobotState(1.0, y, 0.0), (9.0, y), movers=[ped],
                 step_limit=300, seed=seed)


def c4_crossing(seed: int = 0) -> ScenarioSpec:
    """A pedestrian crosses the route perpendicularly mid-way."""
    rng = np.random.default_rng([4, seed])
    w, h = 10.0, 6.0
    y = 3.0
    x = 5.0 + rng.uniform(-0.5, 0.5)
    speed = rng.uniform(0.6, 1.0)
    ped = MovingObstacle(0.3, [(x, 5.5), (x, 0.5)], [speed], start_time_s=rng.uniform(1.0, 2.5))
    return _spec(f"C4-{seed}", w, h, RobotState(1.0, y, 0.0), (9.0, y), movers=[ped],
                 step_limit=300, seed=seed)


SUITE = {"C1": c1_doorway, "C2": c2_unexpected_obstacle, "C3": c3_head_on, "C4": c4_crossing}


def scenario_suite(seed: int = 0) -> dict:
    """Named C1-C4 scenarios for one seed."""
    return {name: make(seed) for name, make in SUITE.items()}
