import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from sacnav.costmap import OccupancyGrid
from sacnav.gridworld import LETHAL, RobotState
from sacnav.reward import (RewardParams, WaypointGeometry, gaussian_penalty, progress_term, reward,
                           transition_reward)

P = RewardParams()


def brute_gaussian(grid, robot, sigma, hw):
    """Oracle: loop over every cell of the grid."""
    num = den = 0.0
    for r in range(grid.height):
        for c in range(grid.width):
            x, y = grid.cell_center(r, c)
            if abs(x - robot.x) <= hw + 1e-12 and abs(y - robot.y) <= hw + 1e-12:
                k = math.exp(-((x - robot.x) ** 2 + (y - robot.y) ** 2) / (2 * sigma ** 2))
                num += k * min(grid.cost[r, c] / 254.0, 1.0)
                den += k
    return num / den


@pytest.mark.parametrize("old, new, expect", [(1.0, 0.8, 0.2), (0.8, 1.0, -0.4), (0.5, 0.5, 0.0)])
def test_progress_term(old, new, expect):
    assert progress_term(old, new) == pytest.approx(expect, abs=1e-12)


def test_reward_examples():
    r, term = reward(WaypointGeometry(1.0, 0.5), WaypointGeometry(0.8, 0.3), False, 0.0, P)
    assert r == pytest.approx(0.4, abs=1e-12) and not term
    r, term = reward(WaypointGeometry(1.0, 0.2), WaypointGeometry(1.0, 0.2), True, 0.3, P)
    assert r == pytest.approx(-10.3, abs=1e-12) and term
    r, term = reward(WaypointGeometry(0.2, 0.1), WaypointGeometry(0.0, 0.1), False, 0.0, P)
    assert r == pytest.approx(10.2, abs=1e-12) and term


def test_collision_takes_precedence_over_goal():
    r, term = reward(WaypointGeometry(0.3, 0.0), WaypointGeometry(0.1, 0.0), True, 0.0, P)
    assert r == pytest.approx(0.2 - 10.0) and term


def test_gaussian_free_and_surrounded():
    g = OccupancyGrid.empty(40, 40, 0.1)
    assert gaussian_penalty(g, RobotState(2.0, 2.0, 0.0)) == 0.0
    g.cost[:] = LETHAL
    assert gaussian_penalty(g, RobotState(2.0, 2.0, 0.0)) == pytest.approx(1.0)


def test_gaussian_single_cell_at_sigma():
    g = OccupancyGrid.empty(40, 40, 0.1)
    robot = RobotState(2.05, 2.05, 0.0)  # on a cell centre
    g.cost[20, 25] = LETHAL  # 0.5 m = sigma to the right
    expect = brute_gaussian(g, robot, 0.5, 1.0)
    got = gaussian_penalty(g, robot)
    assert got == pytest.approx(expect, rel=1e-12)
    # closed form: e^(-1/2) over the kernel mass of the 21x21 window
    offs = (np.arange(-10, 11) * 0.1) ** 2
    mass = np.exp(-(offs[:, None] + offs[None, :]) / 0.5).sum()
    assert got == pytest.approx(math.exp(-0.5) / mass, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.3, 2.7), st.floats(0.3, 2.7))
def test_gaussian_matches_brute_force(seed, x, y):
    rng = np.random.default_rng(seed)
    g = OccupancyGrid(rng.integers(0, 255, (30, 30)).astype(np.uint8), 0.1)
    robot = RobotState(x, y, 0.0)
    assert gaussian_penalty(g, robot) == pytest.approx(brute_gaussian(g, robot, 0.5, 1.0), rel=1e-9, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.5, 3.5), st.floats(0.5, 3.5))
def test_gaussian_in_unit_interval_and_zero_iff_clear(seed, x, y):
    rng = np.random.default_rng(seed)
    g = OccupancyGrid.empty(40, 40, 0.1)
    g.cost[rng.random((40, 40)) < 0.01] = rng.integers(1, 255)
    robot = RobotState(x, y, 0.0)
    v = gaussian_penalty(g, robot)
    assert 0.0 <= v <= 1.0
    X, Y = g.cell_centers()
    window = (np.abs(X - x) <= 1.0) & (np.abs(Y - y) <= 1.0)
    assert (v == 0.0) == (not g.cost[window].any())


@given(st.floats(0.5, 5.0), st.floats(1e-3, 0.4), st.floats(-3.0, 3.0))
def test_moving_away_then_back_is_net_negative(d, delta, theta):
    assume(d - delta > P.goal_tolerance_m)
    toward, _ = reward(WaypointGeometry(d, theta), WaypointGeometry(d - delta, theta), False, 0.0, P)
    away, _ = reward(WaypointGeometry(d - delta, theta), WaypointGeometry(d, theta), False, 0.0, P)
    assert toward + away < 0


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-math.pi, math.pi), st.floats(-0.3, 0.3),
       st.floats(-0.3, 0.3), st.booleans())
def test_reward_translation_invariant(tx, ty, yaw, dx, dy, collision):
    # shift by whole cells so the grid content moves with the scene
    tx, ty = round(tx, 1), round(ty, 1)
    base = OccupancyGrid.empty(60, 60, 0.1)
    base.cost[28:31, 36:40] = LETHAL
    moved = OccupancyGrid(base.cost.copy(), 0.1, (tx, ty))
    a0, a1 = RobotState(3.0, 3.0, yaw), RobotState(3.0 + dx, 3.0 + dy, yaw + 0.1)
    b0, b1 = RobotState(3.0 + tx, 3.0 + ty, yaw), RobotState(3.0 + dx + tx, 3.0 + dy + ty, yaw + 0.1)
    r1 = transition_reward(a0, a1, (4.2, 3.6), base, collision)
    r2 = transition_reward(b0, b1, (4.2 + tx, 3.6 + ty), moved, collision)
    assert r1[1] == r2[1]
    assert r1[0] == pytest.approx(r2[0], abs=1e-9)


@given(st.floats(0.0, 3.0), st.floats(0.0, 3.0), st.floats(0, 3), st.floats(0, 3), st.booleans(),
       st.floats(0.0, 1.0))
def test_terminal_iff_sparse_term_fires(d0, d1, t0, t1, collision, g):
    r, term = reward(WaypointGeometry(d0, t0), WaypointGeometry(d1, t1), collision, g, P)
    dense = progress_term(d0, d1) + progress_term(t0, t1) - g
    fired = not math.isclose(r, dense, abs_tol=1e-9)
    assert term == fired


def test_params_validation():
    with pytest.raises(ValueError):
        RewardParams(r_max=0.0)
