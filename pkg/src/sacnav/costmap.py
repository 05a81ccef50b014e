"""Occupancy grids, the inflation layer and observation renderers.

Image conventions
-----------------
Polar costmap: array ``(3, A, D)``. Row ``a`` is the bearing
``-pi + a * 2pi/A`` relative to the robot yaw (so bearing 0 sits at row
``A/2``); column ``j`` is the range ``j * r_max / D``. Channel 0 carries the
inflated obstacle cost divided by 254, channels 1 and 2 carry the waypoint
square (value 1).

Cartesian costmap: array ``(C, H, W)`` over a square window of side
``2 * r_max`` centred on the robot, image row 0 at the top (+y), column 0
at the left (-x).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .gridworld import LETHAL, RobotState, ScenarioSpec, advance_moving_obstacles, wrap_angle

INSCRIBED = 253


@dataclass
class OccupancyGrid:
    cost: np.ndarray  # (height, width) uint8, row = y index
    resolution: float
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        self.cost = np.asarray(self.cost)
        if self.cost.ndim != 2:
            raise ValueError(f"cost must be 2-D, got shape {self.cost.shape}")
        if self.cost.size and (self.cost.min() < 0 or self.cost.max() > 255):
            raise ValueError("costs must lie in [0, 255]")
        self.cost = self.cost.astype(np.uint8)
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    @classmethod
    def empty(cls, width: int, height: int, resolution: float, origin=(0.0, 0.0)) -> "OccupancyGrid":
        return cls(np.zeros((height, width), np.uint8), resolution, origin)

    @property
    def width(self) -> int:
        return self.cost.shape[1]

    @property
    def height(self) -> int:
        return self.cost.shape[0]

    @property
    def lethal(self) -> np.ndarray:
        return self.cost >= LETHAL

    def contains_point(self, x: float, y: float) -> bool:
        ox, oy = self.origin
        return (ox <= x < ox + self.width * self.resolution
                and oy <= y < oy + self.height * self.resolution)

    def world_to_cell(self, x: float, y: float) -> tuple:
        """(row, col) of the cell containing a world point (may be out of range)."""
        return (int(math.floor((y - self.origin[1]) / self.resolution)),
                int(math.floor((x - self.origin[0]) / self.resolution)))

    def cell_center(self, row: int, col: int) -> tuple:
        return (self.origin[0] + (col + 0.5) * self.resolution,
                self.origin[1] + (row + 0.5) * self.resolution)

    def cell_centers(self) -> tuple:
        """Meshgrid (X, Y) of cell-centre coordinates, each shaped like ``cost``."""
        xs = self.origin[0] + (np.arange(self.width) + 0.5) * self.resolution
        ys = self.origin[1] + (np.arange(self.height) + 0.5) * self.resolution
        return np.meshgrid(xs, ys)

    def sample(self, x: np.ndarray, y: np.ndarray, outside: int = 0) -> np.ndarray:
        """Nearest-cell lookup of costs at world points."""
        c = np.floor((x - self.origin[0]) / self.resolution).astype(np.int64)
        r = np.floor((y - self.origin[1]) / self.resolution).astype(np.int64)
        ok = (c >= 0) & (c < self.width) & (r >= 0) & (r < self.height)
        out = np.full(np.shape(x), outside, dtype=np.uint8)
        out[ok] = self.cost[r[ok], c[ok]]
        return out

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.cost.copy(), self.resolution, self.origin)

    def to_pgm(self, path) -> None:
        """Binary PGM (P5, maxval 255); first image row is the top (max y) of the map."""
        img = np.flipud(self.cost)
        header = f"P5\n{self.width} {self.height}\n255\n".encode()
        Path(path).write_bytes(header + img.tobytes())

    @classmethod
    def from_pgm(cls, path, resolution: float, origin=(0.0, 0.0)) -> "OccupancyGrid":
        data = Path(path).read_bytes()
        parts = data.split(maxsplit=4)
        if parts[0] != b"P5":
            raise ValueError("not a binary PGM")
        w, h = int(parts[1]), int(parts[2])
        img = np.frombuffer(parts[4][:w * h], np.uint8).reshape(h, w)
        return cls(np.flipud(img).copy(), resolution, origin)


@dataclass(frozen=True)
class InflationParams:
    cost_scaling_factor: float = 1.5
    inflation_radius: float = 1.0
    inscribed_radius: float = 0.25

    def __post_init__(self):
        if min(self.cost_scaling_factor, self.inflation_radius, self.inscribed_radius) < 0:
            raise ValueError("inflation parameters must be non-negative")
        if self.inflation_radius < self.inscribed_radius:
            raise ValueError("inflation_radius must be >= inscribed_radius")


# --------------------------------------------------------------------------
# rasterization and inflation


def _stamp_disk(cost: np.ndarray, grid: OccupancyGrid, cx: float, cy: float, radius: float) -> None:
    res = grid.resolution
    r0, c0 = grid.world_to_cell(cx - radius, cy - radius)
    r1, c1 = grid.world_to_cell(cx + radius, cy + radius)
    r0, c0 = max(r0, 0), max(c0, 0)
    r1, c1 = min(r1, grid.height - 1), min(c1, grid.width - 1)
    if r0 > r1 or c0 > c1:
        return
    ys = grid.origin[1] + (np.arange(r0, r1 + 1) + 0.5) * res
    xs = grid.origin[0] + (np.arange(c0, c1 + 1) + 0.5) * res
    inside = (xs[None, :] - cx) ** 2 + (ys[:, None] - cy) ** 2 <= radius ** 2
    cost[r0:r1 + 1, c0:c1 + 1][inside] = LETHAL


def rasterize(spec: ScenarioSpec, t: float = 0.0,
              mover_positions: Optional[Sequence[tuple]] = None) -> OccupancyGrid:
    """Ground-truth occupancy at time ``t``: lethal obstacles, zero elsewhere.

    A cell is occupied when its centre lies inside an obstacle. Obstacles
    with ``appear_time_s > t`` are left out. ``mover_positions`` overrides
    the scheduled mover centres (used when movers have halted).
    """
    grid = OccupancyGrid.empty(spec.width_cells, spec.height_cells, spec.resolution_m, spec.origin)
    cost = grid.cost
    X, Y = None, None
    for r in spec.rects:
        if r.appear_time_s > t:
            continue
        if X is None:
            X, Y = grid.cell_centers()
        cost[(X >= r.xmin) & (X <= r.xmax) & (Y >= r.ymin) & (Y <= r.ymax)] = LETHAL
    for c in spec.circles:
        if c.appear_time_s <= t:
            _stamp_disk(cost, grid, c.x, c.y, c.radius_m)
    if spec.movers:
        if mover_positions is None:
            mover_positions = advance_moving_obstacles(spec, t)
        for m, (mx, my) in zip(spec.movers, mover_positions):
            _stamp_disk(cost, grid, mx, my, m.radius_m)
    return grid


def distance_to_lethal(grid: OccupancyGrid, method: str = "auto") -> np.ndarray:
    """Euclidean distance (m) from every cell centre to the nearest lethal cell centre.

    ``inf`` everywhere when the grid has no lethal cell. ``method`` is
    ``"brute"``, ``"edt"`` or ``"auto"`` (brute force while cells x lethal
    cells stays below four million).
    """
    lethal = grid.lethal
    if not lethal.any():
        return np.full(lethal.shape, np.inf)
    if method == "auto":
        method = "brute" if lethal.size * np.count_nonzero(lethal) <= 4_000_000 else "edt"
    if method == "edt":
        return ndimage.distance_transform_edt(~lethal) * grid.resolution
    if method != "brute":
        raise ValueError(f"unknown method {method!r}")
    lr, lc = np.nonzero(lethal)
    rr, cc = np.indices(lethal.shape)
    d2 = (rr.reshape(-1, 1) - lr) ** 2 + (cc.reshape(-1, 1) - lc) ** 2
    return np.sqrt(d2.min(axis=1)).reshape(lethal.shape) * grid.resolution


def inflation_cost(d: np.ndarray, params: InflationParams) -> np.ndarray:
    """Cost as a function of distance to the nearest lethal cell (before max with original)."""
    d = np.asarray(d, dtype=float)
    out = np.zeros(d.shape)
    out[d < params.inscribed_radius] = LETHAL
    band = (d >= params.inscribed_radius) & (d <= params.inflation_radius)
    out[band] = np.round(INSCRIBED * np.exp(-params.cost_scaling_factor
                                            * (d[band] - params.inscribed_radius)))
    out[d == 0] = LETHAL
    return out


def inflate(grid: OccupancyGrid, params: InflationParams = InflationParams(),
            method: str = "auto") -> OccupancyGrid:
    """Spread exponentially decaying cost outward from lethal cells."""
    d = distance_to_lethal(grid, method)
    cost = np.maximum(grid.cost, inflation_cost(d, params).astype(np.uint8))
    return OccupancyGrid(cost, grid.resolution, grid.origin)


# --------------------------------------------------------------------------
# observation renderers


def normalized_cost(cost: np.ndarray) -> np.ndarray:
    return np.minimum(cost.astype(np.float32) / 254.0, 1.0)


def polar_bins(a_bins: int, d_bins: int, r_max: float) -> tuple:
    """Bearing (relative to yaw) and range of every polar pixel centre."""
    bearings = -math.pi + np.arange(a_bins) * (2.0 * math.pi / a_bins)
    ranges = np.arange(d_bins) * (r_max / d_bins)
    return bearings, ranges


def waypoint_bin(robot: RobotState, waypoint, a_bins: int, d_bins: int, r_max: float) -> tuple:
    """(row, col) of the waypoint marker centre; range clamps to the last column."""
    dx, dy = waypoint[0] - robot.x, waypoint[1] - robot.y
    bearing = wrap_angle(math.atan2(dy, dx) - robot.yaw)
    dist = math.hypot(dx, dy)
    row = int(round((bearing + math.pi) / (2.0 * math.pi / a_bins))) % a_bins
    col = min(int(round(dist / (r_max / d_bins))), d_bins - 1)
    return row, col


def _draw_square(img: np.ndarray, row: int, col: int, k: int, wrap_rows: bool) -> None:
    """k x k marker in channels 1 and 2; rows wrap (polar) or clamp (cartesian)."""
    _, h, w = img.shape
    half = k // 2
    c0 = min(max(col - half, 0), w - k)
    if wrap_rows:
        rows = [(row - half + i) % h for i in range(k)]
    else:
        r0 = min(max(row - half, 0), h - k)
        rows = list(range(r0, r0 + k))
    img[1:3, rows, c0:c0 + k] = 1.0


def render_polar(grid: OccupancyGrid, robot: RobotState, waypoint, dims=(64, 64),
                 r_max: float = 4.0, marker: int = 3) -> np.ndarray:
    """Polar costmap observation ``(3, A, D)`` around the robot."""
    a_bins, d_bins = dims
    bearings, ranges = polar_bins(a_bins, d_bins, r_max)
    ang = robot.yaw + bearings[:, None]
    px = robot.x + ranges[None, :] * np.cos(ang)
    py = robot.y + ranges[None, :] * np.sin(ang)
    img = np.zeros((3, a_bins, d_bins), np.float32)
    img[0] = normalized_cost(grid.sample(px, py))
    row, col = waypoint_bin(robot, waypoint, a_bins, d_bins, r_max)
    _draw_square(img, row, col, marker, wrap_rows=True)
    return img


CARTESIAN_VARIANTS = ("rotation", "arrow", "channel")


def _cartesian_offsets(dims, side: float) -> tuple:
    h, w = dims
    px = side / w
    py = side / h
    lx = (np.arange(w) + 0.5) * px - side / 2.0
    ly = side / 2.0 - (np.arange(h) + 0.5) * py
    return np.meshgrid(lx, ly)


def arrow_mask(dims, yaw: float, length_px: Optional[float] = None) -> np.ndarray:
    """Pixels inside an isoceles triangle at the image centre pointing along ``yaw``."""
    h, w = dims
    if length_px is None:
        length_px = max(3.0, min(h, w) / 6.0)
    cx, cy = w / 2.0, h / 2.0
    # image coordinates: x to the right, y downward
    ux, uy = math.cos(yaw), -math.sin(yaw)
    apex = (cx + ux * length_px / 2.0, cy + uy * length_px / 2.0)
    back = (cx - ux * length_px / 2.0, cy - uy * length_px / 2.0)
    half = length_px / 2.5
    b1 = (back[0] - uy * half, back[1] + ux * half)
    b2 = (back[0] + uy * half, back[1] - ux * half)
    xx, yy = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)

    def edge(p, q):
        return (q[0] - p[0]) * (yy - p[1]) - (q[1] - p[1]) * (xx - p[0])

    e1, e2, e3 = edge(apex, b1), edge(b1, b2), edge(b2, apex)
    return ((e1 >= 0) & (e2 >= 0) & (e3 >= 0)) | ((e1 <= 0) & (e2 <= 0) & (e3 <= 0))


def render_cartesian(grid: OccupancyGrid, robot: RobotState, waypoint, variant: str = "rotation",
                     dims=(64, 64), side: float = 8.0, marker: int = 3) -> np.ndarray:
    """Robot-centred Cartesian costmap with orientation encoded per ``variant``.

    ``rotation`` resamples the window in the robot frame (heading points
    right), ``arrow`` marks the heading with a triangle in channel 2, and
    ``channel`` appends a constant plane ``(yaw + pi) / 2pi``.
    """
    if variant not in CARTESIAN_VARIANTS:
        raise ValueError(f"unknown cartesian variant {variant!r}")
    h, w = dims
    lx, ly = _cartesian_offsets(dims, side)
    if variant == "rotation":
        c, s = math.cos(robot.yaw), math.sin(robot.yaw)
        wx = robot.x + c * lx - s * ly
        wy = robot.y + s * lx + c * ly
        rel = (waypoint[0] - robot.x, waypoint[1] - robot.y)
        wl = (c * rel[0] + s * rel[1], -s * rel[0] + c * rel[1])
    else:
        wx, wy = robot.x + lx, robot.y + ly
        wl = (waypoint[0] - robot.x, waypoint[1] - robot.y)
    img = np.zeros((4 if variant == "channel" else 3, h, w), np.float32)
    img[0] = normalized_cost(grid.sample(wx, wy))
    col = int(math.floor((wl[0] + side / 2.0) / (side / w)))
    row = int(math.floor((side / 2.0 - wl[1]) / (side / h)))
    _draw_square(img, min(max(row, 0), h - 1), min(max(col, 0), w - 1), marker, wrap_rows=False)
    if variant == "arrow":
        img[2][arrow_mask(dims, robot.yaw)] = 1.0
    elif variant == "channel":
        img[3] = (robot.yaw + math.pi) / (2.0 * math.pi)
    return img


def stack_frames(history: Sequence[np.ndarray], k: int) -> np.ndarray:
    """Channel-concatenate the ``k`` newest frames, oldest first.

    Short histories are padded by repeating the oldest available frame.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(history) == 0:
        raise ValueError("cannot stack an empty frame history")
    frames = list(history[-k:])
    frames = [frames[0]] * (k - len(frames)) + frames
    return np.concatenate(frames, axis=0)


@dataclass(frozen=True)
class ObservationConfig:
    """Which image the agent sees and at what size."""

    kind: str = "polar"  # polar | rotation | arrow | channel
    dims: tuple = (64, 64)
    r_max_m: float = 4.0
    marker_px: int = 3
    frame_stack: int = 1

    def __post_init__(self):
        if self.kind not in ("polar",) + CARTESIAN_VARIANTS:
            raise ValueError(f"unknown observation kind {self.kind!r}")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    @property
    def base_channels(self) -> int:
        return 4 if self.kind == "channel" else 3

    @property
    def shape(self) -> tuple:
        return (self.base_channels * self.frame_stack,) + self.dims


def render_observation(grid: OccupancyGrid, robot: RobotState, waypoint,
                       cfg: ObservationConfig) -> np.ndarray:
    """Single frame for ``cfg`` (frame stacking is the caller's job)."""
    if cfg.kind == "polar":
        return render_polar(grid, robot, waypoint, cfg.dims, cfg.r_max_m, cfg.marker_px)
    return render_cartesian(grid, robot, waypoint, cfg.kind, cfg.dims, 2.0 * cfg.r_max_m, cfg.marker_px)


# --------------------------------------------------------------------------
# debug exports


def save_observation_png(obs: np.ndarray, path, scale: int = 4) -> None:
    """First three channels as RGB, nearest-neighbour upscaled by ``scale``."""
    from PIL import Image

    rgb = np.clip(np.moveaxis(obs[:3], 0, -1), 0.0, 1.0)
    rgb = (rgb * 255).round().astype(np.uint8)
    rgb = np.repeat(np.repeat(rgb, scale, axis=0), scale, axis=1)
    Image.fromarray(rgb, "RGB").save(path)


def save_observation_f32(obs: np.ndarray, path) -> None:
    """Raw little-endian float32 in C order (channels, rows, cols); no header."""
    Path(path).write_bytes(np.ascontiguousarray(obs, dtype="<f4").tobytes())


def load_observation_f32(path, shape) -> np.ndarray:
    return np.frombuffer(Path(path).read_bytes(), dtype="<f4").reshape(shape).copy()
