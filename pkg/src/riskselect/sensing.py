"""Occlusion-aware BEV rendering by 2D ray marching.

Stand-in for LiDAR BEV features: each ray from the sensor marks the cells it
crosses as visible and deposits one hit on the first blocked cell, where it
stops. The roadside unit is mounted high, so static obstacles do not block
it, but other road users still do.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (CellMask, GridSpec, DEFAULT_SPEC, OccupancyGrid, Point2, RigidTransform2D,
                   footprint_cells, rect_cells, world_to_cell_array)
from .scenario import Scenario

DEFAULT_RAYS = 720
DEFAULT_RANGE = 60.0


class Sensor(enum.Enum):
    EGO = "Ego"
    INFRA = "Infra"


@dataclass(frozen=True, eq=False)
class SensorView:
    occupancy: OccupancyGrid
    visible: CellMask
    sensor_pose: Point2
    # maps grid coordinates to world coordinates; identity for world-anchored grids
    grid_to_world: RigidTransform2D = field(default_factory=RigidTransform2D.identity)

    def __post_init__(self):
        self.occupancy.same_spec(self.visible)
        if ((self.occupancy.cells > 0) & ~self.visible.cells).any():
            raise ValueError("occupied cell outside the visible mask")

    @property
    def spec(self) -> GridSpec:
        return self.occupancy.spec


def blocker_raster(scenario: Scenario, frame: int, spec: GridSpec, include_obstacles: bool = True,
                   exclude_ids: Sequence[int] = (), world_to_grid: Optional[RigidTransform2D] = None) -> np.ndarray:
    blocked = np.zeros(spec.shape, dtype=bool)
    for a in scenario.agents:
        if a.id in exclude_ids:
            continue
        pos, heading = scenario.pose(a.id, frame)
        rows, cols = footprint_cells(spec, pos, heading, a.state.length, a.state.width, world_to_grid)
        blocked[rows, cols] = True
    if include_obstacles:
        for r in scenario.static_obstacles:
            rows, cols = rect_cells(spec, r.x_min, r.y_min, r.x_max, r.y_max, world_to_grid)
            blocked[rows, cols] = True
    return blocked


def cast_rays(blocked: np.ndarray, spec: GridSpec, origin: Point2, n_rays: int = DEFAULT_RAYS,
              max_range: float = DEFAULT_RANGE):
    """March ``n_rays`` evenly spaced rays over a blocker raster.

    Returns ``(occupancy, visible)`` arrays. Cells are accumulated with
    commutative adds, so the result does not depend on ray order.
    """
    if n_rays < 8:
        raise ValueError("n_rays must be >= 8")
    step = spec.cell_size / 2.0
    n_steps = int(np.floor(max_range / step)) + 1
    angles = 2.0 * np.pi * np.arange(n_rays) / n_rays
    dists = step * np.arange(n_steps)
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    pts = np.asarray(origin, dtype=np.float64) + dists[None, :, None] * dirs[:, None, :]
    rows, cols, valid = world_to_cell_array(spec, pts)
    rows_c = np.where(valid, rows, 0)
    cols_c = np.where(valid, cols, 0)
    hit = valid & blocked[rows_c, cols_c]
    any_hit = hit.any(axis=1)
    first = np.where(any_hit, hit.argmax(axis=1), n_steps)
    reached = valid & (np.arange(n_steps)[None, :] <= first[:, None])

    visible = np.zeros(spec.shape, dtype=bool)
    visible[rows[reached], cols[reached]] = True
    occupancy = np.zeros(spec.shape, dtype=np.int64)
    ray_ids = np.nonzero(any_hit)[0]
    np.add.at(occupancy, (rows[ray_ids, first[ray_ids]], cols[ray_ids, first[ray_ids]]), 1)
    return occupancy, visible


def render_view(scenario: Scenario, frame: int, sensor: Sensor = Sensor.EGO, spec: GridSpec = DEFAULT_SPEC,
                n_rays: int = DEFAULT_RAYS, max_range: float = DEFAULT_RANGE, ego_centric: bool = False,
                include_obstacles: Optional[bool] = None) -> SensorView:
    """Render one sensor's BEV view of ``scenario`` at ``frame``.

    With ``ego_centric`` the grid is attached to the ego pose at ``frame``
    instead of the world origin.
    """
    if not 0 <= frame < scenario.frames:
        raise ValueError(f"frame {frame} outside scenario (0..{scenario.frames - 1})")
    sensor = Sensor(sensor)
    if ego_centric:
        pos, heading = scenario.pose(scenario.ego_id, frame)
        grid_to_world = RigidTransform2D.from_yaw(heading, pos.x, pos.y)
    else:
        grid_to_world = RigidTransform2D.identity()
    world_to_grid = grid_to_world.inverse()

    if sensor is Sensor.EGO:
        origin_w = scenario.agent(scenario.ego_id).trajectory.position(frame)
        exclude = (scenario.ego_id,)
        obstacles = True if include_obstacles is None else include_obstacles
    else:
        origin_w = scenario.infra_pose.translation
        exclude = ()
        obstacles = False if include_obstacles is None else include_obstacles
    blocked = blocker_raster(scenario, frame, spec, obstacles, exclude, world_to_grid)
    origin = world_to_grid.apply(origin_w)
    occ, vis = cast_rays(blocked, spec, origin, n_rays, max_range)
    return SensorView(OccupancyGrid(spec, occ), CellMask(spec, vis), Point2(*origin_w), grid_to_world)


def warp_occupancy(view: SensorView, target_grid_to_world: RigidTransform2D) -> np.ndarray:
    """Resample a view's occupancy into another grid frame (nearest cell, pull)."""
    spec = view.spec
    if view.grid_to_world == target_grid_to_world:
        return np.array(view.occupancy.cells)
    xs, ys = spec.cell_centers()
    pts = np.stack([xs, ys], axis=-1)
    src = view.grid_to_world.inverse().compose(target_grid_to_world).apply_array(pts)
    rows, cols, valid = world_to_cell_array(spec, src)
    out = np.zeros(spec.shape, dtype=np.int64)
    out[valid] = view.occupancy.cells[rows[valid], cols[valid]]
    return out


def accumulate_temporal(views: Sequence[SensorView]) -> OccupancyGrid:
    """Sum occupancies after warping every view into the latest view's grid frame."""
    if not views:
        raise ValueError("need at least one view")
    latest = views[-1]
    for v in views:
        latest.occupancy.same_spec(v.occupancy)
    total = np.zeros(latest.spec.shape, dtype=np.int64)
    for v in views:
        total += warp_occupancy(v, latest.grid_to_world)
    return OccupancyGrid(latest.spec, total)
