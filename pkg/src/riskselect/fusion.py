"""Fuse received blocks into the ego grid and extract axis-aligned detections."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .comm import FeatureBlockSet
from .core import OccupancyGrid, Point2, SpecMismatchError
from .scenario import Scenario
from .sensing import SensorView

DEFAULT_MIN_CELLS = 3
DEFAULT_MIN_COUNT = 1
DEFAULT_IOU = 0.2  # ray-cast returns cover only sensor-facing faces

_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


@dataclass(frozen=True)
class DetectionBox:
    center: Point2
    half_extent: Tuple[float, float]
    confidence: float
    matched_gt: Optional[int] = None
    seed_cell: Tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.half_extent[0] <= 0 or self.half_extent[1] <= 0:
            raise ValueError("half extents must be positive")

    @property
    def bounds(self) -> Tuple[float, float, float, float]:
        cx, cy = self.center
        hx, hy = self.half_extent
        return cx - hx, cy - hy, cx + hx, cy + hy


def fuse(ego: SensorView, received: FeatureBlockSet) -> OccupancyGrid:
    """Cellwise max of the ego occupancy and every received block payload."""
    spec = ego.spec
    if received.source_spec != spec:
        raise SpecMismatchError(f"block spec {received.source_spec} does not match ego grid {spec}")
    fused = np.array(ego.occupancy.cells)
    s = received.block_size
    for b in received.blocks:
        tile = np.asarray(b.payload, dtype=np.int64).reshape(s, s)
        win = fused[b.row * s:(b.row + 1) * s, b.col * s:(b.col + 1) * s]
        np.maximum(win, tile, out=win)
    return OccupancyGrid(spec, fused)


def detect(fused: OccupancyGrid, min_cells: int = DEFAULT_MIN_CELLS,
           min_count: int = DEFAULT_MIN_COUNT) -> List[DetectionBox]:
    """4-connected components of evidence cells, boxed tightly."""
    spec = fused.spec
    cells = fused.cells
    labels, n = ndimage.label(cells >= min_count, structure=_FOUR_CONNECTED)
    if n == 0:
        return []
    comps = []
    for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        member = labels[sl] == idx
        size = int(member.sum())
        if size < min_cells:
            continue
        evidence = int(cells[sl][member].sum())
        # seed cell: first member in row-major order, independent of labelling order
        rr, cc = np.nonzero(member)
        seed = (sl[0].start + int(rr[0]), sl[1].start + int(cc[0]))
        comps.append((evidence, seed, sl))
    if not comps:
        return []
    peak = max(c[0] for c in comps)
    boxes = []
    for evidence, seed, (rs, cs) in comps:
        x0 = spec.x_min + cs.start * spec.cell_size
        x1 = spec.x_min + cs.stop * spec.cell_size
        y0 = spec.y_min + rs.start * spec.cell_size
        y1 = spec.y_min + rs.stop * spec.cell_size
        boxes.append(DetectionBox(Point2(0.5 * (x0 + x1), 0.5 * (y0 + y1)),
                                  (0.5 * (x1 - x0), 0.5 * (y1 - y0)), evidence / peak, None, seed))
    boxes.sort(key=lambda b: (-b.confidence, b.seed_cell))
    return boxes


def box_iou(a: Tuple[float, float, float, float], b: Tuple[float, float, float, float]) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def footprint_bounds(center: Point2, heading: float, length: float, width: float):
    """Axis-aligned bounds of an oriented footprint."""
    c, s = abs(math.cos(heading)), abs(math.sin(heading))
    hx = 0.5 * (length * c + width * s)
    hy = 0.5 * (length * s + width * c)
    return center[0] - hx, center[1] - hy, center[0] + hx, center[1] + hy


def gt_boxes(scenario: Scenario, frame: int, include_ego: bool = False) -> List[Tuple[int, tuple]]:
    out = []
    for a in scenario.agents:
        if a.id == scenario.ego_id and not include_ego:
            continue
        pos, heading = scenario.pose(a.id, frame)
        out.append((a.id, footprint_bounds(pos, heading, a.state.length, a.state.width)))
    return out


def match_detections(boxes: Sequence[DetectionBox], gt_agents: Sequence[Tuple[int, tuple]],
                     iou_threshold: float = DEFAULT_IOU) -> List[Tuple[DetectionBox, Optional[int]]]:
    """Greedy one-to-one matching in descending confidence.

    ``gt_agents`` holds ``(agent_id, (x_min, y_min, x_max, y_max))`` pairs.
    """
    if not 0 < iou_threshold < 1:
        raise ValueError("iou_threshold must lie in (0, 1)")
    order = sorted(range(len(boxes)), key=lambda i: (-boxes[i].confidence, boxes[i].seed_cell))
    taken = set()
    result: List[Optional[Tuple[DetectionBox, Optional[int]]]] = [None] * len(boxes)
    for i in order:
        box = boxes[i]
        best, best_iou = None, iou_threshold
        for agent_id, bounds in gt_agents:
            if agent_id in taken:
                continue
            iou = box_iou(box.bounds, bounds)
            if iou >= best_iou and (best is None or iou > best_iou):
                best, best_iou = agent_id, iou
        if best is not None:
            taken.add(best)
        result[i] = (replace(box, matched_gt=best), best)
    return [result[i] for i in order]
