from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.extra.numpy import arrays
from hypothesis import strategies as st

from riskselect.comm import FeatureBlockSet, blockify
from riskselect.core import DEFAULT_SPEC, CellMask, GridSpec, OccupancyGrid, Point2, SpecMismatchError, footprint_cells
from riskselect.fusion import DetectionBox, box_iou, detect, footprint_bounds, fuse, gt_boxes, match_detections
from riskselect.scenario import Template, generate_scenario
from riskselect.sensing import Sensor, render_view

SHAPE = DEFAULT_SPEC.shape


def _grid(blobs):
    cells = np.zeros(SHAPE, dtype=np.int64)
    for (r0, r1, c0, c1, v) in blobs:
        cells[r0:r1, c0:c1] = v
    return OccupancyGrid(DEFAULT_SPEC, cells)


def _box(x0, y0, x1, y1, conf=1.0, seed=(0, 0)):
    return DetectionBox(Point2((x0 + x1) / 2, (y0 + y1) / 2), ((x1 - x0) / 2, (y1 - y0) / 2), conf, None, seed)


@pytest.fixture(scope="module")
def occluded_views():
    s = generate_scenario(Template.OCCLUDED_CROSSING, 1, 3)
    return s, render_view(s, 1, Sensor.EGO), render_view(s, 1, Sensor.INFRA)


class TestFuse:
    def test_no_blocks_keeps_ego(self, occluded_views):
        _, ego, _ = occluded_views
        assert fuse(ego, FeatureBlockSet(4, (), DEFAULT_SPEC)) == ego.occupancy

    def test_full_blocks_is_cellwise_max(self, occluded_views):
        _, ego, infra = occluded_views
        full = blockify(CellMask(DEFAULT_SPEC, np.ones(SHAPE, dtype=bool)), infra.occupancy)
        fused = fuse(ego, full)
        assert np.array_equal(fused.cells, np.maximum(ego.occupancy.cells, infra.occupancy.cells))

    def test_blocks_over_hidden_agent_reveal_it(self, occluded_views):
        s, ego, infra = occluded_views
        a = s.agent(1)
        pos, h = s.pose(1, 1)
        rows, cols = footprint_cells(DEFAULT_SPEC, pos, h, a.state.length, a.state.width)
        assert ego.occupancy.cells[rows, cols].sum() == 0
        m = np.zeros(SHAPE, dtype=bool)
        m[rows, cols] = True
        fused = fuse(ego, blockify(CellMask(DEFAULT_SPEC, m), infra.occupancy))
        assert fused.cells[rows, cols].sum() > 0

    def test_cells_outside_blocks_untouched(self, occluded_views):
        _, ego, infra = occluded_views
        m = np.zeros(SHAPE, dtype=bool)
        m[40:60, 60:80] = True
        blocks = blockify(CellMask(DEFAULT_SPEC, m), infra.occupancy)
        fused = fuse(ego, blocks)
        outside = ~blocks.coverage()
        assert np.array_equal(fused.cells[outside], ego.occupancy.cells[outside])

    def test_spec_mismatch(self, occluded_views):
        _, ego, _ = occluded_views
        other = GridSpec(-12.8, 12.8, -12.8, 12.8, 0.8)
        with pytest.raises(SpecMismatchError):
            fuse(ego, FeatureBlockSet(4, (), other))


class TestDetect:
    def test_empty(self):
        assert detect(OccupancyGrid.zeros()) == []

    def test_three_by_three_blob(self):
        boxes = detect(_grid([(10, 13, 20, 23, 1)]), min_cells=2)
        assert len(boxes) == 1
        assert boxes[0].half_extent == pytest.approx((1.2, 1.2))
        assert boxes[0].confidence == 1.0

    def test_gap_column_splits(self):
        boxes = detect(_grid([(10, 13, 20, 23, 1), (10, 13, 24, 27, 1)]))
        assert len(boxes) == 2

    def test_diagonal_contact_does_not_merge(self):
        boxes = detect(_grid([(10, 12, 10, 12, 1), (12, 14, 12, 14, 1)]))
        assert len(boxes) == 2

    def test_small_components_dropped(self):
        assert detect(_grid([(5, 6, 5, 7, 3)])) == []

    def test_confidence_is_relative_evidence(self):
        boxes = detect(_grid([(10, 13, 20, 23, 2), (40, 42, 40, 42, 3)]))
        assert [b.confidence for b in boxes] == [1.0, pytest.approx(12 / 18)]

    def test_ties_by_seed(self):
        boxes = detect(_grid([(40, 42, 40, 42, 1), (10, 12, 10, 12, 1)]))
        assert [b.seed_cell for b in boxes] == [(10, 10), (40, 40)]

    def test_min_count(self):
        boxes = detect(_grid([(10, 13, 20, 23, 1), (30, 33, 30, 33, 2)]), min_count=2)
        assert len(boxes) == 1

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.int64, (24, 24), elements=st.integers(0, 2)))
    def test_scan_order_invariance(self, small):
        spec = GridSpec(0.0, 19.2, 0.0, 19.2, 0.8)
        direct = detect(OccupancyGrid(spec, small))
        flipped = detect(OccupancyGrid(spec, small[::-1, ::-1]))
        # mirror the flipped boxes back through the grid center
        mirrored = sorted((round(19.2 - b.center.x, 9), round(19.2 - b.center.y, 9), b.half_extent, b.confidence)
                          for b in flipped)
        ref = sorted((round(b.center.x, 9), round(b.center.y, 9), b.half_extent, b.confidence) for b in direct)
        assert len(mirrored) == len(ref)
        for m, r in zip(mirrored, ref):
            assert m[0] == pytest.approx(r[0]) and m[1] == pytest.approx(r[1])
            assert m[2] == pytest.approx(r[2]) and m[3] == pytest.approx(r[3])


class TestMatching:
    def test_exact_box_matches(self):
        out = match_detections([_box(0, 0, 4, 2)], [(7, (0.0, 0.0, 4.0, 2.0))])
        assert out[0][1] == 7 and out[0][0].matched_gt == 7

    def test_below_threshold(self):
        # IoU 0.3: overlap 3 of union 10
        a, b = (0.0, 0.0, 6.5, 1.0), (3.5, 0.0, 10.0, 1.0)
        assert box_iou(a, b) == pytest.approx(0.3)
        assert match_detections([_box(*a)], [(1, b)], iou_threshold=0.5)[0][1] is None

    def test_greedy_uniqueness(self):
        gt = [(3, (0.0, 0.0, 4.0, 2.0))]
        out = match_detections([_box(0, 0, 4, 2, 0.4, (1, 1)), _box(0, 0, 4, 2, 0.9, (2, 2))], gt)
        assert [(b.confidence, m) for b, m in out] == [(0.9, 3), (0.4, None)]

    def test_threshold_domain(self):
        with pytest.raises(ValueError):
            match_detections([], [], iou_threshold=1.0)

    def test_footprint_bounds_rotated(self):
        b = footprint_bounds(Point2(0, 0), np.pi / 2, 4.0, 2.0)
        assert b == pytest.approx((-1.0, -2.0, 1.0, 2.0))

    def test_gt_boxes_skip_ego(self, occluded_views):
        s, _, _ = occluded_views
        assert [i for i, _ in gt_boxes(s, 1)] == [a.id for a in s.targets]
        assert len(gt_boxes(s, 1, include_ego=True)) == len(s.agents)

    def test_box_extent_positive(self):
        with pytest.raises(ValueError):
            DetectionBox(Point2(0, 0), (0.0, 1.0), 1.0)
