from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskselect.core import (
    DEFAULT_SPEC, CellMask, GridSpec, Heatmap, OccupancyGrid, Point2, RigidTransform2D, SpecMismatchError,
    footprint_cells, mask_iou, read_pgm, transform_point, world_to_cell, world_to_cell_array, write_csv, write_pgm,
)

coords = st.floats(-1e3, 1e3, allow_nan=False)
yaws = st.floats(-math.pi, math.pi, allow_nan=False)


class TestTransform:
    def test_identity(self):
        assert transform_point(RigidTransform2D.identity(), Point2(3, 4)) == Point2(3, 4)

    def test_quarter_turn(self):
        p = transform_point(RigidTransform2D.from_yaw(math.pi / 2), Point2(1, 0))
        assert p.x == pytest.approx(0.0, abs=1e-15)
        assert p.y == pytest.approx(1.0)

    def test_pure_translation(self):
        assert transform_point(RigidTransform2D.from_yaw(0.0, 5, -2), Point2(1, 1)) == Point2(6, -1)

    def test_rejects_reflection(self):
        with pytest.raises(ValueError):
            RigidTransform2D(np.array([[1.0, 0.0], [0.0, -1.0]]))

    def test_rejects_scaling(self):
        with pytest.raises(ValueError):
            RigidTransform2D(2 * np.eye(2))

    @given(yaws, coords, coords, coords, coords)
    def test_inverse_round_trip(self, yaw, tx, ty, px, py):
        t = RigidTransform2D.from_yaw(yaw, tx, ty)
        back = transform_point(t.inverse(), transform_point(t, Point2(px, py)))
        assert back.x == pytest.approx(px, abs=1e-9)
        assert back.y == pytest.approx(py, abs=1e-9)

    @given(yaws, yaws, coords, coords)
    def test_compose_matches_sequential(self, a, b, px, py):
        t1 = RigidTransform2D.from_yaw(a, 1.5, -2.0)
        t2 = RigidTransform2D.from_yaw(b, -3.0, 0.25)
        p = Point2(px, py)
        lhs = t1.compose(t2).apply(p)
        rhs = t1.apply(t2.apply(p))
        assert lhs.x == pytest.approx(rhs.x, abs=1e-9)
        assert lhs.y == pytest.approx(rhs.y, abs=1e-9)

    def test_apply_array_matches_apply(self):
        t = RigidTransform2D.from_yaw(0.7, 3.0, -1.0)
        pts = np.array([[0.0, 0.0], [1.0, 2.0], [-4.0, 0.5]])
        out = t.apply_array(pts)
        for p, q in zip(pts, out):
            assert tuple(t.apply(p)) == pytest.approx(tuple(q), abs=1e-12)


class TestGridSpec:
    def test_default_shape(self):
        assert DEFAULT_SPEC.shape == (128, 128)

    def test_rejects_non_multiple_extent(self):
        with pytest.raises(ValueError):
            GridSpec(-1.0, 1.0, -1.0, 1.0, 0.3)


class TestWorldToCell:
    def test_lower_corner(self):
        assert world_to_cell(DEFAULT_SPEC, Point2(-51.2, -51.2)) == (0, 0)

    def test_max_edge_absent(self):
        assert world_to_cell(DEFAULT_SPEC, Point2(51.2, 0)) is None

    def test_origin(self):
        assert world_to_cell(DEFAULT_SPEC, Point2(0, 0)) == (64, 64)

    def test_row_is_y(self):
        assert world_to_cell(DEFAULT_SPEC, Point2(-51.2, 0.0)) == (64, 0)

    @given(st.floats(-51.2, 51.19, allow_nan=False), st.floats(-51.2, 51.19, allow_nan=False))
    def test_back_projection_within_half_cell(self, x, y):
        idx = world_to_cell(DEFAULT_SPEC, Point2(x, y))
        assert idx is not None
        c = DEFAULT_SPEC.cell_center(*idx)
        half = DEFAULT_SPEC.cell_size / 2
        assert abs(c.x - x) <= half + 1e-9 and abs(c.y - y) <= half + 1e-9

    @given(st.lists(st.tuples(st.floats(-60, 60), st.floats(-60, 60)), min_size=1, max_size=30))
    def test_vectorised_agrees(self, pts):
        rows, cols, valid = world_to_cell_array(DEFAULT_SPEC, np.array(pts))
        for (x, y), r, c, v in zip(pts, rows, cols, valid):
            idx = world_to_cell(DEFAULT_SPEC, Point2(x, y))
            assert (idx is not None) == bool(v)
            if v:
                assert idx == (r, c)


def _mask(cells):
    m = np.zeros(DEFAULT_SPEC.shape, dtype=bool)
    for r, c in cells:
        m[r, c] = True
    return CellMask(DEFAULT_SPEC, m)


class TestMaskIou:
    def test_identical(self):
        m = _mask([(1, 1), (2, 2)])
        assert mask_iou(m, m) == 1.0

    def test_disjoint(self):
        assert mask_iou(_mask([(1, 1)]), _mask([(5, 5)])) == 0.0

    def test_sixteen_sixteen_overlap_eight(self):
        a = _mask([(r, c) for r in range(4) for c in range(4)])
        b = _mask([(r, c) for r in range(2, 6) for c in range(4)])
        assert mask_iou(a, b) == pytest.approx(8 / 24)

    def test_both_empty_is_one(self):
        assert mask_iou(CellMask.zeros(), CellMask.zeros()) == 1.0

    def test_spec_mismatch(self):
        other = GridSpec(-8.0, 8.0, -8.0, 8.0, 0.8)
        with pytest.raises(SpecMismatchError):
            mask_iou(CellMask.zeros(), CellMask.zeros(other))

    @settings(max_examples=50)
    @given(st.sets(st.tuples(st.integers(0, 9), st.integers(0, 9)), min_size=1),
           st.sets(st.tuples(st.integers(0, 9), st.integers(0, 9)), min_size=1))
    def test_symmetric_and_one_iff_equal(self, a, b):
        ma, mb = _mask(a), _mask(b)
        assert mask_iou(ma, mb) == mask_iou(mb, ma)
        assert (mask_iou(ma, mb) == 1.0) == (a == b)


class TestGrids:
    def test_cells_are_read_only(self):
        h = Heatmap.zeros()
        with pytest.raises(ValueError):
            h.cells[0, 0] = 1.0

    def test_heatmap_clamps(self):
        cells = np.zeros(DEFAULT_SPEC.shape)
        cells[0, 0], cells[0, 1] = 2.0, -1.0
        h = Heatmap(DEFAULT_SPEC, cells)
        assert h.cells[0, 0] == 1.0 and h.cells[0, 1] == 0.0

    def test_heatmap_rejects_nan(self):
        cells = np.zeros(DEFAULT_SPEC.shape)
        cells[3, 3] = np.nan
        with pytest.raises(ValueError):
            Heatmap(DEFAULT_SPEC, cells)

    def test_occupancy_rejects_negative(self):
        cells = np.zeros(DEFAULT_SPEC.shape, dtype=np.int64)
        cells[0, 0] = -1
        with pytest.raises(ValueError):
            OccupancyGrid(DEFAULT_SPEC, cells)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            Heatmap(DEFAULT_SPEC, np.zeros((4, 4)))


class TestExport:
    def test_pgm_round_trip_flips_y(self, tmp_path):
        m = _mask([(0, 0)])  # bottom-left in world terms
        p = tmp_path / "m.pgm"
        write_pgm(m, p)
        img = read_pgm(p)
        assert img.shape == (128, 128)
        assert img[127, 0] == 255 and img.sum() == 255

    def test_pgm_heatmap_scaling(self, tmp_path):
        cells = np.zeros(DEFAULT_SPEC.shape)
        cells[5, 5] = 0.5
        write_pgm(Heatmap(DEFAULT_SPEC, cells), tmp_path / "h.pgm")
        assert read_pgm(tmp_path / "h.pgm")[127 - 5, 5] == 128

    def test_csv_row_major(self, tmp_path):
        cells = np.zeros(DEFAULT_SPEC.shape, dtype=np.int64)
        cells[0, 1] = 7
        write_csv(OccupancyGrid(DEFAULT_SPEC, cells), tmp_path / "g.csv")
        lines = (tmp_path / "g.csv").read_text().splitlines()
        assert lines[0] == "row,col,value"
        assert lines[1:3] == ["0,0,0", "0,1,7"]
        assert len(lines) == 1 + 128 * 128


class TestFootprint:
    def test_axis_aligned_car(self):
        rows, cols = footprint_cells(DEFAULT_SPEC, Point2(0.4, 0.4), 0.0, 4.0, 1.6)
        # cell centers within +-2.0 m in x and +-0.8 m in y of (0.4, 0.4)
        assert len(rows) == 5 * 3

    def test_tiny_footprint_claims_center_cell(self):
        rows, cols = footprint_cells(DEFAULT_SPEC, Point2(0.1, 0.1), 0.0, 0.2, 0.2)
        assert list(zip(rows, cols)) == [(64, 64)]

    def test_off_grid_is_empty(self):
        rows, _ = footprint_cells(DEFAULT_SPEC, Point2(200.0, 0.0), 0.0, 4.5, 1.8)
        assert rows.size == 0

    @given(st.floats(-40, 40), st.floats(-40, 40), yaws)
    def test_rotation_by_pi_is_same_set(self, x, y, h):
        a = set(zip(*footprint_cells(DEFAULT_SPEC, Point2(x, y), h, 4.5, 1.8)))
        b = set(zip(*footprint_cells(DEFAULT_SPEC, Point2(x, y), h + math.pi, 4.5, 1.8)))
        # the sign flip of cos/sin may move boundary cells by float noise only
        assert len(a ^ b) <= 2
