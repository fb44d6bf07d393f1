from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskselect.comm import CommStats
from riskselect.core import DEFAULT_SPEC, Heatmap
from riskselect.metrics import (
    EvalReport, FrameMetrics, average_precision, corr_miou, critical_counts, critical_recall, iou_error,
)
from riskselect.ptcm import RelevanceReport

SHAPE = DEFAULT_SPEC.shape


def _heat(cells, value=1.0):
    h = np.zeros(SHAPE)
    for r, c in cells:
        h[r, c] = value
    return Heatmap(DEFAULT_SPEC, h)


def _block(r0, r1, c0, c1):
    return [(r, c) for r in range(r0, r1) for c in range(c0, c1)]


class TestCorrMiou:
    def test_self(self):
        h = _heat(_block(0, 4, 0, 4))
        assert corr_miou(h, h, 0.5) == 100.0

    def test_disjoint(self):
        assert corr_miou(_heat(_block(0, 2, 0, 2)), _heat(_block(5, 7, 5, 7)), 0.5) == 0.0

    def test_eight_of_twenty_four(self):
        a, b = _heat(_block(0, 4, 0, 4)), _heat(_block(2, 6, 0, 4))
        assert corr_miou(a, b, 0.5) == pytest.approx(33.33, abs=0.01)

    def test_sequence_average(self):
        a, b = _heat(_block(0, 4, 0, 4)), _heat(_block(2, 6, 0, 4))
        assert corr_miou([a, a], [a, b], 0.5) == pytest.approx((100 + 100 / 3) / 2)

    def test_length_mismatch(self):
        h = _heat([])
        with pytest.raises(ValueError):
            corr_miou([h], [h, h], 0.1)

    @settings(max_examples=20)
    @given(st.integers(0, 1000), st.floats(0, 1))
    def test_self_is_hundred(self, seed, tau):
        h = Heatmap(DEFAULT_SPEC, np.random.default_rng(seed).random(SHAPE))
        assert corr_miou(h, h, tau) == 100.0


class TestIouError:
    def test_subset(self):
        assert iou_error(_heat(_block(0, 2, 0, 2)), _heat(_block(0, 4, 0, 4)), 0.5) == 0.0

    def test_disjoint(self):
        assert iou_error(_heat(_block(0, 2, 0, 2)), _heat(_block(8, 9, 8, 9)), 0.5) == 100.0

    def test_fifteen_of_twenty_inside(self):
        pred = _heat(_block(0, 4, 0, 5))  # 20 cells
        gt = _heat(_block(0, 3, 0, 5))    # 15 of them
        assert iou_error(pred, gt, 0.5) == 25.0

    def test_empty_prediction(self):
        assert iou_error(_heat([]), _heat(_block(0, 2, 0, 2)), 0.5) == 0.0


class TestAveragePrecision:
    def test_perfect(self):
        assert average_precision([(0.9, True)], 1) == 1.0

    def test_no_detections(self):
        assert average_precision([], 3) == 0.0

    def test_match_then_miss(self):
        assert average_precision([(0.9, True), (0.5, False)], 1) == 1.0

    def test_miss_then_match(self):
        # the only point reaching any recall level has precision 1/2
        assert average_precision([(0.9, False), (0.5, True)], 1) == pytest.approx(0.5)

    def test_half_recall(self):
        # recall 0.5 at precision 1: levels 0..0.5 score 1, the rest 0
        assert average_precision([(0.8, True)], 2) == pytest.approx(6 / 11)

    @settings(max_examples=40)
    @given(st.lists(st.tuples(st.floats(0.01, 1.0), st.booleans()), max_size=20, unique_by=lambda t: t[0]),
           st.integers(1, 10))
    def test_rank_only(self, dets, n_gt):
        n_gt = max(n_gt, sum(tp for _, tp in dets))
        warped = [(c ** 3 + 2.0, tp) for c, tp in dets]
        assert average_precision(warped, n_gt) == average_precision(dets, n_gt)

    def test_bounded(self):
        assert 0.0 <= average_precision([(0.2, True), (0.9, False), (0.5, True)], 4) <= 1.0


class TestCriticalRecall:
    REL = {1: 0.9, 2: 0.7, 3: 0.55, 4: 0.2}

    def test_all_matched(self):
        assert critical_recall([(None, 1), (None, 2), (None, 3)], self.REL) == 1.0

    def test_none_matched(self):
        assert critical_recall([(None, 4), (None, None)], self.REL) == 0.0

    def test_two_of_three(self):
        assert critical_recall([(None, 1), (None, 3)], self.REL) == pytest.approx(0.6667, abs=1e-4)

    def test_vacuous(self):
        assert critical_recall([], {1: 0.1}) == 1.0

    def test_reports_accepted(self):
        reps = [RelevanceReport(1, 0.5, 0.2, 0.7), RelevanceReport(2, 0.0, 0.1, 0.1)]
        assert critical_counts([(None, 1)], reps) == (1, 1)

    def test_threshold_domain(self):
        with pytest.raises(ValueError):
            critical_recall([], self.REL, 1.0)

    @given(st.lists(st.sampled_from([1, 2, 3, 4, None]), max_size=6), st.sampled_from([1, 2, 3, 4]))
    def test_monotone_in_detections(self, matched, extra):
        base = [(None, m) for m in matched]
        assert critical_recall(base + [(None, extra)], self.REL) >= critical_recall(base, self.REL)


class TestEvalReport:
    def _frame(self, idx, dets, n_gt, crit, hit):
        return FrameMetrics(idx, 1, CommStats(16, 16384, 68), 90.0, 10.0, n_gt, dets, crit, hit)

    def test_aggregate_pools(self):
        rep = EvalReport.aggregate([self._frame(0, [(0.9, True)], 1, 1, 1),
                                    self._frame(1, [(0.5, False)], 1, 2, 0)])
        assert rep.comm == CommStats(32, 32768, 136)
        assert rep.critical_recall == pytest.approx(1 / 3)
        assert rep.ap == pytest.approx(6 / 11)
        assert rep.corr_miou == 90.0 and rep.iou_error == 10.0
        assert "critical_recall" in rep.table()

    def test_percent_range(self):
        with pytest.raises(ValueError):
            EvalReport(120.0, 0.0, 0.0, 0.0, CommStats(0, 1, 0))

    def test_empty_aggregate(self):
        with pytest.raises(ValueError):
            EvalReport.aggregate([])
