"""Evaluation bundle: relevance-mask overlap, redundancy, AP and critical recall."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .comm import CommStats, build_mask
from .core import Heatmap, mask_iou
from .ptcm import RelevanceReport

DEFAULT_CRITICAL = 0.5


def corr_miou(pred: Union[Heatmap, Sequence[Heatmap]], gt: Union[Heatmap, Sequence[Heatmap]], tau: float) -> float:
    """Percent IoU of the thresholded masks, averaged over frames for sequences."""
    if isinstance(pred, Heatmap):
        pred, gt = [pred], [gt]
    if len(pred) != len(gt) or not pred:
        raise ValueError("need equally long, non-empty heatmap sequences")
    vals = [100.0 * mask_iou(build_mask(p, tau), build_mask(g, tau)) for p, g in zip(pred, gt)]
    return float(np.mean(vals))


def iou_error(pred: Heatmap, gt: Heatmap, tau: float) -> float:
    """Percent of the predicted relevant area lying outside the ground-truth area."""
    pred.same_spec(gt)
    pm = build_mask(pred, tau).cells
    gm = build_mask(gt, tau).cells
    redundant = int(np.count_nonzero(pm & ~gm))
    return 100.0 * redundant / max(int(np.count_nonzero(pm)), 1)


def average_precision(ranked: Sequence[Tuple[float, bool]], n_gt: int) -> float:
    """11-point interpolated AP.

    ``ranked`` holds ``(confidence, is_true_positive)`` per detection; ties keep
    their given order.
    """
    if n_gt <= 0:
        return 0.0
    order = sorted(range(len(ranked)), key=lambda i: -ranked[i][0])
    tp = np.cumsum([1 if ranked[i][1] else 0 for i in order], dtype=np.float64)
    if tp.size == 0:
        return 0.0
    ranks = np.arange(1, tp.size + 1, dtype=np.float64)
    recall = tp / n_gt
    precision = tp / ranks
    total = 0.0
    for level in np.linspace(0.0, 1.0, 11):
        reached = recall >= level - 1e-12
        total += precision[reached].max() if reached.any() else 0.0
    return total / 11.0


def critical_recall(matches: Iterable[Tuple[object, Optional[int]]],
                    relevances: Union[Mapping[int, float], Sequence[RelevanceReport]],
                    relevance_threshold: float = DEFAULT_CRITICAL) -> float:
    critical, hit = critical_counts(matches, relevances, relevance_threshold)
    return 1.0 if critical == 0 else hit / critical


def critical_counts(matches, relevances, relevance_threshold: float = DEFAULT_CRITICAL) -> Tuple[int, int]:
    if not 0 < relevance_threshold < 1:
        raise ValueError("relevance_threshold must lie in (0, 1)")
    if not isinstance(relevances, Mapping):
        relevances = {r.target_id: r.relevance for r in relevances}
    critical = {i for i, r in relevances.items() if r >= relevance_threshold}
    matched = {m for _, m in matches if m is not None}
    return len(critical), len(critical & matched)


@dataclass
class FrameMetrics:
    scenario: int
    frame: int
    comm: CommStats
    corr_miou: float
    iou_error: float
    n_gt: int
    detections: List[Tuple[float, bool]]
    critical: int
    critical_hit: int
    critical_ids: Tuple[int, ...] = ()
    matched_ids: Tuple[int, ...] = ()
    # heatmaps, fused grid and boxes kept for reporting; not part of equality
    artifacts: Optional[object] = field(default=None, compare=False, repr=False)


@dataclass
class EvalReport:
    corr_miou: float
    iou_error: float
    ap: float
    critical_recall: float
    comm: CommStats
    per_frame: List[FrameMetrics] = field(default_factory=list)

    def __post_init__(self):
        for name in ("corr_miou", "iou_error"):
            v = getattr(self, name)
            if not 0.0 <= v <= 100.0:
                raise ValueError(f"{name}={v} outside [0, 100]")

    @classmethod
    def aggregate(cls, frames: Sequence[FrameMetrics]) -> "EvalReport":
        if not frames:
            raise ValueError("no frames to aggregate")
        comm = CommStats(0, 0, 0)
        for f in frames:
            comm = comm + f.comm
        ranked = [d for f in frames for d in f.detections]
        n_gt = sum(f.n_gt for f in frames)
        critical = sum(f.critical for f in frames)
        hit = sum(f.critical_hit for f in frames)
        return cls(
            corr_miou=float(np.mean([f.corr_miou for f in frames])),
            iou_error=float(np.mean([f.iou_error for f in frames])),
            ap=average_precision(ranked, n_gt),
            critical_recall=1.0 if critical == 0 else hit / critical,
            comm=comm,
            per_frame=list(frames),
        )

    def summary_row(self) -> Dict[str, float]:
        return {
            "comm_percent": self.comm.percent_of_full,
            "bytes_sent": self.comm.bytes_sent,
            "volume_log2": self.comm.volume_log2 if self.comm.volume_log2 is not None else float("nan"),
            "ap": self.ap,
            "critical_recall": self.critical_recall,
            "corr_miou": self.corr_miou,
            "iou_error": self.iou_error,
        }

    def table(self) -> str:
        row = self.summary_row()
        width = max(len(k) for k in row)
        lines = [f"{k.ljust(width)}  {v:.6g}" for k, v in row.items()]
        lines.append(f"{'frames'.ljust(width)}  {len(self.per_frame)}")
        return "\n".join(lines) + "\n"
