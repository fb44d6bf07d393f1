"""End-to-end cooperative perception runs, threshold sweeps and reports."""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from .comm import DEFAULT_BLOCK, DEFAULT_TAU, ChannelModel, FeatureBlockSet, blockify, build_mask, \
    comm_volume, transmit
from .core import DEFAULT_SPEC, CellMask, GridSpec, Heatmap, OccupancyGrid, write_pgm
from .fusion import DEFAULT_IOU, DetectionBox, detect, fuse, gt_boxes, match_detections
from .idapm import HeatmapPredictor, load_weights, predict_heatmap, rasterize_motion_features, \
    render_gt_heatmap, synthetic_batch, train_predictor
from .loss import LossParams
from .metrics import DEFAULT_CRITICAL, EvalReport, FrameMetrics, corr_miou, iou_error
from .ptcm import PtcmParams, scenario_relevances
from .scenario import DEFAULT_FRAMES, Scenario, Template, load_scenario, scenario_suite
from .sensing import DEFAULT_RAYS, Sensor, SensorView, render_view

VISIBILITY_SIGMA = 1.0  # cells


class MaskPolicy(enum.Enum):
    RISK_INTENT = "RiskIntent"
    VISIBILITY = "Visibility"
    FULL = "Full"
    NONE = "None"


class HeatmapSource(enum.Enum):
    ANALYTIC = "analytic"
    TRAINED = "trained"


class InvariantViolation(RuntimeError):
    def __init__(self, name: str, detail: str):
        super().__init__(f"invariant '{name}' failed: {detail}")
        self.name = name
        self.detail = detail


@dataclass(frozen=True)
class RunConfig:
    template: Template = Template.OCCLUDED_CROSSING
    seed: int = 0
    count: int = 20
    n_agents: int = 3
    frames: int = DEFAULT_FRAMES
    scenario_paths: Tuple[str, ...] = ()
    ptcm: PtcmParams = PtcmParams()
    loss: LossParams = LossParams()
    tau: float = DEFAULT_TAU
    block_size: int = DEFAULT_BLOCK
    channel: ChannelModel = ChannelModel()
    policy: MaskPolicy = MaskPolicy.RISK_INTENT
    heatmap_source: HeatmapSource = HeatmapSource.ANALYTIC
    weights_path: Optional[str] = None
    train_iters: int = 200
    no_temporal: bool = False
    no_motion: bool = False
    no_velocity: bool = False
    iou_threshold: float = DEFAULT_IOU
    critical_threshold: float = DEFAULT_CRITICAL
    n_rays: int = DEFAULT_RAYS
    out_dir: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "template", Template.parse(self.template))
        object.__setattr__(self, "policy", MaskPolicy(self.policy))
        object.__setattr__(self, "heatmap_source", HeatmapSource(self.heatmap_source))
        object.__setattr__(self, "scenario_paths", tuple(str(p) for p in self.scenario_paths))
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        if self.count < 1 and not self.scenario_paths:
            raise ValueError("count must be >= 1")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        if not 0 < self.iou_threshold < 1:
            raise ValueError("iou_threshold must lie in (0, 1)")
        if not 0 < self.critical_threshold < 1:
            raise ValueError("critical_threshold must lie in (0, 1)")
        if self.train_iters < 1:
            raise ValueError("train_iters must be >= 1")

    @property
    def effective_ptcm(self) -> PtcmParams:
        return replace(self.ptcm, N=1) if self.no_temporal else self.ptcm

    def eval_frames(self, scenario: Scenario) -> range:
        """Frames with one past frame for velocity and a full horizon ahead."""
        return range(1, scenario.frames - self.ptcm.N)


@dataclass(frozen=True, eq=False)
class FrameArtifacts:
    gt: Heatmap
    pred: Heatmap
    fused: OccupancyGrid
    boxes: Tuple[DetectionBox, ...]
    received: FeatureBlockSet


def load_suite(config: RunConfig) -> List[Scenario]:
    if config.scenario_paths:
        return [load_scenario(p) for p in config.scenario_paths]
    return scenario_suite(config.template, config.seed, config.count, config.n_agents, config.frames)


def visibility_heatmap(view: SensorView, sigma: float = VISIBILITY_SIGMA) -> Heatmap:
    """Occupancy-confidence baseline: blurred hit counts scaled to a peak of 1."""
    blurred = ndimage.gaussian_filter(view.occupancy.cells.astype(np.float64), sigma, mode="constant")
    peak = blurred.max()
    return Heatmap(view.spec, blurred / peak if peak > 0 else blurred)


def _policy_mask(policy: MaskPolicy, pred: Heatmap, infra: SensorView, tau: float) -> CellMask:
    spec = pred.spec
    if policy is MaskPolicy.RISK_INTENT:
        return build_mask(pred, tau)
    if policy is MaskPolicy.VISIBILITY:
        return build_mask(visibility_heatmap(infra), tau)
    if policy is MaskPolicy.FULL:
        return CellMask(spec, np.ones(spec.shape, dtype=bool))
    return CellMask(spec, np.zeros(spec.shape, dtype=bool))


def prepare_model(config: RunConfig) -> Optional[HeatmapPredictor]:
    """Load or train the predictor when the config asks for one."""
    if config.heatmap_source is HeatmapSource.ANALYTIC:
        return None
    if config.weights_path:
        return load_weights(config.weights_path)
    dataset = synthetic_batch(seed=config.seed, params=config.effective_ptcm)
    if config.no_motion:
        dataset = [(f.without_motion(), g) for f, g in dataset]
    model, _ = train_predictor(dataset, config.loss, config.train_iters, config.seed)
    return model


def _check(ok: bool, name: str, detail: str) -> None:
    if not ok:
        raise InvariantViolation(name, detail)


def evaluate_frame(config: RunConfig, scenario: Scenario, index: int, frame: int,
                   model: Optional[HeatmapPredictor] = None, tau: Optional[float] = None,
                   spec: GridSpec = DEFAULT_SPEC) -> FrameMetrics:
    tau = config.tau if tau is None else tau
    params = config.effective_ptcm
    ego = render_view(scenario, frame, Sensor.EGO, spec, config.n_rays)
    infra = render_view(scenario, frame, Sensor.INFRA, spec, config.n_rays)
    reports = scenario_relevances(scenario, frame, params, use_velocity=not config.no_velocity)
    gt = render_gt_heatmap(scenario, frame, reports, spec, params.N)
    if model is None:
        pred = gt
    else:
        feats = rasterize_motion_features(scenario, frame, spec)
        pred = predict_heatmap(model, feats.without_motion() if config.no_motion else feats)

    mask = _policy_mask(config.policy, pred, infra, tau)
    blocks = blockify(mask, infra.occupancy, config.block_size)
    stats = comm_volume(blocks)
    received = transmit(blocks, config.channel)
    fused = fuse(ego, received)

    _check(0 <= stats.percent_exact <= 100, "comm_percent_range", f"{stats.percent_of_full}%")
    outside = ~received.coverage()
    _check(np.array_equal(fused.cells[outside], ego.occupancy.cells[outside]), "masked_fusion_locality",
           f"scenario {index} frame {frame}: cells outside received blocks differ from ego view")
    if config.policy is MaskPolicy.FULL:
        _check(stats.percent_exact == 100, "full_policy_volume", f"sent {stats.percent_of_full}%")
        if config.channel.drop_probability == 0:
            oracle = np.maximum(ego.occupancy.cells, infra.occupancy.cells)
            _check(np.array_equal(fused.cells, oracle), "full_fusion_oracle",
                   f"scenario {index} frame {frame}: fused grid differs from max of full views")
    if config.policy is MaskPolicy.NONE:
        _check(stats.cells_sent == 0, "none_policy_silent", f"sent {stats.cells_sent} cells")

    boxes = detect(fused)
    gts = gt_boxes(scenario, frame)
    matches = match_detections(boxes, gts, config.iou_threshold)
    rel = {r.target_id: r.relevance for r in reports}
    critical = tuple(sorted(i for i, r in rel.items() if r >= config.critical_threshold))
    matched = tuple(sorted(m for _, m in matches if m is not None))
    return FrameMetrics(
        scenario=index,
        frame=frame,
        comm=stats,
        corr_miou=corr_miou(pred, gt, tau),
        iou_error=iou_error(pred, gt, tau),
        n_gt=len(gts),
        detections=[(b.confidence, m is not None) for b, m in matches],
        critical=len(critical),
        critical_hit=len(set(critical) & set(matched)),
        critical_ids=critical,
        matched_ids=matched,
        artifacts=FrameArtifacts(gt, pred, fused, tuple(b for b, _ in matches), received),
    )


def run(config: RunConfig, scenarios: Optional[Sequence[Scenario]] = None,
        model: Optional[HeatmapPredictor] = None, tau: Optional[float] = None) -> EvalReport:
    scenarios = load_suite(config) if scenarios is None else scenarios
    if model is None:
        model = prepare_model(config)
    frames = []
    for index, s in enumerate(scenarios):
        for f in config.eval_frames(s):
            frames.append(evaluate_frame(config, s, index, f, model, tau))
    if not frames:
        raise ValueError(f"scenarios need more than {config.ptcm.N + 1} frames to evaluate")
    return EvalReport.aggregate(frames)


def per_scenario_recall(report: EvalReport) -> Dict[int, float]:
    out: Dict[int, List[int]] = {}
    for f in report.per_frame:
        acc = out.setdefault(f.scenario, [0, 0])
        acc[0] += f.critical
        acc[1] += f.critical_hit
    return {k: (1.0 if c == 0 else h / c) for k, (c, h) in sorted(out.items())}


SWEEP_FIELDS = ("tau", "comm_percent", "ap", "critical_recall", "corr_miou", "iou_error")


def sweep(config: RunConfig, taus: Sequence[float], scenarios: Optional[Sequence[Scenario]] = None
          ) -> List[Dict[str, float]]:
    """One row per threshold; thresholds above 1 select nothing."""
    if not taus:
        raise ValueError("need at least one threshold")
    if any(t < 0 or not math.isfinite(t) for t in taus):
        raise ValueError("thresholds must be finite and >= 0")
    scenarios = load_suite(config) if scenarios is None else scenarios
    model = prepare_model(config)
    rows = []
    for t in taus:
        rep = run(config, scenarios, model, tau=t)
        row = {"tau": float(t), "comm_percent": rep.comm.percent_of_full, "ap": rep.ap,
               "critical_recall": rep.critical_recall, "corr_miou": rep.corr_miou, "iou_error": rep.iou_error}
        rows.append(row)
    ordered = sorted(rows, key=lambda r: r["tau"])
    for a, b in zip(ordered, ordered[1:]):
        _check(b["comm_percent"] <= a["comm_percent"], "sweep_comm_monotone",
               f"comm rose from {a['comm_percent']}% at tau={a['tau']} to {b['comm_percent']}% at tau={b['tau']}")
    return rows


def sweep_csv(rows: Sequence[Dict[str, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_FIELDS)
    for r in rows:
        w.writerow([repr(float(r[k])) for k in SWEEP_FIELDS])
    return buf.getvalue()


def tune_tau(config: RunConfig, target_cells: int, scenarios: Sequence[Scenario],
             iters: int = 30) -> Tuple[float, EvalReport]:
    """Bisect the threshold whose total cell volume is closest to ``target_cells``."""
    lo, hi = 0.0, 1.0
    best: Optional[Tuple[int, float, EvalReport]] = None
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        rep = run(config, scenarios, tau=mid)
        sent = rep.comm.cells_sent
        gap = abs(sent - target_cells)
        if best is None or gap < best[0]:
            best = (gap, mid, rep)
        if sent == target_cells:
            break
        if sent > target_cells:
            lo = mid
        else:
            hi = mid
    return best[1], best[2]


# --- report -----------------------------------------------------------------

def _detection_image(art: FrameArtifacts) -> np.ndarray:
    cells = art.fused.cells
    peak = cells.max()
    img = np.zeros(cells.shape) if peak == 0 else np.rint(cells * (160.0 / peak))
    spec = art.fused.spec
    for b in art.boxes:
        x0, y0, x1, y1 = b.bounds
        c0 = int(round((x0 - spec.x_min) / spec.cell_size))
        c1 = int(round((x1 - spec.x_min) / spec.cell_size)) - 1
        r0 = int(round((y0 - spec.y_min) / spec.cell_size))
        r1 = int(round((y1 - spec.y_min) / spec.cell_size)) - 1
        img[r0, c0:c1 + 1] = img[r1, c0:c1 + 1] = 255
        img[r0:r1 + 1, c0] = img[r0:r1 + 1, c1] = 255
    return img.astype(np.uint8)[::-1]


def report(eval_report: EvalReport, out_dir: Union[str, Path]) -> List[Path]:
    """Write summary.csv, frames.csv, detections.csv, summary.txt and three images per frame."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name: str, text: str) -> None:
        p = out / name
        p.write_text(text, encoding="ascii")
        written.append(p)

    row = eval_report.summary_row()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(row.keys())
    w.writerow([repr(float(v)) for v in row.values()])
    put("summary.csv", buf.getvalue())

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "frame", "cells_sent", "bytes_sent", "comm_percent", "corr_miou", "iou_error",
                "n_gt", "n_det", "critical", "critical_hit"])
    for f in eval_report.per_frame:
        w.writerow([f.scenario, f.frame, f.comm.cells_sent, f.comm.bytes_sent, repr(f.comm.percent_of_full),
                    repr(f.corr_miou), repr(f.iou_error), f.n_gt, len(f.detections), f.critical, f.critical_hit])
    put("frames.csv", buf.getvalue())

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "frame", "center_x", "center_y", "ext_x", "ext_y", "confidence", "matched_gt"])
    for f in eval_report.per_frame:
        if f.artifacts is None:
            continue
        for b in f.artifacts.boxes:
            w.writerow([f.scenario, f.frame, repr(b.center.x), repr(b.center.y), repr(2 * b.half_extent[0]),
                        repr(2 * b.half_extent[1]), repr(b.confidence), "" if b.matched_gt is None else b.matched_gt])
    put("detections.csv", buf.getvalue())
    put("summary.txt", eval_report.table())

    for f in eval_report.per_frame:
        if f.artifacts is None:
            continue
        stem = f"s{f.scenario:03d}_f{f.frame:02d}"
        for suffix, img in (("gt", f.artifacts.gt), ("pred", f.artifacts.pred),
                            ("det", _detection_image(f.artifacts))):
            p = out / f"{stem}_{suffix}.pgm"
            write_pgm(img, p)
            written.append(p)
    return written
