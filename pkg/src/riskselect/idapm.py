"""Intention-driven relevance-area prediction.

Three pieces:

* :func:`rasterize_motion_features` turns a scenario frame into seven BEV
  planes (segmentation, centerness, offset x/y, flow x/y, intent);
* :func:`render_gt_heatmap` paints supervision targets from per-target
  relevance scores;
* :class:`HeatmapPredictor` is a two-layer 3x3 conv net (7 -> 8 -> 1) trained by
  plain gradient descent with hand-written backprop.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import DEFAULT_SPEC, GridSpec, Heatmap, Point2, footprint_cells, world_to_cell
from .loss import LossParams, loss_and_grad
from .ptcm import PtcmParams, RelevanceReport, scenario_relevances
from .scenario import DrivingIntent, Scenario, Template, generate_scenario

IN_PLANES = 7
HIDDEN = 8
LEARNING_RATE = 0.05
SPLAT_SIGMA = 1.0  # cells

WEIGHTS_MAGIC = b"IDAP"
WEIGHTS_VERSION = 1
_WEIGHTS_HEADER = struct.Struct("<4sHHHHI")  # magic, version, in, hidden, out, reserved


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class MotionFeatureStack:
    spec: GridSpec
    seg: np.ndarray
    cen: np.ndarray
    off: np.ndarray   # (2, H, W) in cells, toward the instance center
    flow: np.ndarray  # (2, H, W) in cells, center displacement to the next frame
    intent_plane: np.ndarray

    def planes(self) -> np.ndarray:
        """Stack as ``(7, H, W)``: seg, cen, off x/y, flow x/y, intent."""
        return np.concatenate([self.seg[None], self.cen[None], self.off, self.flow, self.intent_plane[None]])

    def without_motion(self) -> "MotionFeatureStack":
        return replace(self, off=np.zeros_like(self.off), flow=np.zeros_like(self.flow))


def _center_cell_coords(spec: GridSpec, p: Point2) -> Tuple[float, float]:
    """Continuous (row, col) coordinates with cell centers at integers."""
    return (p[1] - spec.y_min) / spec.cell_size - 0.5, (p[0] - spec.x_min) / spec.cell_size - 0.5


def rasterize_motion_features(scenario: Scenario, frame: int, spec: GridSpec = DEFAULT_SPEC,
                              intent: Optional[DrivingIntent] = None) -> MotionFeatureStack:
    """Rasterize the non-ego agents at ``frame``; flow needs ``frame + 1``."""
    if not (0 <= frame and frame + 1 < scenario.frames):
        raise ValueError(f"frame {frame} needs a following frame (scenario has {scenario.frames})")
    intent = scenario.ego_intent if intent is None else DrivingIntent(intent)
    h, w = spec.shape
    seg = np.zeros((h, w))
    cen = np.zeros((h, w))
    off = np.zeros((2, h, w))
    flow = np.zeros((2, h, w))
    rr, cc = np.mgrid[0:h, 0:w]
    for a in scenario.targets:
        pos, heading = scenario.pose(a.id, frame)
        nxt = a.trajectory.position(frame + 1)
        rows, cols = footprint_cells(spec, pos, heading, a.state.length, a.state.width)
        seg[rows, cols] = 1.0
        crow, ccol = _center_cell_coords(spec, pos)
        off[0, rows, cols] = ccol - cols
        off[1, rows, cols] = crow - rows
        flow[0, rows, cols] = (nxt.x - pos.x) / spec.cell_size
        flow[1, rows, cols] = (nxt.y - pos.y) / spec.cell_size
        center = world_to_cell(spec, pos)
        if center is not None:
            radius = 0.5 * math.hypot(a.state.length, a.state.width)
            dist = spec.cell_size * np.hypot(rr - center[0], cc - center[1])
            np.maximum(cen, np.clip(1.0 - dist / radius, 0.0, None), out=cen)
    intent_plane = np.full((h, w), intent.ordinal / 4.0)
    return MotionFeatureStack(spec, seg, cen, off, flow, intent_plane)


def render_gt_heatmap(scenario: Scenario, frame: int, relevances: Sequence[RelevanceReport],
                      spec: GridSpec = DEFAULT_SPEC, horizon: int = PtcmParams().N) -> Heatmap:
    """Splat each target's relevance over its footprint now and at its future waypoints.

    Each splat falls off as a unit-sigma Gaussian (in cells) from the splat's
    center cell; overlapping splats combine by max.
    """
    by_id = {r.target_id: r.relevance for r in relevances}
    missing = [a.id for a in scenario.targets if a.id not in by_id]
    if missing:
        raise ValueError(f"no relevance for targets {missing}")
    heat = np.zeros(spec.shape)
    for a in scenario.targets:
        rel = by_id[a.id]
        if rel <= 0:
            continue
        for f in range(frame, frame + horizon + 1):
            if not a.trajectory.has(f):
                break
            pos, heading = scenario.pose(a.id, f)
            center = world_to_cell(spec, pos)
            if center is None:
                continue
            rows, cols = footprint_cells(spec, pos, heading, a.state.length, a.state.width)
            d2 = (rows - center[0]) ** 2 + (cols - center[1]) ** 2
            vals = rel * np.exp(-d2 / (2.0 * SPLAT_SIGMA ** 2))
            np.maximum.at(heat, (rows, cols), vals)
    return Heatmap(spec, heat)


# --- predictor --------------------------------------------------------------

def _im2col(x: np.ndarray) -> np.ndarray:
    """``(C, H, W)`` -> ``(C*9, H*W)`` with zero 'same' padding."""
    c, h, w = x.shape
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(padded, (3, 3), axis=(1, 2))  # (C, H, W, 3, 3)
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(c * 9, h * w)


def _col2im(cols: np.ndarray, c: int, h: int, w: int) -> np.ndarray:
    cols = cols.reshape(c, 3, 3, h, w)
    out = np.zeros((c, h + 2, w + 2))
    for i in range(3):
        for j in range(3):
            out[:, i:i + h, j:j + w] += cols[:, i, j]
    return out[:, 1:-1, 1:-1]


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(eq=False)
class HeatmapPredictor:
    w1: np.ndarray  # (8, 7, 3, 3)
    b1: np.ndarray  # (8,)
    w2: np.ndarray  # (1, 8, 3, 3)
    b2: np.ndarray  # (1,)

    def __post_init__(self):
        for name, shape in self.shapes().items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            setattr(self, name, arr)

    @staticmethod
    def shapes():
        return {"w1": (HIDDEN, IN_PLANES, 3, 3), "b1": (HIDDEN,), "w2": (1, HIDDEN, 3, 3), "b2": (1,)}

    @classmethod
    def zeros(cls) -> "HeatmapPredictor":
        return cls(**{k: np.zeros(s) for k, s in cls.shapes().items()})

    @classmethod
    def init(cls, seed: int = 0) -> "HeatmapPredictor":
        rng = np.random.default_rng(seed)
        w1 = rng.normal(0.0, math.sqrt(2.0 / (IN_PLANES * 9)), (HIDDEN, IN_PLANES, 3, 3))
        w2 = rng.normal(0.0, math.sqrt(1.0 / (HIDDEN * 9)), (1, HIDDEN, 3, 3))
        return cls(w1, np.zeros(HIDDEN), w2, np.zeros(1))

    @property
    def param_count(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes().values())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])

    @classmethod
    def from_flat(cls, vec: np.ndarray) -> "HeatmapPredictor":
        vec = np.asarray(vec, dtype=np.float64)
        parts, i = {}, 0
        for k, s in cls.shapes().items():
            n = int(np.prod(s))
            parts[k] = vec[i:i + n].reshape(s)
            i += n
        if i != vec.size:
            raise ValueError(f"expected {i} parameters, got {vec.size}")
        return cls(**parts)

    def copy(self) -> "HeatmapPredictor":
        return HeatmapPredictor.from_flat(self.flat().copy())

    # forward / backward on one (7, H, W) input
    def _forward(self, x: np.ndarray):
        if x.ndim != 3 or x.shape[0] != IN_PLANES:
            raise ValueError(f"expected input of shape ({IN_PLANES}, H, W), got {x.shape}")
        _, h, w = x.shape
        cols1 = _im2col(x)
        z1 = self.w1.reshape(HIDDEN, -1) @ cols1 + self.b1[:, None]
        a1 = np.maximum(z1, 0.0)
        cols2 = _im2col(a1.reshape(HIDDEN, h, w))
        z2 = self.w2.reshape(1, -1) @ cols2 + self.b2[:, None]
        y = _sigmoid(z2).reshape(h, w)
        return y, (cols1, z1, cols2)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self._forward(x)[0]

    def _backward(self, x: np.ndarray, y: np.ndarray, cache, dy: np.ndarray) -> np.ndarray:
        cols1, z1, cols2 = cache
        _, h, w = x.shape
        dz2 = (dy * y * (1.0 - y)).reshape(1, -1)
        g_w2 = (dz2 @ cols2.T).reshape(self.w2.shape)
        g_b2 = dz2.sum(axis=1)
        dcols2 = self.w2.reshape(1, -1).T @ dz2
        da1 = _col2im(dcols2, HIDDEN, h, w).reshape(HIDDEN, -1)
        dz1 = da1 * (z1 > 0)
        g_w1 = (dz1 @ cols1.T).reshape(self.w1.shape)
        g_b1 = dz1.sum(axis=1)
        return np.concatenate([g_w1.ravel(), g_b1, g_w2.ravel(), g_b2])


def predict_heatmap(model: HeatmapPredictor, feats: MotionFeatureStack) -> Heatmap:
    return Heatmap(feats.spec, model.forward(feats.planes()))


def dataset_loss(model: HeatmapPredictor, dataset, loss_cfg: LossParams = LossParams(),
                 with_grad: bool = False):
    """Mean per-cell loss over all samples, optionally with the flat gradient."""
    total = 0.0
    grad = np.zeros(model.param_count) if with_grad else None
    for feats, gt in dataset:
        x = feats.planes()
        y, cache = model._forward(x)
        if y.shape != gt.cells.shape:
            raise ValueError(f"prediction {y.shape} and target {gt.cells.shape} differ")
        values, dvals = loss_and_grad(y, gt.cells, loss_cfg)
        total += float(values.sum()) / values.size
        if with_grad:
            grad += model._backward(x, y, cache, dvals / values.size)
    n = len(dataset)
    if with_grad:
        return total / n, grad / n
    return total / n


def gradient_check(model: HeatmapPredictor, dataset, loss_cfg: LossParams = LossParams(), n_params: int = 12,
                   seed: int = 0, h: float = 1e-6, tol: float = 1e-4) -> float:
    """Compare backprop against central differences on a random parameter subset.

    Returns the worst relative error; raises :class:`TrainingError` above ``tol``.
    """
    _, grad = dataset_loss(model, dataset, loss_cfg, with_grad=True)
    base = model.flat()
    rng = np.random.default_rng(seed)
    idx = rng.choice(base.size, size=min(n_params, base.size), replace=False)
    worst = 0.0
    for i in idx:
        plus, minus = base.copy(), base.copy()
        plus[i] += h
        minus[i] -= h
        numeric = (dataset_loss(HeatmapPredictor.from_flat(plus), dataset, loss_cfg)
                   - dataset_loss(HeatmapPredictor.from_flat(minus), dataset, loss_cfg)) / (2 * h)
        if not (math.isfinite(numeric) and math.isfinite(grad[i])):
            raise TrainingError(f"gradient check hit a non-finite value on parameter {i}")
        scale = max(abs(numeric), abs(grad[i]))
        # below the finite-difference noise floor both sides are zero for our purposes
        err = 0.0 if scale < 1e-9 else abs(numeric - grad[i]) / scale
        worst = max(worst, err)
        if err > tol:
            raise TrainingError(f"gradient check failed on parameter {i}: analytic {grad[i]:.6e} "
                                f"vs numeric {numeric:.6e} (rel err {err:.2e})")
    return worst


def train_predictor(dataset, loss_cfg: LossParams = LossParams(), iters: int = 200, seed: int = 0,
                    lr: float = LEARNING_RATE, model: Optional[HeatmapPredictor] = None,
                    check_gradients: bool = True):
    """Full-batch gradient descent; returns ``(model, loss_trace)``.

    ``loss_trace[i]`` is the dataset loss before update ``i``.
    """
    if not dataset:
        raise ValueError("dataset must not be empty")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    model = HeatmapPredictor.init(seed) if model is None else model.copy()
    if check_gradients:
        gradient_check(model, dataset[:1], loss_cfg, seed=seed)
    params = model.flat()
    trace = []
    for it in range(iters):
        value, grad = dataset_loss(model, dataset, loss_cfg, with_grad=True)
        if not (math.isfinite(value) and np.isfinite(grad).all()):
            raise TrainingError(f"non-finite loss at iteration {it}: {value}")
        trace.append(value)
        params = params - lr * grad
        model = HeatmapPredictor.from_flat(params)
    return model, trace


def synthetic_batch(n: int = 8, seed: int = 0, n_agents: int = 4, frame: int = 1,
                    params: PtcmParams = PtcmParams(), spec: GridSpec = DEFAULT_SPEC):
    """Feature/target pairs from generated scenarios, cycling through templates."""
    templates = list(Template)
    out = []
    for i in range(n):
        s = generate_scenario(templates[i % len(templates)], seed + i, n_agents)
        reports = scenario_relevances(s, frame, params)
        out.append((rasterize_motion_features(s, frame, spec), render_gt_heatmap(s, frame, reports, spec, params.N)))
    return out


# --- weights file -----------------------------------------------------------

def save_weights(model: HeatmapPredictor, path: Union[str, Path]) -> None:
    """Little-endian float32 parameters behind a 16-byte header."""
    header = _WEIGHTS_HEADER.pack(WEIGHTS_MAGIC, WEIGHTS_VERSION, IN_PLANES, HIDDEN, 1, 0)
    Path(path).write_bytes(header + model.flat().astype("<f4").tobytes())


def load_weights(path: Union[str, Path]) -> HeatmapPredictor:
    data = Path(path).read_bytes()
    if len(data) < _WEIGHTS_HEADER.size:
        raise ValueError(f"{path}: truncated weights header")
    magic, version, n_in, n_hidden, n_out, _ = _WEIGHTS_HEADER.unpack_from(data)
    if magic != WEIGHTS_MAGIC or version != WEIGHTS_VERSION:
        raise ValueError(f"{path}: not a predictor weights file (magic {magic!r}, version {version})")
    if (n_in, n_hidden, n_out) != (IN_PLANES, HIDDEN, 1):
        raise ValueError(f"{path}: plane counts {n_in}/{n_hidden}/{n_out} do not match {IN_PLANES}/{HIDDEN}/1")
    vec = np.frombuffer(data, dtype="<f4", offset=_WEIGHTS_HEADER.size)
    return HeatmapPredictor.from_flat(vec.astype(np.float64))
