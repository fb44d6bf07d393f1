"""Target relevance from trajectory proximity and a potential-field risk term.

Relevance combines two bounded branches:

* trajectory interaction ``T_S`` in ``[0, lambda_traj]``: how close the target's
  future path runs to the ego's plan, with exponentially decaying frame weights;
* driving risk ``R_S`` in ``[0, 0.5]``: a repulsive potential ``exp(v cos θ) / r²``
  normalised between fixed analytic bounds.

``relevance = min(T_S + R_S, 1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence


from .core import Point2, RigidTransform2D
from .scenario import DEFAULT_DT, DEFAULT_HORIZON, Scenario, Trajectory


@dataclass(frozen=True)
class PtcmParams:
    d_l: float = 5.0
    d_u: float = 20.0
    lambda_traj: float = 0.5
    N: int = DEFAULT_HORIZON
    dt: float = DEFAULT_DT
    v_max: float = 15.0
    r_min: float = 1.0
    r_max: float = 60.0

    def __post_init__(self):
        if not 0 < self.d_l < self.d_u:
            raise ValueError("need 0 < d_l < d_u")
        if not 0 < self.lambda_traj <= 1:
            raise ValueError("need 0 < lambda_traj <= 1")
        if self.N < 1:
            raise ValueError("need N >= 1")
        if self.dt <= 0:
            raise ValueError("need dt > 0")
        if not 0 < self.r_min < self.r_max:
            raise ValueError("need 0 < r_min < r_max")
        if self.v_max <= 0:
            raise ValueError("need v_max > 0")

    @property
    def e_min(self) -> float:
        return math.exp(-self.v_max) / self.r_max ** 2

    @property
    def e_max(self) -> float:
        return math.exp(self.v_max) / self.r_min ** 2


@dataclass(frozen=True)
class RelevanceReport:
    target_id: int
    T_S: float
    R_S: float
    relevance: float


def proximity_factor(d: float, params: PtcmParams = PtcmParams()) -> float:
    if d < 0:
        raise ValueError("distance must be >= 0")
    if d <= params.d_l:
        return 1.0
    if d >= params.d_u:
        return 0.0
    return (params.d_u - d) / (params.d_u - params.d_l)


def frame_weights(n: int) -> List[float]:
    """Normalised weights ``e^-k / sum_j e^-j`` for ``k = 1..n``."""
    if n < 1:
        raise ValueError("N must be >= 1")
    raw = [math.exp(-k) for k in range(1, n + 1)]
    total = math.fsum(raw)
    return [w / total for w in raw]


def _future(traj: Trajectory, n: int, start: int = 0) -> List[Point2]:
    pts = dict(traj.waypoints)
    out = []
    for k in range(start + 1, start + n + 1):
        if k not in pts:
            raise ValueError(f"trajectory horizon too short: frame {k} missing (need {n} future frames)")
        out.append(pts[k])
    return out


def trajectory_interaction_score(ego_traj: Trajectory, tgt_traj: Trajectory,
                                 params: PtcmParams = PtcmParams(), start: int = 0) -> float:
    """Weighted proximity over future frames ``start+1 .. start+N``."""
    ego = _future(ego_traj, params.N, start)
    tgt = _future(tgt_traj, params.N, start)
    weights = frame_weights(params.N)
    total = math.fsum(w * proximity_factor(math.hypot(e.x - t.x, e.y - t.y), params)
                      for w, e, t in zip(weights, ego, tgt))
    return min(params.lambda_traj * total, params.lambda_traj)


def estimate_velocity(p_infra_prev: Point2, p_infra_curr: Point2, infra_to_world_prev: RigidTransform2D,
                      infra_to_world_curr: RigidTransform2D, dt: float) -> Point2:
    """Velocity by position differencing, expressed in the current infrastructure frame."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    pw_prev = infra_to_world_prev.apply(p_infra_prev)
    pw_curr = infra_to_world_curr.apply(p_infra_curr)
    disp = ((pw_curr.x - pw_prev.x) / dt, (pw_curr.y - pw_prev.y) / dt)
    return infra_to_world_curr.inverse().rotate(disp)


def potential_energy(v_rel: float, cos_theta: float, r: float) -> float:
    if r <= 0:
        raise ValueError("r must be > 0")
    return math.exp(v_rel * cos_theta) / (r * r)


def risk_score(E: float, params: PtcmParams = PtcmParams()) -> float:
    e_min, e_max = params.e_min, params.e_max
    E = min(max(E, e_min), e_max)
    return 0.5 * (E - e_min) / (e_max - e_min)


def closing_kinematics(p_ego: Point2, v_ego, p_tgt: Point2, v_tgt) -> tuple:
    """Return ``(|v_rel|, cos θ, r)`` for a target relative to the ego.

    ``θ`` is the angle between the target's velocity relative to the ego and the
    direction from the target toward the ego, so approaching targets have
    ``cos θ > 0``. No relative motion gives ``cos θ = 0``.
    """
    vx, vy = v_tgt[0] - v_ego[0], v_tgt[1] - v_ego[1]
    ux, uy = p_ego[0] - p_tgt[0], p_ego[1] - p_tgt[1]
    r = math.hypot(ux, uy)
    speed = math.hypot(vx, vy)
    if speed < 1e-12 or r < 1e-12:
        return speed, 0.0, r
    cos_t = (vx * ux + vy * uy) / (speed * r)
    return speed, max(-1.0, min(1.0, cos_t)), r


def _velocity_pair(frame: int, frames: Sequence[int]) -> tuple:
    if frame - 1 in frames:
        return frame - 1, frame
    if frame + 1 in frames:
        return frame, frame + 1
    raise ValueError(f"need a neighbouring frame to difference around frame {frame}")


def relevance(scenario: Scenario, frame: int, target_id: int, params: PtcmParams = PtcmParams(),
              use_velocity: bool = True) -> RelevanceReport:
    if target_id == scenario.ego_id:
        raise ValueError("target must differ from the ego")
    try:
        tgt = scenario.agent(target_id)
    except KeyError:
        raise ValueError(f"unknown target {target_id}") from None
    if not tgt.trajectory.has(frame):
        raise ValueError(f"target {target_id} missing at frame {frame}")
    ego = scenario.ego
    t_s = trajectory_interaction_score(ego.trajectory, tgt.trajectory, params, start=frame)

    r_s = 0.0
    if use_velocity:
        world_to_infra = scenario.infra_pose.inverse()
        a, b = _velocity_pair(frame, tgt.trajectory.frames)
        dt = tgt.trajectory.dt

        def in_infra(agent, f):
            return world_to_infra.apply(agent.trajectory.position(f))

        v_tgt = estimate_velocity(in_infra(tgt, a), in_infra(tgt, b), scenario.infra_pose, scenario.infra_pose, dt)
        v_ego = estimate_velocity(in_infra(ego, a), in_infra(ego, b), scenario.infra_pose, scenario.infra_pose, dt)
        speed, cos_t, r = closing_kinematics(in_infra(ego, frame), v_ego, in_infra(tgt, frame), v_tgt)
        r_s = risk_score(potential_energy(speed, cos_t, max(r, params.r_min)), params)
    return RelevanceReport(target_id, t_s, r_s, min(t_s + r_s, 1.0))


def scenario_relevances(scenario: Scenario, frame: int, params: PtcmParams = PtcmParams(),
                        use_velocity: bool = True) -> List[RelevanceReport]:
    return [relevance(scenario, frame, a.id, params, use_velocity) for a in scenario.targets]
