"""Synthetic traffic scenarios: agents, kinematic plans, templates and file I/O."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import DEFAULT_SPEC, Point2, RigidTransform2D

FORMAT_VERSION = 1
DEFAULT_DT = 0.5
DEFAULT_HORIZON = 6
DEFAULT_FRAMES = DEFAULT_HORIZON + 2  # one past frame for velocity, one current, N future

LANE = 1.75  # lane center offset from the road axis
GRID_MARGIN = 1.0


class ScenarioError(ValueError):
    pass


class ScenarioFormatError(ScenarioError):
    """Malformed scenario file (bad JSON, missing or mistyped field)."""


class ScenarioInvariantError(ScenarioError):
    """Well-formed scenario data that violates a domain invariant."""


class DrivingIntent(enum.Enum):
    TURN_LEFT = "TurnLeft"
    TURN_RIGHT = "TurnRight"
    GO_STRAIGHT = "GoStraight"
    STOP = "Stop"

    @property
    def ordinal(self) -> int:
        return list(DrivingIntent).index(self)


class AgentClass(enum.Enum):
    CAR = "Car"
    TRUCK = "Truck"
    PEDESTRIAN = "Pedestrian"
    CYCLIST = "Cyclist"


FOOTPRINTS = {
    AgentClass.CAR: (4.5, 1.8),
    AgentClass.TRUCK: (8.0, 2.5),
    AgentClass.PEDESTRIAN: (0.6, 0.6),
    AgentClass.CYCLIST: (1.8, 0.6),
}


class Template(enum.Enum):
    INTERSECTION = "Intersection"
    ONCOMING = "Oncoming"
    OCCLUDED_CROSSING = "OccludedCrossing"

    @classmethod
    def parse(cls, name: Union[str, "Template"]) -> "Template":
        if isinstance(name, Template):
            return name
        for t in cls:
            if name in (t.value, t.name, t.value.lower()):
                return t
        raise ScenarioError(f"unknown template {name!r}; expected one of {[t.value for t in cls]}")


@dataclass(frozen=True)
class AgentState:
    id: int
    length: float
    width: float
    x: float
    y: float
    heading: float
    speed: float
    cls: AgentClass = AgentClass.CAR

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0:
            raise ScenarioInvariantError(f"agent {self.id}: footprint must be positive")
        if self.speed < 0:
            raise ScenarioInvariantError(f"agent {self.id}: speed must be >= 0")

    @property
    def position(self) -> Point2:
        return Point2(self.x, self.y)


def _chord_angle(a: Point2, b: Point2, fallback):
    dx, dy = b[0] - a[0], b[1] - a[1]
    if math.hypot(dx, dy) < 1e-9:
        return fallback
    return math.atan2(dy, dx)


@dataclass(frozen=True)
class Trajectory:
    waypoints: Tuple[Tuple[int, Point2], ...]
    dt: float = DEFAULT_DT

    def __post_init__(self):
        wps = tuple((int(f), Point2(float(p[0]), float(p[1]))) for f, p in self.waypoints)
        object.__setattr__(self, "waypoints", wps)
        if self.dt <= 0:
            raise ScenarioInvariantError("trajectory dt must be > 0")
        frames = [f for f, _ in wps]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ScenarioInvariantError("trajectory frame indices must be strictly increasing")

    def __len__(self) -> int:
        return len(self.waypoints)

    @property
    def frames(self) -> List[int]:
        return [f for f, _ in self.waypoints]

    def position(self, frame: int) -> Point2:
        for f, p in self.waypoints:
            if f == frame:
                return p
        raise KeyError(frame)

    def has(self, frame: int) -> bool:
        return any(f == frame for f, _ in self.waypoints)

    def heading(self, frame: int, fallback: float = 0.0) -> float:
        """Tangent direction at ``frame`` from the neighbouring waypoints.

        The symmetric chord is parallel to the tangent of a circular arc, so
        interior headings are exact for constant-curvature motion.
        """
        pts = dict(self.waypoints)
        prev, nxt = pts.get(frame - 1), pts.get(frame + 1)
        here = pts[frame]
        if prev is not None and nxt is not None:
            return _chord_angle(prev, nxt, fallback)
        # endpoints: extend the turn of the last two chords by half a step,
        # which is exact on a uniformly sampled arc
        if nxt is not None:
            a1 = _chord_angle(here, nxt, None)
            nn = pts.get(frame + 2)
            a2 = _chord_angle(nxt, nn, None) if nn is not None else None
        elif prev is not None:
            a1 = _chord_angle(prev, here, None)
            pp = pts.get(frame - 2)
            a2 = _chord_angle(pp, prev, None) if pp is not None else None
        else:
            return fallback
        if a1 is None:
            return fallback
        if a2 is None:
            return a1
        turn = math.remainder(a1 - a2, 2 * math.pi)
        return math.remainder(a1 + 0.5 * turn, 2 * math.pi)


@dataclass(frozen=True)
class Agent:
    state: AgentState
    trajectory: Trajectory

    @property
    def id(self) -> int:
        return self.state.id


@dataclass(frozen=True)
class Rect:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ScenarioInvariantError(f"degenerate obstacle {self}")

    def contains(self, p: Point2) -> bool:
        return self.x_min <= p[0] <= self.x_max and self.y_min <= p[1] <= self.y_max


@dataclass(frozen=True)
class Scenario:
    agents: Tuple[Agent, ...]
    ego_id: int
    ego_intent: DrivingIntent
    infra_pose: RigidTransform2D
    static_obstacles: Tuple[Rect, ...] = ()
    frames: int = DEFAULT_FRAMES
    seed: int = 0
    template: str = ""

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "static_obstacles", tuple(self.static_obstacles))
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ScenarioInvariantError("agent ids must be unique")
        if self.ego_id not in ids:
            raise ScenarioInvariantError(f"ego_id {self.ego_id} is not among the agents")
        for a in self.agents:
            if a.trajectory.frames != list(range(self.frames)):
                raise ScenarioInvariantError(f"agent {a.id}: trajectory must span frames 0..{self.frames - 1}")

    @property
    def dt(self) -> float:
        return self.agents[0].trajectory.dt

    @property
    def ego(self) -> Agent:
        return self.agent(self.ego_id)

    def agent(self, agent_id: int) -> Agent:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(agent_id)

    @property
    def targets(self) -> List[Agent]:
        return [a for a in self.agents if a.id != self.ego_id]

    def pose(self, agent_id: int, frame: int) -> Tuple[Point2, float]:
        a = self.agent(agent_id)
        return a.trajectory.position(frame), a.trajectory.heading(frame, a.state.heading)


# --- planning ---------------------------------------------------------------

def plan_trajectory(state: AgentState, intent: DrivingIntent, n: int, dt: float = DEFAULT_DT,
                    start_frame: int = 0) -> Trajectory:
    """Plan ``n`` future waypoints from ``state`` following ``intent``.

    Turns sweep the heading by a quarter circle over the whole horizon along a
    constant-curvature arc; ``Stop`` brakes linearly to rest at the last
    waypoint.
    """
    if n < 1:
        raise ValueError("horizon must be >= 1")
    x0, y0, h0, v = state.x, state.y, state.heading, state.speed
    total = v * n * dt
    pts = []
    for k in range(1, n + 1):
        if intent in (DrivingIntent.TURN_LEFT, DrivingIntent.TURN_RIGHT) and total > 0:
            sign = 1.0 if intent is DrivingIntent.TURN_LEFT else -1.0
            kappa = sign * (math.pi / 2) / total
            s = v * k * dt
            h = h0 + kappa * s
            x = x0 + (math.sin(h) - math.sin(h0)) / kappa
            y = y0 - (math.cos(h) - math.cos(h0)) / kappa
        else:
            if intent is DrivingIntent.STOP:
                s = v * dt * (k - k * k / (2.0 * n))
            else:
                s = v * k * dt
            x = x0 + s * math.cos(h0)
            y = y0 + s * math.sin(h0)
        pts.append((start_frame + k, Point2(x, y)))
    return Trajectory(tuple(pts), dt)


def plan_ego_trajectory(scenario: Scenario, intent: DrivingIntent, n: int = DEFAULT_HORIZON,
                        dt: float = DEFAULT_DT) -> Trajectory:
    return plan_trajectory(scenario.ego.state, intent, n, dt)


# --- generation -------------------------------------------------------------

def _q(v: float) -> float:
    """Round to the 9 significant digits used on disk."""
    return float(f"{float(v):.9g}")


def _build_agent(state: AgentState, intent: DrivingIntent, frames: int, dt: float,
                 rng: Optional[np.random.Generator] = None, jitter: float = 0.0) -> Agent:
    state = replace(state, x=_q(state.x), y=_q(state.y), heading=_q(state.heading), speed=_q(state.speed),
                    length=_q(state.length), width=_q(state.width))
    plan = plan_trajectory(state, intent, frames - 1, dt) if frames > 1 else Trajectory((), dt)
    wps = [(0, state.position)]
    for f, p in plan.waypoints:
        if jitter > 0 and rng is not None:
            p = p + (rng.normal(0.0, jitter), rng.normal(0.0, jitter))
        wps.append((f, Point2(_q(p.x), _q(p.y))))
    return Agent(state, Trajectory(tuple(wps), dt))


def _inside_grid(agent: Agent, margin: float = GRID_MARGIN) -> bool:
    lim = DEFAULT_SPEC.x_max - margin
    return all(abs(p.x) < lim and abs(p.y) < lim for _, p in agent.trajectory.waypoints)


def _clear_of(agent: Agent, others: Sequence[Agent], min_gap: float) -> bool:
    for o in others:
        for (_, p), (_, q) in zip(agent.trajectory.waypoints, o.trajectory.waypoints):
            if (p - q).norm() < min_gap:
                return False
    return True


def _corner_blocks(inner: float, outer: float = 45.0) -> Tuple[Rect, ...]:
    return (Rect(inner, inner, outer, outer), Rect(-outer, inner, -inner, outer),
            Rect(-outer, -outer, -inner, -inner), Rect(inner, -outer, outer, -inner))


# inbound lane start for each approach: (unit direction toward center, lane center offset)
_ARMS = {
    "W": (0.0, (-1.0, -LANE)),
    "E": (math.pi, (1.0, LANE)),
    "S": (math.pi / 2, (LANE, -1.0)),
    "N": (-math.pi / 2, (-LANE, 1.0)),
}


def _arm_state(agent_id: int, arm: str, dist: float, speed: float, cls: AgentClass) -> AgentState:
    heading, (ax, ay) = _ARMS[arm]
    if arm in ("W", "E"):
        x, y = ax * dist, ay
    else:
        x, y = ax, ay * dist
    length, width = FOOTPRINTS[cls]
    return AgentState(agent_id, length, width, x, y, heading, speed, cls)


def _random_class(rng: np.random.Generator) -> AgentClass:
    return [AgentClass.CAR, AgentClass.TRUCK, AgentClass.CYCLIST, AgentClass.PEDESTRIAN][
        int(rng.choice(4, p=[0.6, 0.1, 0.15, 0.15]))]


def _speed_for(cls: AgentClass, rng: np.random.Generator) -> float:
    if cls is AgentClass.PEDESTRIAN:
        return rng.uniform(0.8, 1.8)
    if cls is AgentClass.CYCLIST:
        return rng.uniform(2.0, 5.0)
    return rng.uniform(3.0, 9.0)


def _add_background(agents: List[Agent], rng: np.random.Generator, count: int, frames: int, dt: float,
                    arms: Sequence[str], dist_range: Tuple[float, float], min_gap: float,
                    jitter: float, avoid: Sequence[Rect] = ()) -> None:
    next_id = max(a.id for a in agents) + 1
    intents = list(DrivingIntent)
    for _ in range(count):
        for _attempt in range(500):
            cls = _random_class(rng)
            arm = arms[int(rng.integers(len(arms)))]
            state = _arm_state(next_id, arm, rng.uniform(*dist_range), _speed_for(cls, rng), cls)
            intent = intents[int(rng.integers(len(intents)))]
            agent = _build_agent(state, intent, frames, dt, rng, jitter)
            if (_inside_grid(agent) and _clear_of(agent, agents, min_gap)
                    and not any(r.contains(p) for r in avoid for _, p in agent.trajectory.waypoints)):
                agents.append(agent)
                next_id += 1
                break
        else:
            raise ScenarioError("could not place a background agent without conflicts")


def _gen_intersection(rng, n_agents, frames, dt, jitter):
    intent = list(DrivingIntent)[int(rng.integers(4))]
    ego_state = _arm_state(0, "W", rng.uniform(12.0, 28.0), rng.uniform(4.0, 9.0), AgentClass.CAR)
    agents = [_build_agent(ego_state, intent, frames, dt, rng, jitter)]
    blocks = _corner_blocks(7.0)
    _add_background(agents, rng, n_agents - 1, frames, dt, ["W", "E", "S", "N"], (10.0, 34.0), 7.0, jitter, blocks)
    infra = RigidTransform2D.from_yaw(_q(rng.uniform(-math.pi, math.pi)), _q(rng.uniform(-6.0, 6.0)),
                                      _q(rng.uniform(-6.0, 6.0)))
    return agents, intent, infra, blocks


def _gen_oncoming(rng, n_agents, frames, dt, jitter):
    intent = [DrivingIntent.TURN_LEFT, DrivingIntent.GO_STRAIGHT][int(rng.integers(2))]
    ego_state = _arm_state(0, "W", rng.uniform(10.0, 22.0), rng.uniform(4.0, 8.0), AgentClass.CAR)
    agents = [_build_agent(ego_state, intent, frames, dt, rng, jitter)]
    if n_agents > 1:
        # a lead oncoming truck screens the traffic queued behind it
        truck = _arm_state(1, "E", rng.uniform(12.0, 18.0), rng.uniform(3.0, 6.0), AgentClass.TRUCK)
        agents.append(_build_agent(truck, DrivingIntent.GO_STRAIGHT, frames, dt, rng, jitter))
    blocks = (Rect(-45.0, 8.0, -8.0, 45.0), Rect(8.0, -45.0, 45.0, -8.0))
    _add_background(agents, rng, max(0, n_agents - 2), frames, dt, ["E", "S", "N"], (22.0, 38.0), 7.0, jitter, blocks)
    infra = RigidTransform2D.from_yaw(_q(rng.uniform(-math.pi, math.pi)), _q(rng.uniform(3.0, 7.0)),
                                      _q(rng.uniform(-7.0, -3.0)))
    return agents, intent, infra, blocks


def _gen_occluded_crossing(rng, n_agents, frames, dt, jitter):
    # Blind corner: ego eastbound and a northbound car on a collision course at
    # the shared conflict point, screened by the south-west building. Both are
    # 6-8 m from the conflict point one frame in.
    if n_agents < 2:
        raise ScenarioError("OccludedCrossing needs n_agents >= 2 (ego plus the hidden crossing car)")
    intent = DrivingIntent.GO_STRAIGHT
    v_ego, v_tgt = rng.uniform(13.2, 14.0), rng.uniform(13.2, 14.0)
    d_ego, d_tgt = rng.uniform(6.0, 8.0), rng.uniform(6.0, 8.0)
    ego_state = AgentState(0, 4.5, 1.8, LANE - d_ego - v_ego * dt, -LANE, 0.0, v_ego)
    agents = [_build_agent(ego_state, intent, frames, dt)]
    hidden = AgentState(1, 4.5, 1.8, LANE, -LANE - d_tgt - v_tgt * dt, math.pi / 2, v_tgt)
    agents.append(_build_agent(hidden, DrivingIntent.GO_STRAIGHT, frames, dt))
    blocks = (Rect(-45.0, -45.0, 0.0, -3.6),  # occluding building
              Rect(-45.0, 8.0, -8.0, 45.0), Rect(8.0, 8.0, 45.0, 45.0))
    # background traffic on the far arms stays clear of the corner
    _add_background(agents, rng, max(0, n_agents - 2), frames, dt, ["E", "N"], (24.0, 38.0), 3.0, jitter, blocks)
    infra = RigidTransform2D.from_yaw(_q(rng.uniform(-math.pi, math.pi)), _q(rng.uniform(8.0, 10.0)),
                                      _q(rng.uniform(-16.0, -13.0)))
    return agents, intent, infra, blocks


_GENERATORS = {
    Template.INTERSECTION: _gen_intersection,
    Template.ONCOMING: _gen_oncoming,
    Template.OCCLUDED_CROSSING: _gen_occluded_crossing,
}


def generate_scenario(template: Union[str, Template], seed: int, n_agents: int,
                      frames: int = DEFAULT_FRAMES, dt: float = DEFAULT_DT, jitter: float = 0.0) -> Scenario:
    """Build a scenario as a pure function of ``(template, seed, n_agents)``.

    Agent 0 is always the ego. All numeric fields are pre-rounded to the
    on-disk precision so a save/load round trip is exact.
    """
    tpl = Template.parse(template)
    if n_agents < 1:
        raise ScenarioError("n_agents must be >= 1")
    if frames < 2:
        raise ScenarioError("frames must be >= 2")
    rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
    agents, intent, infra, blocks = _GENERATORS[tpl](rng, n_agents, frames, dt, jitter)
    return Scenario(tuple(agents), 0, intent, infra, tuple(blocks), frames, int(seed), tpl.value)


def transform_scenario(scenario: Scenario, t: RigidTransform2D) -> Scenario:
    """Apply one global rigid motion to every pose, path and the infrastructure frame.

    Obstacles are axis-aligned, so rotated ones are replaced by their bounding
    boxes; relevance scoring never looks at obstacles.
    """
    agents = []
    for a in scenario.agents:
        p = t.apply(a.state.position)
        state = replace(a.state, x=p.x, y=p.y, heading=a.state.heading + t.yaw)
        wps = tuple((f, t.apply(q)) for f, q in a.trajectory.waypoints)
        agents.append(Agent(state, Trajectory(wps, a.trajectory.dt)))
    rects = []
    for r in scenario.static_obstacles:
        corners = t.apply_array(np.array([[r.x_min, r.y_min], [r.x_max, r.y_min],
                                          [r.x_max, r.y_max], [r.x_min, r.y_max]]))
        lo, hi = corners.min(axis=0), corners.max(axis=0)
        rects.append(Rect(lo[0], lo[1], hi[0], hi[1]))
    return replace(scenario, agents=tuple(agents), infra_pose=t.compose(scenario.infra_pose),
                   static_obstacles=tuple(rects))


# --- file I/O ---------------------------------------------------------------

def _num(v: float):
    v = float(v)
    r = float(f"{v:.9g}")
    return int(r) if r.is_integer() and abs(r) < 1e15 else r


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "template": s.template,
        "seed": int(s.seed),
        "frames": s.frames,
        "dt": _num(s.dt),
        "ego_id": s.ego_id,
        "ego_intent": s.ego_intent.value,
        "infra_pose": {"yaw": _num(s.infra_pose.yaw), "x": _num(s.infra_pose.translation.x),
                       "y": _num(s.infra_pose.translation.y)},
        "static_obstacles": [{"x_min": _num(r.x_min), "y_min": _num(r.y_min),
                              "x_max": _num(r.x_max), "y_max": _num(r.y_max)} for r in s.static_obstacles],
        "agents": [{
            "id": a.id,
            "class": a.state.cls.value,
            "length": _num(a.state.length),
            "width": _num(a.state.width),
            "x": _num(a.state.x),
            "y": _num(a.state.y),
            "heading": _num(a.state.heading),
            "speed": _num(a.state.speed),
            "trajectory": [[f, _num(p.x), _num(p.y)] for f, p in a.trajectory.waypoints],
        } for a in s.agents],
    }


def dumps_scenario(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), indent=1) + "\n"


def save_scenario(scenario: Scenario, path: Union[str, Path]) -> None:
    Path(path).write_text(dumps_scenario(scenario), encoding="utf-8")


def _field(obj: dict, key: str, where: str, kind=(int, float)):
    if not isinstance(obj, dict):
        raise ScenarioFormatError(f"{where}: expected an object")
    if key not in obj:
        raise ScenarioFormatError(f"{where}: missing field '{key}'")
    v = obj[key]
    if kind is not None and (not isinstance(v, kind) or isinstance(v, bool)):
        raise ScenarioFormatError(f"{where}.{key}: expected {getattr(kind, '__name__', 'number')}, got {v!r}")
    return v


def _enum(cls, value, where):
    try:
        return cls(value)
    except ValueError:
        raise ScenarioFormatError(f"{where}: unknown value {value!r}") from None


def scenario_from_dict(d: dict) -> Scenario:
    version = _field(d, "format_version", "scenario", int)
    if version != FORMAT_VERSION:
        raise ScenarioFormatError(f"scenario.format_version: unsupported version {version}")
    frames = _field(d, "frames", "scenario", int)
    dt = float(_field(d, "dt", "scenario"))
    ego_id = _field(d, "ego_id", "scenario", int)
    intent = _enum(DrivingIntent, _field(d, "ego_intent", "scenario", str), "scenario.ego_intent")
    ip = _field(d, "infra_pose", "scenario", dict)
    infra = RigidTransform2D.from_yaw(float(_field(ip, "yaw", "infra_pose")), float(_field(ip, "x", "infra_pose")),
                                      float(_field(ip, "y", "infra_pose")))
    rects = []
    for i, r in enumerate(_field(d, "static_obstacles", "scenario", list)):
        where = f"static_obstacles[{i}]"
        rects.append(Rect(*(float(_field(r, k, where)) for k in ("x_min", "y_min", "x_max", "y_max"))))
    agents = []
    for i, a in enumerate(_field(d, "agents", "scenario", list)):
        where = f"agents[{i}]"
        cls = _enum(AgentClass, _field(a, "class", where, str), f"{where}.class")
        state = AgentState(_field(a, "id", where, int), *(float(_field(a, k, where)) for k in
                           ("length", "width", "x", "y", "heading", "speed")), cls=cls)
        wps = []
        for j, w in enumerate(_field(a, "trajectory", where, list)):
            if not (isinstance(w, list) and len(w) == 3 and isinstance(w[0], int)):
                raise ScenarioFormatError(f"{where}.trajectory[{j}]: expected [frame, x, y]")
            wps.append((w[0], Point2(float(w[1]), float(w[2]))))
        try:
            traj = Trajectory(tuple(wps), dt)
        except ScenarioInvariantError as exc:
            raise ScenarioInvariantError(f"{where}.trajectory: {exc}") from None
        agents.append(Agent(state, traj))
    return Scenario(tuple(agents), ego_id, intent, infra, tuple(rects), frames,
                    _field(d, "seed", "scenario", int), str(d.get("template", "")))


def loads_scenario(text: str) -> Scenario:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return scenario_from_dict(d)


def load_scenario(path: Union[str, Path]) -> Scenario:
    try:
        return loads_scenario(Path(path).read_text(encoding="utf-8"))
    except ScenarioError as exc:
        raise type(exc)(f"{path}: {exc}") from None


def scenario_suite(template: Union[str, Template], seed: int, count: int, n_agents: int,
                   frames: int = DEFAULT_FRAMES) -> List[Scenario]:
    return [generate_scenario(template, seed + i, n_agents, frames) for i in range(count)]
