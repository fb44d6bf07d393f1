"""Small hand-built scenarios for unit tests."""

from __future__ import annotations

from typing import Sequence, Tuple

from riskselect.core import Point2, RigidTransform2D
from riskselect.scenario import Agent, AgentClass, AgentState, DrivingIntent, Rect, Scenario, Trajectory


def moving_agent(agent_id: int, path: Sequence[Tuple[float, float]], heading: float = 0.0,
                 length: float = 4.5, width: float = 1.8, speed: float = 0.0, dt: float = 0.5) -> Agent:
    x0, y0 = path[0]
    state = AgentState(agent_id, length, width, x0, y0, heading, speed, AgentClass.CAR)
    return Agent(state, Trajectory(tuple((f, Point2(*p)) for f, p in enumerate(path)), dt))


def static_agent(agent_id: int, x: float, y: float, frames: int = 2, **kw) -> Agent:
    return moving_agent(agent_id, [(x, y)] * frames, **kw)


def make_scenario(agents, obstacles: Sequence[Rect] = (), infra=(0.0, 0.0, 0.0),
                  intent: DrivingIntent = DrivingIntent.GO_STRAIGHT) -> Scenario:
    frames = len(agents[0].trajectory)
    yaw, x, y = infra
    return Scenario(tuple(agents), agents[0].id, intent, RigidTransform2D.from_yaw(yaw, x, y),
                    tuple(obstacles), frames)
