"""Deterministic multi-agent driving world.

Vehicles are point masses with constant acceleration over one step and a
heading derived from their velocity. Bodies are oriented rectangles; two
bodies collide when a separating-axis test finds no gap (touching counts).

Everything here is a pure function of its inputs. States are immutable and
can be shared freely between trees and threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import NamedTuple, Sequence


class ScenarioError(ValueError):
    """Raised when a scenario document is malformed or violates its invariants."""


class Status(str, Enum):
    OK = "ok"
    COLLISION = "collision"
    INVALID = "invalid"


class VehicleState(NamedTuple):
    x: float
    y: float
    vx: float
    vy: float
    heading: float
    length: float
    width: float


class Obstacle(NamedTuple):
    x: float
    y: float
    length: float
    width: float
    heading: float = 0.0
    # constant longitudinal speed; 0 for static obstacles, negative for oncoming traffic
    vx: float = 0.0


class AgentAction(NamedTuple):
    ax: float
    ay: float


JointAction = tuple  # tuple[AgentAction, ...], one entry per agent id


class Road(NamedTuple):
    lane_count: int
    lane_width: float
    road_length: float
    v_max: float


class AgentGoal(NamedTuple):
    desired_velocity: float
    desired_lane: int


@dataclass(frozen=True, slots=True)
class WorldState:
    vehicles: tuple[VehicleState, ...]
    obstacles: tuple[Obstacle, ...]
    road: Road
    time_index: int = 0
    status: Status = Status.OK

    @property
    def ok(self) -> bool:
        return self.status is Status.OK


@dataclass(frozen=True)
class RewardWeights:
    """Weights of the per-agent reward terms.

    Each weight scales a penalty, so only its magnitude matters: ``w_v=-1``
    and ``w_v=1`` both subtract ``|vx' - v_desired|``.
    """

    w_coll: float = -100.0
    w_inv: float = -50.0
    w_v: float = -1.0
    w_lane: float = -0.5
    w_eff: float = -0.1


@dataclass(frozen=True)
class Scenario:
    id: str
    lane_count: int
    lane_width: float
    road_length: float
    agents: tuple[VehicleState, ...]
    goals: tuple[AgentGoal, ...]
    obstacles: tuple[Obstacle, ...] = ()
    episode_horizon: int = 10
    dt: float = 0.5
    v_max: float = 30.0
    description: str = field(default="", compare=False)

    def __post_init__(self):
        if self.lane_count < 1:
            raise ScenarioError(f"{self.id}: lane_count must be >= 1")
        if self.lane_width <= 0 or self.road_length <= 0:
            raise ScenarioError(f"{self.id}: lane_width and road_length must be > 0")
        if not self.agents:
            raise ScenarioError(f"{self.id}: at least one agent is required")
        if len(self.goals) != len(self.agents):
            raise ScenarioError(f"{self.id}: one goal per agent required")
        if self.dt <= 0 or self.episode_horizon < 1:
            raise ScenarioError(f"{self.id}: dt must be > 0 and episode_horizon >= 1")
        for i, (veh, goal) in enumerate(zip(self.agents, self.goals)):
            if veh.length <= 0 or veh.width <= 0:
                raise ScenarioError(f"{self.id}: agent {i} needs positive length and width")
            if not 0 <= goal.desired_lane < self.lane_count:
                raise ScenarioError(f"{self.id}: agent {i} desired_lane out of range")
        for j, obs in enumerate(self.obstacles):
            if obs.length <= 0 or obs.width <= 0:
                raise ScenarioError(f"{self.id}: obstacle {j} needs positive length and width")
        state = self.initial_state()
        if state.status is not Status.OK:
            raise ScenarioError(f"{self.id}: initial state is {state.status.value}")

    @property
    def road(self) -> Road:
        return Road(self.lane_count, self.lane_width, self.road_length, self.v_max)

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    def initial_state(self) -> WorldState:
        return with_status(WorldState(tuple(self.agents), tuple(self.obstacles), self.road, 0))


def wrap_angle(theta: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return (theta + math.pi) % (2.0 * math.pi) - math.pi


# --------------------------------------------------------------------------
# geometry


def rectangle_corners(x, y, length, width, heading):
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = 0.5 * length, 0.5 * width
    return (
        (x + c * hl - s * hw, y + s * hl + c * hw),
        (x - c * hl - s * hw, y - s * hl + c * hw),
        (x - c * hl + s * hw, y - s * hl - c * hw),
        (x + c * hl + s * hw, y + s * hl - c * hw),
    )


def _project(corners, ax, ay):
    lo = hi = corners[0][0] * ax + corners[0][1] * ay
    for px, py in corners[1:]:
        d = px * ax + py * ay
        if d < lo:
            lo = d
        elif d > hi:
            hi = d
    return lo, hi


def rectangles_overlap(a, b) -> bool:
    """Separating-axis test for two oriented rectangles.

    ``a`` and ``b`` are anything with ``x, y, length, width, heading``.
    Touching rectangles count as overlapping.
    """
    return _overlap(a.x, a.y, a.length, a.width, a.heading, b.x, b.y, b.length, b.width, b.heading)


def _overlap(ax_, ay_, al, aw, ah, bx, by, bl, bw, bh) -> bool:
    dx, dy = bx - ax_, by - ay_
    reach = 0.5 * (math.hypot(al, aw) + math.hypot(bl, bw))
    if dx * dx + dy * dy > reach * reach:
        return False
    ca = rectangle_corners(ax_, ay_, al, aw, ah)
    cb = rectangle_corners(bx, by, bl, bw, bh)
    for heading in (ah, bh):
        c, s = math.cos(heading), math.sin(heading)
        for ux, uy in ((c, s), (-s, c)):
            lo_a, hi_a = _project(ca, ux, uy)
            lo_b, hi_b = _project(cb, ux, uy)
            if hi_a < lo_b or hi_b < lo_a:
                return False
    return True


def collision_check(state: WorldState) -> bool:
    """True iff any vehicle pair or vehicle-obstacle pair overlaps."""
    vehicles = state.vehicles
    n = len(vehicles)
    for i in range(n):
        vi = vehicles[i]
        for j in range(i + 1, n):
            if rectangles_overlap(vi, vehicles[j]):
                return True
        for obs in state.obstacles:
            if rectangles_overlap(vi, obs):
                return True
    return False


def validity_check(state: WorldState, scenario: Scenario | None = None) -> bool:
    """True iff every vehicle is on the road and within the speed bounds.

    Road geometry comes from the state itself (lane width is an observed,
    possibly sampled feature). Passing a scenario overrides it.
    """
    road = scenario.road if scenario is not None else state.road
    y_max = road.lane_count * road.lane_width
    for v in state.vehicles:
        if not (0.0 <= v.y <= y_max and 0.0 <= v.x <= road.road_length and 0.0 <= v.vx <= road.v_max):
            return False
    return True


def with_status(state: WorldState) -> WorldState:
    """Return ``state`` with its status recomputed. Collision takes precedence over invalid."""
    if collision_check(state):
        status = Status.COLLISION
    elif not validity_check(state):
        status = Status.INVALID
    else:
        status = Status.OK
    if status is state.status:
        return state
    return replace(state, status=status)


# --------------------------------------------------------------------------
# dynamics and reward


def step(state: WorldState, action: Sequence[AgentAction], dt: float) -> WorldState:
    """Advance every vehicle by one constant-acceleration step of length ``dt``."""
    if state.status is not Status.OK:
        raise ValueError(f"cannot step a state with status {state.status.value}")
    if dt <= 0:
        raise ValueError("dt must be positive")
    if len(action) != len(state.vehicles):
        raise ValueError(f"expected {len(state.vehicles)} agent actions, got {len(action)}")
    half_dt2 = 0.5 * dt * dt
    vehicles = []
    for v, (ax, ay) in zip(state.vehicles, action):
        vx = v.vx + ax * dt
        vy = v.vy + ay * dt
        # heading is undefined at standstill; keep the previous one
        heading = math.atan2(vy, vx) if (vx != 0.0 or vy != 0.0) else v.heading
        vehicles.append(
            VehicleState(
                v.x + v.vx * dt + ax * half_dt2,
                v.y + v.vy * dt + ay * half_dt2,
                vx,
                vy,
                heading,
                v.length,
                v.width,
            )
        )
    obstacles = state.obstacles
    if obstacles and any(o.vx != 0.0 for o in obstacles):
        obstacles = tuple(o._replace(x=o.x + o.vx * dt) for o in obstacles)
    nxt = WorldState(tuple(vehicles), obstacles, state.road, state.time_index + 1)
    if collision_check(nxt):
        return replace(nxt, status=Status.COLLISION)
    if not validity_check(nxt):
        return replace(nxt, status=Status.INVALID)
    return nxt


def lane_center(lane: int, lane_width: float) -> float:
    return (lane + 0.5) * lane_width


def reward(
    state: WorldState,
    agent_action: AgentAction,
    next_state: WorldState,
    agent: int,
    weights: RewardWeights,
    goal: AgentGoal,
) -> float:
    """Agent-specific reward of the transition ``state -> next_state``."""
    v = next_state.vehicles[agent]
    r = -abs(weights.w_v) * abs(v.vx - goal.desired_velocity)
    r -= abs(weights.w_lane) * abs(v.y - lane_center(goal.desired_lane, next_state.road.lane_width))
    r -= abs(weights.w_eff) * (agent_action.ax * agent_action.ax + agent_action.ay * agent_action.ay)
    if next_state.status is Status.COLLISION:
        r -= abs(weights.w_coll)
    elif next_state.status is Status.INVALID:
        r -= abs(weights.w_inv)
    return r


@dataclass(frozen=True)
class Simulator:
    """The deterministic model a search tree plans in: dynamics, rewards, terminals."""

    goals: tuple[AgentGoal, ...]
    dt: float
    horizon: int
    weights: RewardWeights = RewardWeights()

    @classmethod
    def from_scenario(cls, scenario: Scenario, weights: RewardWeights | None = None) -> "Simulator":
        return cls(scenario.goals, scenario.dt, scenario.episode_horizon, weights or RewardWeights())

    @property
    def n_agents(self) -> int:
        return len(self.goals)

    def is_terminal(self, state: WorldState) -> bool:
        return state.status is not Status.OK or state.time_index >= self.horizon

    def step(self, state: WorldState, action: Sequence[AgentAction]) -> WorldState:
        return step(state, action, self.dt)

    def rewards(self, state: WorldState, action: Sequence[AgentAction], next_state: WorldState) -> list[float]:
        w = self.weights
        return [reward(state, a, next_state, i, w, g) for i, (a, g) in enumerate(zip(action, self.goals))]

    def random_rollout(self, state: WorldState, actions: Sequence[AgentAction], depth: int,
                       gamma: float, rand) -> list[float]:
        """Discounted per-agent return of ``depth`` uniformly random joint actions.

        Equivalent to looping :meth:`step` and :meth:`rewards` (same floating-point
        operations, same draws from ``rand``), but on flat lists, since rollouts
        dominate search time.
        """
        n = len(state.vehicles)
        returns = [0.0] * n
        if self.is_terminal(state):
            return returns
        dt = self.dt
        half_dt2 = 0.5 * dt * dt
        road = state.road
        y_max = road.lane_count * road.lane_width
        x_max, v_max = road.road_length, road.v_max
        w = self.weights
        wv, wl, we = abs(w.w_v), abs(w.w_lane), abs(w.w_eff)
        wc, wi = abs(w.w_coll), abs(w.w_inv)
        targets = [(g.desired_velocity, lane_center(g.desired_lane, road.lane_width)) for g in self.goals]
        veh = [list(v) for v in state.vehicles]
        obs = [list(o) for o in state.obstacles]
        moving = any(o[5] != 0.0 for o in obs)
        k = len(actions)
        t = state.time_index
        discount = 1.0
        for _ in range(depth):
            joint = [actions[int(rand() * k)] for _ in range(n)]
            for v, (ax, ay) in zip(veh, joint):
                x, y, vx0, vy0 = v[0], v[1], v[2], v[3]
                vx = vx0 + ax * dt
                vy = vy0 + ay * dt
                if vx != 0.0 or vy != 0.0:
                    v[4] = math.atan2(vy, vx)
                v[0] = x + vx0 * dt + ax * half_dt2
                v[1] = y + vy0 * dt + ay * half_dt2
                v[2] = vx
                v[3] = vy
            if moving:
                for o in obs:
                    o[0] = o[0] + o[5] * dt
            t += 1
            status = Status.OK
            for i in range(n):
                a = veh[i]
                for j in range(i + 1, n):
                    b = veh[j]
                    if _overlap(a[0], a[1], a[5], a[6], a[4], b[0], b[1], b[5], b[6], b[4]):
                        status = Status.COLLISION
                        break
                else:
                    for o in obs:
                        if _overlap(a[0], a[1], a[5], a[6], a[4], o[0], o[1], o[2], o[3], o[4]):
                            status = Status.COLLISION
                            break
                if status is not Status.OK:
                    break
            if status is Status.OK:
                for v in veh:
                    if not (0.0 <= v[1] <= y_max and 0.0 <= v[0] <= x_max and 0.0 <= v[2] <= v_max):
                        status = Status.INVALID
                        break
            for i in range(n):
                v, (ax, ay), (v_des, y_des) = veh[i], joint[i], targets[i]
                r = -wv * abs(v[2] - v_des)
                r -= wl * abs(v[1] - y_des)
                r -= we * (ax * ax + ay * ay)
                if status is Status.COLLISION:
                    r -= wc
                elif status is Status.INVALID:
                    r -= wi
                returns[i] += discount * r
            if status is not Status.OK or t >= self.horizon:
                break
            discount *= gamma
        return returns


# --------------------------------------------------------------------------
# scenario files


def _vehicle_from_dict(d: dict) -> VehicleState:
    return VehicleState(
        float(d["x"]),
        float(d["y"]),
        float(d.get("vx", 0.0)),
        float(d.get("vy", 0.0)),
        float(d.get("heading", 0.0)),
        float(d.get("length", 4.5)),
        float(d.get("width", 1.8)),
    )


def scenario_from_dict(doc: dict, source: str = "<dict>") -> Scenario:
    try:
        agents, goals = [], []
        for i, entry in enumerate(doc["agents"]):
            if "state" not in entry:
                raise ScenarioError(f"{source}: agents[{i}] is missing field 'state'")
            agents.append(_vehicle_from_dict(entry["state"]))
            goals.append(AgentGoal(float(entry["desired_velocity"]), int(entry["desired_lane"])))
        obstacles = tuple(
            Obstacle(
                float(o["x"]),
                float(o["y"]),
                float(o["length"]),
                float(o["width"]),
                float(o.get("heading", 0.0)),
                float(o.get("vx", 0.0)),
            )
            for o in doc.get("obstacles", [])
        )
        return Scenario(
            id=str(doc["id"]),
            lane_count=int(doc["lane_count"]),
            lane_width=float(doc["lane_width"]),
            road_length=float(doc["road_length"]),
            agents=tuple(agents),
            goals=tuple(goals),
            obstacles=obstacles,
            episode_horizon=int(doc.get("episode_horizon", 10)),
            dt=float(doc.get("dt", 0.5)),
            v_max=float(doc.get("v_max", 30.0)),
            description=str(doc.get("description", "")),
        )
    except KeyError as exc:
        raise ScenarioError(f"{source}: missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"{source}: {exc}") from None


def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "id": scenario.id,
        "description": scenario.description,
        "lane_count": scenario.lane_count,
        "lane_width": scenario.lane_width,
        "road_length": scenario.road_length,
        "v_max": scenario.v_max,
        "episode_horizon": scenario.episode_horizon,
        "dt": scenario.dt,
        "agents": [
            {"state": v._asdict(), "desired_velocity": g.desired_velocity, "desired_lane": g.desired_lane}
            for v, g in zip(scenario.agents, scenario.goals)
        ],
        "obstacles": [o._asdict() for o in scenario.obstacles],
    }


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return scenario_from_dict(doc, source=str(path))


SCENARIO_DIR = Path(__file__).parent / "scenarios"


def builtin_scenarios() -> dict[str, Scenario]:
    """All scenario files shipped with the package, keyed by id."""
    out = {}
    for path in sorted(SCENARIO_DIR.glob("*.json")):
        sc = load_scenario(path)
        out[sc.id] = sc
    return out
