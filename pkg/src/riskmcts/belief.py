"""Gaussian root belief, noisy observations and start-state sampling.

The belief is a diagonal Gaussian over a flat vector of observed features
(vehicle poses, velocities and extents, obstacle poses and extents, lane
width). Start states are drawn from that Gaussian with the covariance
inflated by a factor that grows with the number of rejected draws.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, replace
from typing import Iterable, NamedTuple, Sequence

from .world import Obstacle, Status, VehicleState, WorldState, with_status, wrap_angle

VEHICLE_FEATURES = ("x", "y", "vx", "vy", "length", "width", "heading")
OBSTACLE_FEATURES = ("x", "y", "length", "width", "heading")
ROAD_ENTITY = "road"
MIN_EXTENT = 0.1


class ConfigurationError(ValueError):
    pass


class SamplingExhausted(RuntimeError):
    """No valid, collision-free start state within the attempt budget.

    ``last_state`` holds the final rejected draw so callers can still record it.
    """

    def __init__(self, attempts: int, last_state: WorldState | None = None):
        super().__init__(f"no feasible start state after {attempts} attempts")
        self.attempts = attempts
        self.last_state = last_state


class NoValidStartState(RuntimeError):
    pass


def agent_entity(i: int) -> str:
    return f"agent{i}"


def obstacle_entity(j: int) -> str:
    return f"obstacle{j}"


class Feature(NamedTuple):
    entity: str
    name: str
    sigma: float


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[Feature, ...]

    def __post_init__(self):
        seen = set()
        for f in self.features:
            if f.sigma < 0:
                raise ConfigurationError(f"negative sigma for {f.entity}.{f.name}")
            key = (f.entity, f.name)
            if key in seen:
                raise ConfigurationError(f"duplicate feature {f.entity}.{f.name}")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.features)

    def __iter__(self):
        return iter(self.features)

    @property
    def sigmas(self) -> tuple[float, ...]:
        return tuple(f.sigma for f in self.features)


@dataclass(frozen=True)
class NoiseProfile:
    """Per-feature standard deviations of the simulated sensors."""

    vehicle: dict
    obstacle: dict
    lane_width: float = 0.0

    @classmethod
    def off(cls) -> "NoiseProfile":
        return cls({k: 0.0 for k in VEHICLE_FEATURES}, {k: 0.0 for k in OBSTACLE_FEATURES}, 0.0)

    @classmethod
    def from_dict(cls, doc: dict) -> "NoiseProfile":
        vehicle = {k: float(doc.get("vehicle", {}).get(k, 0.0)) for k in VEHICLE_FEATURES}
        obstacle = {k: float(doc.get("obstacle", {}).get(k, 0.0)) for k in OBSTACLE_FEATURES}
        unknown = set(doc.get("vehicle", {})) - set(VEHICLE_FEATURES)
        unknown |= set(doc.get("obstacle", {})) - set(OBSTACLE_FEATURES)
        if unknown:
            raise ConfigurationError(f"unknown noise features: {sorted(unknown)}")
        return cls(vehicle, obstacle, float(doc.get("lane_width", 0.0)))

    def to_dict(self) -> dict:
        return {"vehicle": dict(self.vehicle), "obstacle": dict(self.obstacle), "lane_width": self.lane_width}

    def schema_for(self, state: WorldState) -> FeatureSchema:
        features = []
        for i in range(len(state.vehicles)):
            features += [Feature(agent_entity(i), k, self.vehicle[k]) for k in VEHICLE_FEATURES]
        for j in range(len(state.obstacles)):
            features += [Feature(obstacle_entity(j), k, self.obstacle[k]) for k in OBSTACLE_FEATURES]
        features.append(Feature(ROAD_ENTITY, "lane_width", self.lane_width))
        return FeatureSchema(tuple(features))


def _entity_value(state: WorldState, entity: str, name: str) -> float:
    if entity == ROAD_ENTITY:
        if name != "lane_width":
            raise ConfigurationError(f"unknown road feature {name!r}")
        return state.road.lane_width
    if entity.startswith("agent"):
        items, allowed, suffix = state.vehicles, VEHICLE_FEATURES, entity[5:]
    elif entity.startswith("obstacle"):
        items, allowed, suffix = state.obstacles, OBSTACLE_FEATURES, entity[8:]
    else:
        raise ConfigurationError(f"unknown entity {entity!r}")
    try:
        item = items[int(suffix)]
    except (ValueError, IndexError):
        raise ConfigurationError(f"entity {entity!r} does not exist in state") from None
    if name not in allowed:
        raise ConfigurationError(f"entity {entity!r} has no feature {name!r}")
    return float(getattr(item, name))


def features_of(state: WorldState, schema: FeatureSchema) -> list[float]:
    return [_entity_value(state, f.entity, f.name) for f in schema]


def state_from_features(values: Sequence[float], schema: FeatureSchema, template: WorldState) -> WorldState:
    """Write feature values into ``template`` and recompute the status.

    Extents are floored at 0.1 m and headings wrapped to [-pi, pi).
    """
    vehicles = [v._asdict() for v in template.vehicles]
    obstacles = [o._asdict() for o in template.obstacles]
    lane_width = template.road.lane_width
    for f, value in zip(schema, values):
        if f.name in ("length", "width"):
            value = max(value, MIN_EXTENT)
        elif f.name == "heading":
            value = wrap_angle(value)
        if f.entity == ROAD_ENTITY:
            lane_width = max(value, MIN_EXTENT)
        elif f.entity.startswith("agent"):
            vehicles[int(f.entity[5:])][f.name] = value
        else:
            obstacles[int(f.entity[8:])][f.name] = value
    state = WorldState(
        tuple(VehicleState(**v) for v in vehicles),
        tuple(Obstacle(**o) for o in obstacles),
        template.road._replace(lane_width=lane_width),
        template.time_index,
        Status.OK,
    )
    return with_status(state)


@dataclass(frozen=True)
class GaussianBelief:
    """Diagonal Gaussian over ``schema``; ``template`` carries the deterministic context
    (obstacle speeds, road extent, time index) needed to rebuild a world state."""

    mean: tuple[float, ...]
    schema: FeatureSchema
    template: WorldState

    def __post_init__(self):
        if len(self.mean) != len(self.schema):
            raise ConfigurationError("belief mean and schema differ in length")

    def mean_state(self) -> WorldState:
        return state_from_features(self.mean, self.schema, self.template)


def observe(true_state: WorldState, schema: FeatureSchema, rng: random.Random) -> GaussianBelief:
    """Simulate one unbiased measurement of ``true_state`` and wrap it as a belief."""
    truth = features_of(true_state, schema)
    mean = tuple(t + rng.gauss(0.0, f.sigma) if f.sigma > 0 else t for t, f in zip(truth, schema))
    return GaussianBelief(mean, schema, replace(true_state, status=Status.OK))


@dataclass(frozen=True)
class WideningConfig:
    c_pw: float = 0.25
    alpha_pw: float = 0.4
    c_step: float = 1.5
    c_max: float = 4.0
    l_step_size: int = 10
    max_attempts: int = 100

    def __post_init__(self):
        if self.c_pw < 0 or not 0 <= self.alpha_pw < 1:
            raise ConfigurationError("need c_pw >= 0 and alpha_pw in [0, 1)")
        if self.c_step < 0 or self.c_max < 0:
            raise ConfigurationError("need c_step >= 0 and c_max >= 0")
        if self.l_step_size < 1 or self.max_attempts < 1:
            raise ConfigurationError("need l_step_size >= 1 and max_attempts >= 1")


def should_expand(num_start_states: int, iteration: int, cfg: WideningConfig) -> bool:
    """True when the start-state set is smaller than ``c_pw * iteration**alpha_pw``."""
    if iteration < 1:
        raise ValueError("iteration counts from 1")
    return not num_start_states >= cfg.c_pw * iteration**cfg.alpha_pw


def scale_factor(l_attempt: int, cfg: WideningConfig) -> float:
    """Covariance inflation after ``l_attempt`` rejected draws."""
    return min(cfg.c_step ** (l_attempt // cfg.l_step_size), cfg.c_max)


class StartStateSampler:
    """Draws feasible start states for one planning step.

    The attempt counter is shared by all draws of the step, so start states
    created late in the search may come from a wider distribution.
    """

    def __init__(self, belief: GaussianBelief, cfg: WideningConfig, rng: random.Random):
        self.belief = belief
        self.cfg = cfg
        self.rng = rng
        self.attempts = 0
        self.factors: list[float] = []

    def draw(self, c: float) -> WorldState:
        scale = math.sqrt(c)
        gauss = self.rng.gauss
        values = [m + gauss(0.0, scale * f.sigma) if f.sigma > 0 else m for m, f in zip(self.belief.mean, self.belief.schema)]
        return state_from_features(values, self.belief.schema, self.belief.template)

    def sample(self) -> WorldState:
        last = None
        for _ in range(self.cfg.max_attempts):
            c = scale_factor(self.attempts, self.cfg)
            last = self.draw(c)
            if last.status is Status.OK:
                self.factors.append(c)
                return last
            self.attempts += 1
        raise SamplingExhausted(self.cfg.max_attempts, last)


def sample_start_state(belief: GaussianBelief, cfg: WideningConfig, rng: random.Random) -> WorldState:
    """One-shot sampling with a fresh attempt counter."""
    return StartStateSampler(belief, cfg, rng).sample()


def select_start_state(start_states: Iterable[WorldState], rng: random.Random) -> int:
    """Index of a uniformly chosen valid, collision-free start state."""
    valid = [i for i, s in enumerate(start_states) if s.status is Status.OK]
    if not valid:
        raise NoValidStartState("no valid, collision-free start state")
    if len(valid) == 1:
        return valid[0]
    return valid[rng.randrange(len(valid))]


def belief_for(state: WorldState, profile: NoiseProfile, rng: random.Random) -> GaussianBelief:
    """Observe ``state`` with the sensor noise described by ``profile``."""
    return observe(state, profile.schema_for(state), rng)
