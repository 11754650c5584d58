"""Experiment configuration: every tunable constant in one JSON document."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .belief import NoiseProfile, WideningConfig
from .mcts import MctsConfig
from .planner import PlannerConfig
from .risk import RiskConfig
from .world import AgentAction, RewardWeights

DEFAULT_NOISE = {
    "vehicle": {"x": 0.5, "y": 0.25, "vx": 0.3, "vy": 0.1, "length": 0.2, "width": 0.1, "heading": 0.02},
    "obstacle": {"x": 0.75, "y": 0.3, "length": 0.3, "width": 0.2, "heading": 0.02},
    "lane_width": 0.05,
}


def _default_profiles() -> dict[str, NoiseProfile]:
    return {"default": NoiseProfile.from_dict(DEFAULT_NOISE), "off": NoiseProfile.off()}


@dataclass(frozen=True)
class Config:
    reward: RewardWeights = RewardWeights()
    widening: WideningConfig = WideningConfig()
    mcts: MctsConfig = MctsConfig()
    risk: RiskConfig = RiskConfig()
    default_action: AgentAction = AgentAction(0.0, 0.0)
    noise_profiles: dict = field(default_factory=_default_profiles)
    noise_on_profile: str = "default"

    def planner(self, policy: str, iterations: int) -> PlannerConfig:
        return PlannerConfig(iterations, policy, self.widening, self.mcts, self.risk, self.default_action)

    def noise(self, setting: str) -> NoiseProfile:
        """Profile for a noise setting: ``on``, ``off`` or a profile name."""
        name = {"on": self.noise_on_profile}.get(setting, setting)
        if name == "off":
            return NoiseProfile.off()
        try:
            return self.noise_profiles[name]
        except KeyError:
            raise KeyError(f"unknown noise profile {name!r}") from None

    def to_dict(self) -> dict:
        mcts = asdict(self.mcts)
        mcts["ax_set"], mcts["ay_set"] = list(self.mcts.ax_set), list(self.mcts.ay_set)
        return {
            "reward": asdict(self.reward),
            "widening": asdict(self.widening),
            "mcts": mcts,
            "risk": asdict(self.risk),
            "default_action": list(self.default_action),
            "noise_profiles": {k: v.to_dict() for k, v in self.noise_profiles.items()},
            "noise_on_profile": self.noise_on_profile,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Config":
        def section(klass, key):
            data = dict(doc.get(key, {}))
            known = {f.name for f in fields(klass)}
            unknown = set(data) - known
            if unknown:
                raise ValueError(f"unknown keys in section {key!r}: {sorted(unknown)}")
            for name in ("ax_set", "ay_set"):
                if name in data:
                    data[name] = tuple(float(v) for v in data[name])
            return klass(**data)

        cfg = cls(
            reward=section(RewardWeights, "reward"),
            widening=section(WideningConfig, "widening"),
            mcts=section(MctsConfig, "mcts"),
            risk=section(RiskConfig, "risk"),
            default_action=AgentAction(*map(float, doc.get("default_action", (0.0, 0.0)))),
            noise_on_profile=doc.get("noise_on_profile", "default"),
        )
        if "noise_profiles" in doc:
            profiles = _default_profiles()
            profiles.update({k: NoiseProfile.from_dict(v) for k, v in doc["noise_profiles"].items()})
            cfg = replace(cfg, noise_profiles=profiles)
        return cfg


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    return Config.from_dict(json.loads(Path(path).read_text()))
