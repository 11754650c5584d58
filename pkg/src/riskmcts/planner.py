"""Ensemble planning over sampled start states and final action selection.

``plan_step`` interleaves start-state widening with MCTS iterations: each
pass either creates a new start state (and its tree) or picks an existing
one uniformly, then runs one iteration on that tree. After the budget is
spent a final-selection policy turns the ensemble into one joint action:

* ``baseline`` - best mean return in the belief-mean tree only,
* ``krlcb``    - kernel-regression lower confidence bound over all trees,
* ``cvar``     - CCVaR over per-tree kernel-regression particles.
"""

from __future__ import annotations

import logging
import math
import random
from collections import defaultdict
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .belief import (
    GaussianBelief,
    SamplingExhausted,
    StartStateSampler,
    WideningConfig,
    select_start_state,
    should_expand,
)
from .mcts import MctsConfig, NoActionAvailable, SearchTree, baseline_best_action, run_iteration
from .risk import ActionCandidate, RiskConfig, ccvar, exploration_penalty, kernel_matrix, regression_table
from .world import AgentAction, Simulator, Status, WorldState

log = logging.getLogger(__name__)

POLICIES = ("baseline", "krlcb", "cvar")


@dataclass(frozen=True)
class PlannerConfig:
    iterations: int = 1000
    policy: str = "krlcb"
    widening: WideningConfig = WideningConfig()
    mcts: MctsConfig = MctsConfig()
    risk: RiskConfig = RiskConfig()
    default_action: AgentAction = AgentAction(0.0, 0.0)

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}; expected one of {POLICIES}")


@dataclass
class Ensemble:
    """Start states in creation order; ``trees[i]`` is ``None`` for infeasible states."""

    start_states: list[WorldState] = field(default_factory=list)
    trees: list[SearchTree | None] = field(default_factory=list)
    visits: list[int] = field(default_factory=list)
    iterations: int = 0

    def add(self, state: WorldState, tree: SearchTree | None) -> int:
        self.start_states.append(state)
        self.trees.append(tree)
        self.visits.append(0)
        return len(self.start_states) - 1

    def __len__(self) -> int:
        return len(self.start_states)

    def valid_indices(self) -> list[int]:
        return [i for i, s in enumerate(self.start_states) if s.status is Status.OK]


class PlanResult(NamedTuple):
    action: tuple[AgentAction, ...]
    flagged: bool
    ensemble: Ensemble


def _initial_state(belief: GaussianBelief, sampler: StartStateSampler) -> WorldState:
    mean = belief.mean_state()
    if mean.ok:
        return mean
    try:
        return sampler.sample()
    except SamplingExhausted as exc:
        return exc.last_state if exc.last_state is not None else mean


def build_ensemble(belief: GaussianBelief, sim: Simulator, cfg: PlannerConfig, rng: random.Random) -> Ensemble:
    """Run the interleaved widening / search loop for ``cfg.iterations`` passes."""
    sampler = StartStateSampler(belief, cfg.widening, rng)
    ensemble = Ensemble()

    def add(state: WorldState) -> int:
        tree = SearchTree(state, sim, cfg.mcts, len(ensemble)) if state.ok else None
        if tree is not None and tree.root.terminal:
            tree = None
        return ensemble.add(state, tree)

    add(_initial_state(belief, sampler))
    widen = cfg.policy != "baseline"
    for iteration in range(1, cfg.iterations + 1):
        idx = None
        if widen and should_expand(len(ensemble), iteration, cfg.widening):
            try:
                idx = add(sampler.sample())
            except SamplingExhausted as exc:
                log.debug("start-state sampling exhausted at iteration %d", iteration)
                add(exc.last_state)
        searchable = [i for i in ensemble.valid_indices() if ensemble.trees[i] is not None]
        if idx is None or ensemble.trees[idx] is None:
            if not searchable:
                continue
            pick = select_start_state([ensemble.start_states[i] for i in searchable], rng)
            idx = searchable[pick]
        run_iteration(ensemble.trees[idx], rng)
        ensemble.visits[idx] += 1
        ensemble.iterations += 1
    return ensemble


# --------------------------------------------------------------------------
# final selection


def get_action_candidates(ensemble: Ensemble, agent: int, visit_threshold: int) -> list[ActionCandidate]:
    """Root actions of ``agent`` explored more than ``visit_threshold`` times, from every
    valid, collision-free start state. The same action may appear once per start state."""
    out = []
    for sid, (state, tree) in enumerate(zip(ensemble.start_states, ensemble.trees)):
        if state.status is not Status.OK or tree is None:
            continue
        for k, n, q in tree.root_statistics(agent):
            if n > visit_threshold:
                out.append(ActionCandidate(tree.actions[k], sid, q, n, k))
    return out


def _argmax(candidates: list[ActionCandidate], scores, densities) -> ActionCandidate:
    best = max(range(len(candidates)),
               key=lambda j: (scores[j], densities[j], -candidates[j].action_index))
    return candidates[best]


def final_select_baseline(ensemble: Ensemble, cfg: PlannerConfig, n_agents: int) -> tuple[tuple[AgentAction, ...], bool]:
    tree = ensemble.trees[0] if ensemble.trees else None
    if tree is None:
        return (cfg.default_action,) * n_agents, True
    try:
        return baseline_best_action(tree), False
    except NoActionAvailable:
        return (cfg.default_action,) * n_agents, True


def krlcb_scores(candidates: list[ActionCandidate], risk: RiskConfig) -> tuple[np.ndarray, np.ndarray]:
    """KRLCB score and pooled density of every candidate."""
    dens, kr = regression_table(candidates, risk.gamma_k)
    total = float(dens.sum())
    scores = np.array([k - exploration_penalty(d, total, risk.c_lcb) for k, d in zip(kr, dens)])
    return scores, dens


def final_select_krlcb(ensemble: Ensemble, cfg: PlannerConfig, n_agents: int) -> tuple[tuple[AgentAction, ...], bool]:
    action, flagged = [], False
    for agent in range(n_agents):
        candidates = get_action_candidates(ensemble, agent, cfg.risk.visit_threshold)
        if not candidates:
            action.append(cfg.default_action)
            flagged = True
            continue
        scores, dens = krlcb_scores(candidates, cfg.risk)
        action.append(_argmax(candidates, scores, dens).action)
    return tuple(action), flagged


def return_particles(candidates: list[ActionCandidate], risk: RiskConfig) -> tuple[dict[int, list[float]], int]:
    """Per-tree kernel-regression particles for every distinct candidate action.

    Returns ``{action_index: particles}`` and the number of start states that
    contributed at least one candidate.
    """
    by_state: dict[int, list[ActionCandidate]] = defaultdict(list)
    for c in candidates:
        by_state[c.source_start_state].append(c)
    distinct: dict[int, AgentAction] = {}
    for c in candidates:
        distinct.setdefault(c.action_index, c.action)
    keys = list(distinct)
    queries = [distinct[k] for k in keys]
    particles = {k: [] for k in keys}
    for sid in sorted(by_state):
        group = by_state[sid]
        weights = kernel_matrix(queries, [c.action for c in group], risk.gamma_k)
        weights = weights * np.array([c.visit_count for c in group], dtype=float)[None, :]
        dens = weights.sum(axis=1)
        values = weights @ np.array([c.q_value for c in group], dtype=float)
        for j, k in enumerate(keys):
            if dens[j] >= risk.w_min and dens[j] > 0:
                particles[k].append(float(values[j] / dens[j]))
    return particles, len(by_state)


def cvar_scores(candidates: list[ActionCandidate], risk: RiskConfig) -> np.ndarray:
    """CCVaR of each candidate's particle set, or ``-inf`` when too few trees support it."""
    particles, n_states = return_particles(candidates, risk)
    per_action = {}
    for k, values in particles.items():
        if values and len(values) >= risk.c_m * n_states:
            per_action[k] = ccvar(values, risk.alpha)
        else:
            per_action[k] = -math.inf
    return np.array([per_action[c.action_index] for c in candidates])


def final_select_cvar(ensemble: Ensemble, cfg: PlannerConfig, n_agents: int) -> tuple[tuple[AgentAction, ...], bool]:
    action, flagged = [], False
    for agent in range(n_agents):
        candidates = get_action_candidates(ensemble, agent, cfg.risk.visit_threshold)
        scores = cvar_scores(candidates, cfg.risk) if candidates else np.array([])
        if not candidates or not np.isfinite(scores).any():
            action.append(cfg.default_action)
            flagged = True
            continue
        dens, _ = regression_table(candidates, cfg.risk.gamma_k)
        action.append(_argmax(candidates, scores, dens).action)
    return tuple(action), flagged


FINAL_SELECTION = {
    "baseline": final_select_baseline,
    "krlcb": final_select_krlcb,
    "cvar": final_select_cvar,
}


def plan_step(belief: GaussianBelief, sim: Simulator, cfg: PlannerConfig, rng: random.Random) -> PlanResult:
    """Build the ensemble for one planning step and select a joint action."""
    ensemble = build_ensemble(belief, sim, cfg, rng)
    n_agents = len(belief.template.vehicles)
    action, flagged = FINAL_SELECTION[cfg.policy](ensemble, cfg, n_agents)
    if ensemble.iterations == 0:
        flagged = True
    return PlanResult(action, flagged, ensemble)


def plan(belief: GaussianBelief, sim: Simulator, cfg: PlannerConfig, rng: random.Random) -> tuple[AgentAction, ...]:
    return plan_step(belief, sim, cfg, rng).action
