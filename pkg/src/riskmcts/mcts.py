"""Single-tree UCT search over a determinized start state.

Joint actions are built from a small per-agent action catalogue
(acceleration grid). Each node samples ``actions_per_node`` joint actions
from the cross product and tries them all before UCT kicks in. Every agent
keeps its own statistics: per joint edge, and marginalised over its own
action component. Descent picks the edge whose components maximise the
agents' individual UCT scores.
"""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator

from .world import AgentAction, Simulator, WorldState


class DegenerateTree(RuntimeError):
    """The tree root is terminal, so no iteration can be run."""


class NoActionAvailable(RuntimeError):
    pass


@dataclass(frozen=True)
class MctsConfig:
    c_p: float = 5.0
    gamma: float = 0.7
    rollout_depth: int = 10
    actions_per_node: int = 12
    ax_set: tuple[float, ...] = (-2.0, 0.0, 2.0)
    ay_set: tuple[float, ...] = (-1.0, 0.0, 1.0)

    def __post_init__(self):
        if self.c_p < 0:
            raise ValueError("c_p must be >= 0")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.rollout_depth < 0 or self.actions_per_node < 1:
            raise ValueError("need rollout_depth >= 0 and actions_per_node >= 1")
        if not self.ax_set or not self.ay_set:
            raise ValueError("action sets must be non-empty")

    @cached_property
    def agent_actions(self) -> tuple[AgentAction, ...]:
        """Per-agent action catalogue; an action's index here is its tie-break order."""
        return tuple(AgentAction(float(ax), float(ay)) for ax, ay in itertools.product(self.ax_set, self.ay_set))


def uct_value(q_mean: float, n_parent: int, n_action: int, c_p: float) -> float:
    """Mean return plus the exploration bonus ``2 c_p sqrt(ln N(n) / N(n, a))``.

    Unvisited actions get ``inf`` so they are always tried first.
    """
    if n_action == 0:
        return math.inf
    if c_p == 0:
        return q_mean
    return q_mean + 2.0 * c_p * math.sqrt(math.log(n_parent) / n_action)


class Edge:
    __slots__ = ("child", "visits", "q")

    def __init__(self, child: "TreeNode", n_agents: int):
        self.child = child
        self.visits = 0
        self.q = [0.0] * n_agents


class TreeNode:
    __slots__ = (
        "state", "parent", "key", "reward", "terminal", "visits",
        "edges", "untried", "candidates", "agent_keys", "marginal_n", "marginal_q",
    )

    def __init__(self, state: WorldState, n_agents: int, n_actions: int, terminal: bool,
                 parent: "TreeNode | None" = None, key: tuple | None = None, reward=None):
        self.state = state
        self.parent = parent
        self.key = key
        self.reward = reward
        self.terminal = terminal
        self.visits = 0
        self.edges: dict[tuple, Edge] = {}
        self.untried: list[tuple] | None = None
        self.candidates: list[tuple] | None = None
        self.agent_keys: list[list[int]] | None = None
        self.marginal_n = [[0] * n_actions for _ in range(n_agents)]
        self.marginal_q = [[0.0] * n_actions for _ in range(n_agents)]

    @property
    def fully_expanded(self) -> bool:
        return self.untried is not None and not self.untried

    def agent_uct(self, agent: int, action_index: int, c_p: float) -> float:
        return uct_value(self.marginal_q[agent][action_index], self.visits,
                         self.marginal_n[agent][action_index], c_p)

    def iter_nodes(self) -> Iterator["TreeNode"]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(e.child for e in node.edges.values())


def _sample_joint_keys(n_agents: int, n_actions: int, k: int, rng: random.Random) -> list[tuple]:
    total = n_actions**n_agents
    picks = rng.sample(range(total), min(k, total))
    keys = []
    for code in picks:
        key = []
        for _ in range(n_agents):
            code, digit = divmod(code, n_actions)
            key.append(digit)
        keys.append(tuple(key))
    return keys


class SearchTree:
    """One UCT tree rooted at one determinized start state."""

    def __init__(self, root_state: WorldState, sim: Simulator, cfg: MctsConfig, start_state_id: int = 0):
        if not root_state.ok:
            raise ValueError("a search tree needs a valid, collision-free root state")
        self.sim = sim
        self.cfg = cfg
        self.start_state_id = start_state_id
        self.actions = cfg.agent_actions
        self.n_agents = len(root_state.vehicles)
        self.root = self._node(root_state)

    def _node(self, state, parent=None, key=None, reward=None) -> TreeNode:
        return TreeNode(state, self.n_agents, len(self.actions), self.sim.is_terminal(state),
                        parent, key, reward)

    def joint_action(self, key: tuple) -> tuple[AgentAction, ...]:
        return tuple(self.actions[k] for k in key)

    def root_statistics(self, agent: int) -> list[tuple[int, int, float]]:
        """``(action_index, visits, mean_return)`` for every explored root action of ``agent``."""
        ns, qs = self.root.marginal_n[agent], self.root.marginal_q[agent]
        return [(k, ns[k], qs[k]) for k in range(len(self.actions)) if ns[k] > 0]

    def node_count(self) -> int:
        return sum(1 for _ in self.root.iter_nodes())

    def to_dict(self, max_depth: int | None = None) -> dict:
        """JSON-ready dump of counts and values, for debugging and golden tests."""

        def dump(node: TreeNode, depth: int) -> dict:
            out = {
                "time_index": node.state.time_index,
                "status": node.state.status.value,
                "visits": node.visits,
                "terminal": node.terminal,
                "edges": [],
            }
            if max_depth is not None and depth >= max_depth:
                return out
            for key, edge in node.edges.items():
                out["edges"].append({
                    "action": [list(a) for a in self.joint_action(key)],
                    "visits": edge.visits,
                    "q": list(edge.q),
                    "child": dump(edge.child, depth + 1),
                })
            return out

        return {"start_state_id": self.start_state_id, "root": dump(self.root, 0)}


def select_and_expand(tree: SearchTree, rng: random.Random) -> TreeNode:
    """Descend by UCT to the first expandable node and attach one new child.

    Returns the new child, or a terminal node reached during descent.
    """
    node = tree.root
    if node.terminal:
        raise DegenerateTree("root state is terminal")
    c_p = tree.cfg.c_p
    n_agents = tree.n_agents
    while not node.terminal:
        if node.untried is None:
            node.candidates = _sample_joint_keys(n_agents, len(tree.actions), tree.cfg.actions_per_node, rng)
            node.untried = list(node.candidates)
            node.agent_keys = [sorted({key[i] for key in node.candidates}) for i in range(n_agents)]
        if node.untried:
            key = node.untried.pop(rng.randrange(len(node.untried)) if len(node.untried) > 1 else 0)
            joint = tree.joint_action(key)
            nxt = tree.sim.step(node.state, joint)
            child = tree._node(nxt, node, key, tree.sim.rewards(node.state, joint, nxt))
            node.edges[key] = Edge(child, n_agents)
            return child
        bonus = 2.0 * c_p * math.sqrt(math.log(node.visits)) if c_p else 0.0
        per_agent = []
        for i in range(n_agents):
            ns, qs = node.marginal_n[i], node.marginal_q[i]
            per_agent.append({k: qs[k] + bonus / math.sqrt(ns[k]) for k in node.agent_keys[i]})
        best_key, best = None, -math.inf
        for key in node.candidates:
            score = 0.0
            for i in range(n_agents):
                score += per_agent[i][key[i]]
            if score > best:
                best_key, best = key, score
        node = node.edges[best_key].child
    return node


def rollout(start: TreeNode | WorldState, sim: Simulator, cfg: MctsConfig, rng: random.Random) -> list[float]:
    """Discounted per-agent return of a uniformly random continuation.

    Stops at a terminal state or after ``cfg.rollout_depth`` steps.
    """
    state = start.state if isinstance(start, TreeNode) else start
    return sim.random_rollout(state, cfg.agent_actions, cfg.rollout_depth, cfg.gamma, rng.random)


def backup(leaf: TreeNode, returns: list[float], gamma: float) -> None:
    """Propagate ``returns`` from ``leaf`` to the root, re-discounting at each depth."""
    g = list(returns)
    node = leaf
    while node.parent is not None:
        parent = node.parent
        g = [r + gamma * x for r, x in zip(node.reward, g)]
        edge = parent.edges[node.key]
        edge.visits += 1
        n = edge.visits
        for i, gi in enumerate(g):
            edge.q[i] += (gi - edge.q[i]) / n
            k = node.key[i]
            parent.marginal_n[i][k] += 1
            parent.marginal_q[i][k] += (gi - parent.marginal_q[i][k]) / parent.marginal_n[i][k]
        parent.visits += 1
        node = parent


def run_iteration(tree: SearchTree, rng: random.Random) -> TreeNode:
    """One select/expand, rollout, backup cycle."""
    leaf = select_and_expand(tree, rng)
    returns = rollout(leaf, tree.sim, tree.cfg, rng)
    backup(leaf, returns, tree.cfg.gamma)
    return leaf


def baseline_best_action(tree: SearchTree) -> tuple[AgentAction, ...]:
    """Per agent, the root action with the highest mean return.

    Ties go to the more visited action, then to the lower catalogue index.
    """
    best = []
    for agent in range(tree.n_agents):
        stats = tree.root_statistics(agent)
        if not stats:
            raise NoActionAvailable("root has no explored actions")
        k, _, _ = max(stats, key=lambda s: (s[2], s[1], -s[0]))
        best.append(tree.actions[k])
    return tuple(best)
