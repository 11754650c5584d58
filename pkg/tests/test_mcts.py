import json
import math
import random
from collections import defaultdict

import pytest

from riskmcts.mcts import (
    DegenerateTree,
    MctsConfig,
    NoActionAvailable,
    SearchTree,
    backup,
    baseline_best_action,
    rollout,
    run_iteration,
    select_and_expand,
    uct_value,
)
from riskmcts.world import (
    AgentGoal,
    Obstacle,
    RewardWeights,
    Scenario,
    Simulator,
    Status,
    VehicleState,
    builtin_scenarios,
)


def single_agent(vx=10.0, desired=10.0, obstacles=(), horizon=10):
    sc = Scenario("solo", 2, 3.5, 400.0, (VehicleState(50.0, 1.75, vx, 0.0, 0.0, 4.5, 1.8),),
                  (AgentGoal(desired, 0),), tuple(obstacles), horizon)
    return sc, Simulator.from_scenario(sc)


def merge_tree(**kw):
    sc = builtin_scenarios()["merge2"]
    return SearchTree(sc.initial_state(), Simulator.from_scenario(sc), MctsConfig(**kw))


# --------------------------------------------------------------------------
# UCT


def test_uct_examples():
    assert uct_value(1.0, 8, 2, 0.0) == 1.0
    assert uct_value(1.0, 8, 2, 0.5) == pytest.approx(1.0 + math.sqrt(math.log(8) / 2), abs=1e-12)
    assert uct_value(1.0, 8, 2, 0.5) == pytest.approx(2.0197, abs=1e-4)
    assert uct_value(-1e9, 8, 0, 0.5) > uct_value(1e9, 8, 1, 0.5)


def test_fresh_tree_expands_distinct_actions_first():
    tree = merge_tree(actions_per_node=7)
    rng = random.Random(0)
    keys = [run_iteration(tree, rng).key for _ in range(7)]
    assert len(set(keys)) == 7
    assert tree.root.fully_expanded
    assert set(keys) == set(tree.root.candidates)


def test_greedy_descent_follows_best_mean():
    tree = merge_tree(c_p=0.0, actions_per_node=5)
    rng = random.Random(1)
    for _ in range(5):
        run_iteration(tree, rng)
    root = tree.root
    # with c_p = 0 the summed per-agent marginal means decide
    expected = max(root.candidates, key=lambda k: sum(root.marginal_q[i][k[i]] for i in range(2)))
    leaf = select_and_expand(tree, rng)
    node = leaf
    while node.parent is not root:
        node = node.parent
    assert node.key == expected


def test_terminal_root_is_degenerate():
    sc, sim = single_agent(horizon=1)
    tree = SearchTree(sc.initial_state(), sim, MctsConfig())
    run_iteration(tree, random.Random(0))  # one step reaches the horizon
    terminal_child = next(iter(tree.root.edges.values())).child
    assert terminal_child.terminal
    bad = SearchTree.__new__(SearchTree)
    bad.__dict__.update(tree.__dict__)
    bad.root = terminal_child
    with pytest.raises(DegenerateTree):
        run_iteration(bad, random.Random(0))


def test_search_is_deterministic():
    def dump(seed):
        tree = merge_tree()
        rng = random.Random(seed)
        for _ in range(300):
            run_iteration(tree, rng)
        return json.dumps(tree.to_dict())

    assert dump(3) == dump(3)
    assert dump(3) != dump(4)


# --------------------------------------------------------------------------
# rollout and backup


def test_rollout_from_terminal_is_zero():
    sc, sim = single_agent(horizon=1)
    state = sim.step(sc.initial_state(), (sim_action(0, 0),))
    assert sim.is_terminal(state)
    assert rollout(state, sim, MctsConfig(), random.Random(0)) == [0.0]


def sim_action(ax, ay):
    from riskmcts.world import AgentAction

    return AgentAction(float(ax), float(ay))


def test_rollout_gamma_zero_is_first_reward():
    sc, sim = single_agent()
    cfg = MctsConfig(gamma=0.0)
    state = sc.initial_state()
    g = rollout(state, sim, cfg, random.Random(5))
    rand = random.Random(5).random
    a = cfg.agent_actions[int(rand() * len(cfg.agent_actions))]
    nxt = sim.step(state, (a,))
    assert g == sim.rewards(state, (a,), nxt)


def test_rollout_geometric_series():
    # only action: hold speed 2 m/s below the target, so every step costs -2
    sc, sim = single_agent(vx=8.0, desired=10.0)
    cfg = MctsConfig(gamma=0.5, rollout_depth=5, ax_set=(0.0,), ay_set=(0.0,))
    g = rollout(sc.initial_state(), sim, cfg, random.Random(0))
    assert g[0] == pytest.approx(-2 * sum(0.5**k for k in range(5)), abs=1e-12)


def test_backup_examples():
    sc, sim = single_agent()
    tree = SearchTree(sc.initial_state(), sim, MctsConfig(actions_per_node=1, ax_set=(0.0,), ay_set=(0.0,)))
    leaf = select_and_expand(tree, random.Random(0))
    leaf.reward = [0.0]
    backup(leaf, [2.0], 0.9)
    edge = tree.root.edges[leaf.key]
    assert (edge.visits, edge.q) == (1, [0.9 * 2.0])
    backup(leaf, [4.0], 0.9)
    assert edge.visits == 2 and edge.q[0] == pytest.approx(0.9 * 3.0)


def test_bookkeeping_against_stored_samples():
    """Visit conservation and running means versus a stored-sample oracle on 1000 iterations."""
    sc = builtin_scenarios()["bottleneck2"]
    cfg = MctsConfig(actions_per_node=6)
    tree = SearchTree(sc.initial_state(), Simulator.from_scenario(sc), cfg)
    rng = random.Random(11)
    edge_samples = defaultdict(list)
    marginal_samples = defaultdict(list)
    for _ in range(1000):
        leaf = select_and_expand(tree, rng)
        returns = rollout(leaf, tree.sim, cfg, rng)
        # oracle: recompute the return-to-go at every depth from scratch
        path, node = [], leaf
        while node.parent is not None:
            path.append(node)
            node = node.parent
        g = list(returns)
        for child in path:
            g = [r + cfg.gamma * x for r, x in zip(child.reward, g)]
            edge_samples[(id(child.parent), child.key)].append(g)
            for i, k in enumerate(child.key):
                marginal_samples[(id(child.parent), i, k)].append(g[i])
        backup(leaf, returns, cfg.gamma)

    assert tree.root.visits == 1000
    for node in tree.root.iter_nodes():
        if node.edges:
            assert node.visits == sum(e.visits for e in node.edges.values())
            for i in range(2):
                assert sum(node.marginal_n[i]) == node.visits
        for key, edge in node.edges.items():
            samples = edge_samples[(id(node), key)]
            assert edge.visits == len(samples)
            for i in range(2):
                assert edge.q[i] == pytest.approx(sum(s[i] for s in samples) / len(samples), abs=1e-9)
        for i in range(2):
            for k, n in enumerate(node.marginal_n[i]):
                samples = marginal_samples[(id(node), i, k)]
                assert n == len(samples)
                if n:
                    assert node.marginal_q[i][k] == pytest.approx(sum(samples) / n, abs=1e-9)


def test_every_root_action_tried_within_ten_k():
    sc, sim = single_agent()
    tree = SearchTree(sc.initial_state(), sim, MctsConfig(c_p=1.0, actions_per_node=9))
    rng = random.Random(2)
    for _ in range(90):
        run_iteration(tree, rng)
    assert len(tree.root.edges) == 9
    assert all(e.visits >= 1 for e in tree.root.edges.values())


def test_single_action_value_is_rollout_mean():
    sc, sim = single_agent(vx=8.0)
    cfg = MctsConfig(ax_set=(0.0,), ay_set=(0.0,), rollout_depth=3)
    tree = SearchTree(sc.initial_state(), sim, cfg)
    rng = random.Random(0)
    for _ in range(50):
        run_iteration(tree, rng)
    # iteration j grows the chain to depth j and rolls out 3 more steps,
    # all capped by the 10-step horizon; every step costs -2
    returns = [-2 * sum(cfg.gamma**k for k in range(min(j + 3, 10))) for j in range(1, 51)]
    expected = sum(returns) / len(returns)
    assert tree.root_statistics(0) == [(0, 50, pytest.approx(expected, abs=1e-9))]


def test_inevitable_collision_bound():
    # front bumper 1 m behind a parked car at 20 m/s: even full braking hits it in the first step
    sc, sim = single_agent(vx=20.0, desired=20.0, obstacles=[Obstacle(56.25, 1.75, 4.0, 2.0)])
    tree = SearchTree(sc.initial_state(), sim, MctsConfig())
    rng = random.Random(0)
    for _ in range(200):
        run_iteration(tree, rng)
    w = RewardWeights()
    for k, n, q in tree.root_statistics(0):
        assert q <= w.w_coll * tree.cfg.gamma**0
    for edge in tree.root.edges.values():
        assert edge.child.state.status is Status.COLLISION


def test_baseline_best_action_ties():
    tree = merge_tree()
    root = tree.root
    with pytest.raises(NoActionAvailable):
        baseline_best_action(tree)
    for i in range(2):
        root.marginal_n[i][:] = [0] * 9
        root.marginal_q[i][:] = [0.0] * 9
    # agent 0: plain argmax; agent 1: equal means, more visits wins
    root.marginal_n[0][1], root.marginal_q[0][1] = 3, 1.0
    root.marginal_n[0][2], root.marginal_q[0][2] = 3, 2.0
    root.marginal_n[1][4], root.marginal_q[1][4] = 5, -1.0
    root.marginal_n[1][0], root.marginal_q[1][0] = 2, -1.0
    best = baseline_best_action(tree)
    assert best == (tree.actions[2], tree.actions[4])
    root.marginal_n[1][0] = 5
    assert baseline_best_action(tree)[1] == tree.actions[0]
