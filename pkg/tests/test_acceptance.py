"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` and read the "acceptance
criteria" section of the terminal summary. Criteria 6 and 7 run full
episode grids and take the bulk of the time; they use every CPU available.
"""

import math
import os
import random
import time
from dataclasses import replace

import numpy as np
import pytest

from riskmcts import risk
from riskmcts.belief import NoiseProfile, WideningConfig, observe
from riskmcts.config import Config
from riskmcts.export import write_episodes, write_heatmaps
from riskmcts.harness import GridSpec, difference_interval, measure_overhead, run_grid, success_table
from riskmcts.mcts import MctsConfig, SearchTree, backup, rollout, run_iteration, select_and_expand
from riskmcts.planner import plan
from riskmcts.risk import ActionCandidate, RiskConfig
from riskmcts.world import AgentAction, AgentGoal, Scenario, Simulator, VehicleState, builtin_scenarios

import oracles

ALPHAS = [round(0.05 * k, 2) for k in range(1, 20)]
WORKERS = os.cpu_count() or 1
TWO_AGENT = ("merge2", "bottleneck2")


# --------------------------------------------------------------------------
# 1. risk-metric exactness


def random_distribution(rng):
    n = int(rng.integers(1, 201))
    kind = rng.integers(3)
    if kind == 0:
        return rng.normal(size=n) * 20
    if kind == 1:
        return rng.integers(-5, 6, size=n).astype(float)  # heavy ties
    return np.round(rng.exponential(size=n) * 10, 1)


def test_1_risk_metric_exactness(verdict):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(500):
        x = random_distribution(rng)
        table = oracles.cdf_table(x)
        neg = oracles.cdf_table(-x)
        for alpha in ALPHAS:
            worst = max(
                worst,
                abs(risk.var(x, alpha) - oracles.var_scan(table, alpha)),
                abs(risk.var_plus(x, alpha) - oracles.var_plus_scan(table, alpha)),
                abs(risk.cvar(x, alpha) - oracles.cvar_scan(table, alpha)),
                abs(risk.ccvar(x, alpha) - oracles.ccvar_scan(table, alpha)),
                abs(risk.ccvar(x, alpha) + oracles.cvar_scan(neg, alpha)),
            )
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed < 10
    verdict(1, "risk-metric exactness", ok, f"max |error| {worst:.2e} over 500 x 19, {elapsed:.1f} s")
    assert ok


# --------------------------------------------------------------------------
# 2. CVaR axioms


def test_2_cvar_axioms(verdict):
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    failures = {name: 0 for name in ("A1", "A2", "A3", "A4", "A5", "A6")}
    tol = 1e-9
    for _ in range(200):
        n = int(rng.integers(1, 60))
        alpha = float(rng.choice(ALPHAS))
        z = rng.normal(size=n) * 10  # continuous draws: tie-free almost surely
        z2 = rng.normal(size=n) * 10
        c = float(rng.normal() * 50)
        beta = float(rng.uniform(0, 10))
        cv = risk.cvar(z, alpha)
        if risk.cvar(z + rng.uniform(0, 5, size=n), alpha) < cv - tol:
            failures["A1"] += 1
        if abs(risk.cvar(z + c, alpha) - (cv + c)) > tol:
            failures["A2"] += 1
        if abs(risk.cvar(beta * z, alpha) - beta * cv) > tol:
            failures["A3"] += 1
        if risk.cvar(z + z2, alpha) > cv + risk.cvar(z2, alpha) + tol:
            failures["A4"] += 1
        s1, s2 = np.sort(z), np.sort(z2)
        if abs(risk.cvar(s1 + s2, alpha) - (risk.cvar(s1, alpha) + risk.cvar(s2, alpha))) > tol:
            failures["A5"] += 1
        if abs(risk.cvar(rng.permutation(z), alpha) - cv) > tol:
            failures["A6"] += 1
    elapsed = time.perf_counter() - t0
    ok = not any(failures.values()) and elapsed < 10
    verdict(2, "CVaR axioms A1-A6", ok, f"failures {failures} over 200 cases each, {elapsed:.1f} s")
    assert ok


# --------------------------------------------------------------------------
# 3. kernel-regression identities


def test_3_kernel_regression(verdict):
    rng = np.random.default_rng(3)
    grid = [(ax, ay) for ax in (-2.0, 0.0, 2.0) for ay in (-1.0, 0.0, 1.0)]
    bad = 0
    for _ in range(1000):
        m = int(rng.integers(1, 20))
        cands = []
        for j in range(m):
            ax, ay = grid[rng.integers(9)] if rng.random() < 0.7 else tuple(rng.uniform(-3, 3, size=2))
            cands.append(ActionCandidate(AgentAction(ax, ay), j, float(rng.normal() * 30), int(rng.integers(1, 40))))
        qs = [c.q_value for c in cands]
        gamma_k = float(rng.uniform(0, 3))
        cfg = RiskConfig(gamma_k=gamma_k, c_lcb=float(rng.uniform(0, 3)))
        for c in cands:
            kr = risk.kr_value(c.action, cands, gamma_k)
            bad += not (min(qs) - 1e-9 <= kr <= max(qs) + 1e-9)
            bad += risk.krlcb(c.action, cands, cfg) > kr + 1e-12
            bad += risk.krlcb(c.action, cands, replace(cfg, c_lcb=0.0)) != kr
    a, b = AgentAction(0.0, 0.0), AgentAction(1.0, 0.0)
    e = math.exp(-1)
    hand = [
        (risk.density(a, [ActionCandidate(a, 0, 0.0, 1), ActionCandidate(b, 0, 0.0, 1)], 1.0), 1 + e),
        (risk.kr_value(a, [ActionCandidate(a, 0, 0.0, 1), ActionCandidate(b, 0, 10.0, 1)], 1.0), 10 * e / (1 + e)),
        (risk.density(a, [ActionCandidate(a, 0, 1.0, 3), ActionCandidate(a, 1, 1.0, 7)], 0.5), 10.0),
        (risk.krlcb(a, [ActionCandidate(a, 0, 3.0, 10)], RiskConfig(c_lcb=1.0)), 3 - math.sqrt(math.log(10) / 10)),
    ]
    hand_err = max(abs(got - want) for got, want in hand)
    ok = bad == 0 and hand_err <= 1e-9
    verdict(3, "kernel-regression identities", ok,
            f"{bad} violations on 1000 candidate sets, hand examples max error {hand_err:.1e}")
    assert ok


# --------------------------------------------------------------------------
# 4. MCTS bookkeeping


def test_4_mcts_bookkeeping(verdict):
    sc = builtin_scenarios()["bottleneck2"]
    sim = Simulator.from_scenario(sc)
    cfg = MctsConfig()
    tree = SearchTree(sc.initial_state(), sim, cfg)
    rng = random.Random(4)
    samples = {}
    for _ in range(1000):
        leaf = select_and_expand(tree, rng)
        g = rollout(leaf, sim, cfg, rng)
        ret, node = list(g), leaf
        while node.parent is not None:
            ret = [r + cfg.gamma * x for r, x in zip(node.reward, ret)]
            samples.setdefault((id(node.parent), node.key), []).append(ret)
            node = node.parent
        backup(leaf, g, cfg.gamma)
    conservation = mean_err = 0
    for node in tree.root.iter_nodes():
        if node.edges:
            conservation += node.visits != sum(e.visits for e in node.edges.values())
            conservation += any(sum(ns) != node.visits for ns in node.marginal_n)
        for key, edge in node.edges.items():
            rows = np.array(samples[(id(node), key)])
            mean_err = max(mean_err, float(np.abs(rows.mean(axis=0) - np.array(edge.q)).max()))
    solo = Scenario("solo", 2, 3.5, 400.0, (VehicleState(50.0, 1.75, 10.0, 0.0, 0.0, 4.5, 1.8),), (AgentGoal(10.0, 0),))
    t9 = SearchTree(solo.initial_state(), Simulator.from_scenario(solo), MctsConfig(c_p=1.0, actions_per_node=9))
    rng = random.Random(9)
    for _ in range(90):
        run_iteration(t9, rng)
    all_tried = len(t9.root.edges) == 9 and all(e.visits >= 1 for e in t9.root.edges.values())
    ok = conservation == 0 and mean_err <= 1e-9 and tree.root.visits == 1000 and all_tried
    verdict(4, "MCTS bookkeeping", ok,
            f"conservation violations {conservation}, max running-mean error {mean_err:.1e}, "
            f"9/9 root actions visited after 90 iterations: {all_tried}")
    assert ok


# --------------------------------------------------------------------------
# 5. zero-noise reduction


def test_5_zero_noise_reduction(verdict):
    sc = builtin_scenarios()["merge2"]
    base = Config()
    cfg = replace(
        base,
        widening=WideningConfig(c_pw=1.0, alpha_pw=0.0),
        risk=replace(base.risk, c_lcb=0.0, gamma_k=1e6, visit_threshold=0),
    )
    sim = Simulator.from_scenario(sc, cfg.reward)
    state = sc.initial_state()
    belief = observe(state, NoiseProfile.off().schema_for(state), random.Random(0))
    mismatches = 0
    for seed in range(50):
        a = plan(belief, sim, cfg.planner("krlcb", 1000), random.Random(seed))
        b = plan(belief, sim, cfg.planner("baseline", 1000), random.Random(seed))
        mismatches += a != b
    ok = mismatches == 0
    verdict(5, "zero-noise reduction", ok, f"{mismatches}/50 seeded merge2 plans differ")
    assert ok


# --------------------------------------------------------------------------
# 6-7. success-rate grids


@pytest.fixture(scope="module")
def fig3_grid():
    noisy = run_grid(GridSpec(TWO_AGENT, ("baseline", "krlcb", "cvar"), (1000,), 100, ("on",)), parallelism=WORKERS)
    clean = run_grid(GridSpec(TWO_AGENT, ("baseline",), (1000,), 100, ("off",)), parallelism=WORKERS)
    return success_table(noisy + clean)


def test_6_directional_reproduction(verdict, fig3_grid):
    lines, ok = [], True
    for sc in TWO_AGENT:
        base = fig3_grid[(sc, "baseline", 1000, "on")]
        for policy in ("krlcb", "cvar"):
            cell = fig3_grid[(sc, policy, 1000, "on")]
            lo, _ = difference_interval(cell.successes, cell.episodes, base.successes, base.episodes)
            good = (cell.success_rate >= base.success_rate and lo > 0) or (
                cell.success_rate >= 0.95 and base.success_rate >= 0.95)
            ok &= good
            lines.append(f"{sc} {policy} {cell.success_rate:.2f} vs baseline {base.success_rate:.2f} "
                         f"(diff CI lower {lo:+.3f}) {'ok' if good else 'X'}")
        clean = fig3_grid[(sc, "baseline", 1000, "off")]
        good = clean.success_rate >= 0.9
        ok &= good
        lines.append(f"{sc} baseline noise-off {clean.success_rate:.2f} {'ok' if good else 'X'}")
    verdict(6, "directional reproduction", ok, "; ".join(lines))
    assert ok


def test_7_iteration_scaling(verdict):
    results = run_grid(GridSpec(("merge2",), ("krlcb",), (250, 2000), 100, ("on",)), parallelism=WORKERS)
    table = success_table(results)
    low = table[("merge2", "krlcb", 250, "on")].success_rate
    high = table[("merge2", "krlcb", 2000, "on")].success_rate
    ok = high >= low - 0.05
    verdict(7, "iteration scaling", ok, f"KRLCB merge2 noise-on: 250 it {low:.2f}, 2000 it {high:.2f}")
    assert ok


# --------------------------------------------------------------------------
# 8. runtime overhead


def test_8_runtime_overhead(verdict):
    rows = measure_overhead("merge2", (1000,), ("baseline", "krlcb", "cvar"), planning_steps=20)
    ratios = {r.policy: r.ratio for r in rows}
    ok = ratios["krlcb"] <= 1.25 and ratios["cvar"] <= 1.25
    detail = ", ".join(f"{r.policy} {r.mean_ms:.1f} ms (x{r.ratio:.3f})" for r in rows)
    verdict(8, "runtime overhead at 1000 iterations", ok, detail)
    assert ok


# --------------------------------------------------------------------------
# 9. determinism


def test_9_determinism(verdict, tmp_path):
    spec = GridSpec(("merge2", "bottleneck2"), ("krlcb", "cvar"), (100,), 4, ("on",), master_seed=17)
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        results = run_grid(spec, parallelism=WORKERS)
        files = write_heatmaps(results, out) + [write_episodes(results, out / "episodes.jsonl", timing=False)]
        outputs.append({p.name: p.read_bytes() for p in files})
    ok = outputs[0] == outputs[1]
    verdict(9, "determinism", ok, f"{len(outputs[0])} files byte-identical: {ok}")
    assert ok
