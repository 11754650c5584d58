"""Episode runner, seed grids, success-rate tables and runtime overhead.

An episode repeatedly observes the true world (exactly or with sensor
noise), plans a joint action and applies it to the true world for every
agent, until a collision, an invalid state or the horizon.
"""

from __future__ import annotations

import hashlib
import itertools
import logging
import math
import random
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from statistics import mean

from .belief import observe
from .config import Config
from .planner import POLICIES, plan_step
from .world import Scenario, Simulator, Status, builtin_scenarios, load_scenario, step

log = logging.getLogger(__name__)

OUTCOMES = ("success", "collision", "invalid", "timeout")
OVERHEAD_ITERATION_LEVELS = (250, 500, 1000, 2000, 4000, 8000)


@dataclass(frozen=True)
class EpisodeResult:
    scenario: str
    policy: str
    iterations: int
    seed: int
    noise: str
    outcome: str
    steps: int
    flagged_steps: int = 0
    step_ms: tuple[float, ...] = field(default=(), compare=False)

    @property
    def success(self) -> bool:
        return self.outcome == "success"

    @property
    def mean_step_ms(self) -> float:
        return mean(self.step_ms) if self.step_ms else 0.0

    def to_record(self, timing: bool = True) -> dict:
        rec = asdict(self)
        rec["step_ms"] = [round(t, 3) for t in self.step_ms]
        if not timing:
            del rec["step_ms"]
        return rec


@dataclass(frozen=True)
class GridSpec:
    scenarios: tuple[str, ...]
    policies: tuple[str, ...] = POLICIES
    iteration_levels: tuple[int, ...] = (250, 500, 1000, 2000)
    seeds: int = 100
    noise: tuple[str, ...] = ("on", "off")
    master_seed: int = 0

    def __post_init__(self):
        for name in ("scenarios", "policies", "iteration_levels", "noise"):
            if not getattr(self, name):
                raise ValueError(f"grid {name} must be non-empty")
        if self.seeds < 1:
            raise ValueError("seeds must be >= 1")
        bad = set(self.policies) - set(POLICIES)
        if bad:
            raise ValueError(f"unknown policies {sorted(bad)}")

    def cells(self):
        return itertools.product(self.scenarios, self.policies, self.iteration_levels, self.noise)


def episode_seed(master_seed: int, scenario: str, policy: str, iterations: int, index: int, noise: str) -> int:
    """Stable 64-bit seed for one episode of one grid cell."""
    key = f"{master_seed}|{scenario}|{policy}|{iterations}|{index}|{noise}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def resolve_scenario(ref, scenarios: dict[str, Scenario] | None = None) -> Scenario:
    if isinstance(ref, Scenario):
        return ref
    scenarios = scenarios if scenarios is not None else builtin_scenarios()
    if ref in scenarios:
        return scenarios[ref]
    return load_scenario(ref)


def run_episode(
    scenario: Scenario | str,
    policy: str,
    iterations: int,
    seed: int,
    noise: str = "on",
    config: Config | None = None,
    max_steps: int | None = None,
) -> EpisodeResult:
    """Closed-loop episode; deterministic in everything but ``step_ms``."""
    scenario = resolve_scenario(scenario)
    config = config or Config()
    cfg = config.planner(policy, iterations)
    profile = config.noise(noise)
    sim = Simulator.from_scenario(scenario, config.reward)
    rng = random.Random(seed)
    state = scenario.initial_state()
    schema = profile.schema_for(state)
    limit = scenario.episode_horizon if max_steps is None else min(max_steps, scenario.episode_horizon)
    timings, flagged = [], 0
    outcome = None
    while state.time_index < limit:
        t0 = time.perf_counter()
        belief = observe(state, schema, rng)
        result = plan_step(belief, sim, cfg, rng)
        timings.append((time.perf_counter() - t0) * 1e3)
        flagged += result.flagged
        state = step(state, result.action, scenario.dt)
        if state.status is Status.COLLISION:
            outcome = "collision"
            break
        if state.status is Status.INVALID:
            outcome = "invalid"
            break
    if outcome is None:
        outcome = "success" if state.time_index >= scenario.episode_horizon else "timeout"
    return EpisodeResult(scenario.id, policy, iterations, seed, noise, outcome,
                         state.time_index, flagged, tuple(timings))


def _run_job(args) -> EpisodeResult:
    scenario, policy, iterations, seed, noise, config = args
    return run_episode(scenario, policy, iterations, seed, noise, config)


def grid_jobs(spec: GridSpec, config: Config, scenarios: dict[str, Scenario] | None = None) -> list[tuple]:
    resolved = {ref: resolve_scenario(ref, scenarios) for ref in spec.scenarios}
    jobs = []
    for ref, policy, level, noise in spec.cells():
        sc = resolved[ref]
        for index in range(spec.seeds):
            seed = episode_seed(spec.master_seed, sc.id, policy, level, index, noise)
            jobs.append((sc, policy, level, seed, noise, config))
    return jobs


def run_grid(
    spec: GridSpec,
    config: Config | None = None,
    parallelism: int = 1,
    scenarios: dict[str, Scenario] | None = None,
) -> list[EpisodeResult]:
    """Run every episode of every grid cell, in a deterministic order.

    A failing episode is logged and skipped; the rest of the grid continues.
    """
    config = config or Config()
    jobs = grid_jobs(spec, config, scenarios)
    results: list[EpisodeResult | None] = [None] * len(jobs)
    if parallelism <= 1:
        for j, job in enumerate(jobs):
            try:
                results[j] = _run_job(job)
            except Exception:
                log.exception("episode %s failed", job[:5])
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            futures = [pool.submit(_run_job, job) for job in jobs]
            for j, fut in enumerate(futures):
                try:
                    results[j] = fut.result()
                except Exception:
                    log.exception("episode %s failed", jobs[j][:5])
    return [r for r in results if r is not None]


@dataclass(frozen=True)
class Cell:
    scenario: str
    policy: str
    iterations: int
    noise: str
    successes: int
    episodes: int

    @property
    def success_rate(self) -> float:
        return self.successes / self.episodes if self.episodes else 0.0


def success_table(results: list[EpisodeResult]) -> dict[tuple[str, str, int, str], Cell]:
    """Aggregate episodes into cells keyed by ``(scenario, policy, iterations, noise)``."""
    counts: dict[tuple, list[int]] = {}
    for r in results:
        c = counts.setdefault((r.scenario, r.policy, r.iterations, r.noise), [0, 0])
        c[0] += r.success
        c[1] += 1
    return {k: Cell(*k, s, n) for k, (s, n) in sorted(counts.items())}


def wilson_interval(successes: int, n: int, z: float = 1.959964) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = successes / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return centre - half, centre + half


def difference_interval(s1: int, n1: int, s2: int, n2: int, z: float = 1.959964) -> tuple[float, float]:
    """Newcombe hybrid score interval for ``p1 - p2``."""
    l1, u1 = wilson_interval(s1, n1, z)
    l2, u2 = wilson_interval(s2, n2, z)
    p1, p2 = s1 / n1, s2 / n2
    d = p1 - p2
    lower = d - math.sqrt((p1 - l1) ** 2 + (u2 - p2) ** 2)
    upper = d + math.sqrt((u1 - p1) ** 2 + (p2 - l2) ** 2)
    return lower, upper


@dataclass(frozen=True)
class OverheadRow:
    policy: str
    iterations: int
    mean_ms: float
    ratio: float
    steps: int


def measure_overhead(
    scenario: Scenario | str,
    iteration_levels=OVERHEAD_ITERATION_LEVELS,
    policies=POLICIES,
    planning_steps: int = 20,
    noise: str = "on",
    config: Config | None = None,
    master_seed: int = 0,
) -> list[OverheadRow]:
    """Mean wall time per planning step, and its ratio to the baseline."""
    if "baseline" not in policies:
        raise ValueError("overhead is measured relative to the baseline")
    scenario = resolve_scenario(scenario)
    config = config or Config()
    rows = []
    for level in iteration_levels:
        means = {}
        for policy in policies:
            samples, index = [], 0
            while len(samples) < planning_steps:
                seed = episode_seed(master_seed, scenario.id, "overhead", level, index, noise)
                res = run_episode(scenario, policy, level, seed, noise, config)
                samples.extend(res.step_ms)
                index += 1
            means[policy] = mean(samples[:planning_steps])
        for policy in policies:
            rows.append(OverheadRow(policy, level, means[policy], means[policy] / means["baseline"], planning_steps))
    return rows
