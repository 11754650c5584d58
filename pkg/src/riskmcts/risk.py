"""Kernel regression over action candidates and empirical tail-risk measures.

Quantiles are exact order statistics of the empirical distribution (mass
1/n per sample); nothing is interpolated. Probability comparisons are done
in count space with a 1e-9 slack so that, e.g., ``alpha=0.05`` with 20
samples lands exactly on the 19th order statistic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .world import AgentAction

_COUNT_TOL = 1e-9


class EmptyDistribution(ValueError):
    pass


class UndefinedRegression(ValueError):
    pass


class UndefinedBound(ValueError):
    pass


class ActionCandidate(NamedTuple):
    action: AgentAction
    source_start_state: int
    q_value: float
    visit_count: int
    action_index: int = 0


@dataclass(frozen=True)
class RiskConfig:
    gamma_k: float = 5.0
    c_lcb: float = 1.0
    alpha: float = 0.2
    w_min: float = 50.0
    c_m: float = 0.5
    visit_threshold: int = 3

    def __post_init__(self):
        if self.gamma_k < 0 or self.c_lcb < 0 or self.w_min < 0:
            raise ValueError("gamma_k, c_lcb and w_min must be >= 0")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0 <= self.c_m <= 1:
            raise ValueError("c_m must lie in [0, 1]")
        if self.visit_threshold < 0:
            raise ValueError("visit_threshold must be >= 0")


# --------------------------------------------------------------------------
# kernel regression


def kernel(a: AgentAction, b: AgentAction, gamma_k: float) -> float:
    """Gaussian RBF similarity ``exp(-gamma_k * |a - b|^2)``."""
    dx, dy = a[0] - b[0], a[1] - b[1]
    return math.exp(-gamma_k * (dx * dx + dy * dy))


def kernel_matrix(queries: Sequence[AgentAction], points: Sequence[AgentAction], gamma_k: float) -> np.ndarray:
    q = np.asarray(queries, dtype=float).reshape(-1, 2)
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    d2 = ((q[:, None, :] - p[None, :, :]) ** 2).sum(axis=-1)
    return np.exp(-gamma_k * d2)


def density(a: AgentAction, candidates: Sequence[ActionCandidate], gamma_k: float) -> float:
    """Visit- and similarity-weighted exploration mass of ``a`` within ``candidates``."""
    return sum(kernel(a, c.action, gamma_k) * c.visit_count for c in candidates)


def kr_value(a: AgentAction, candidates: Sequence[ActionCandidate], gamma_k: float) -> float:
    """Nadaraya-Watson estimate of the value of ``a``, weighted by visits and similarity."""
    num = den = 0.0
    for c in candidates:
        w = kernel(a, c.action, gamma_k) * c.visit_count
        num += w * c.q_value
        den += w
    if den <= 0:
        raise UndefinedRegression("zero kernel density at the query action")
    return num / den


def exploration_penalty(own_density: float, total_density: float, c_lcb: float) -> float:
    # ln(total) is clipped at 0 when total <= 1
    if own_density <= 0:
        raise UndefinedBound("density of the query action must be positive")
    if c_lcb == 0 or total_density <= 1:
        return 0.0
    return c_lcb * math.sqrt(math.log(total_density) / own_density)


def krlcb(a: AgentAction, candidates: Sequence[ActionCandidate], cfg: RiskConfig) -> float:
    """Kernel-regression value of ``a`` minus a density-normalised exploration penalty."""
    w_a = density(a, candidates, cfg.gamma_k)
    if w_a <= 0:
        raise UndefinedBound("density of the query action must be positive")
    total = sum(density(b.action, candidates, cfg.gamma_k) for b in candidates)
    return kr_value(a, candidates, cfg.gamma_k) - exploration_penalty(w_a, total, cfg.c_lcb)


def regression_table(candidates: Sequence[ActionCandidate], gamma_k: float) -> tuple[np.ndarray, np.ndarray]:
    """Densities and kernel-regression values of every candidate against the whole set."""
    actions = [c.action for c in candidates]
    n = np.array([c.visit_count for c in candidates], dtype=float)
    q = np.array([c.q_value for c in candidates], dtype=float)
    weights = kernel_matrix(actions, actions, gamma_k) * n[None, :]
    dens = weights.sum(axis=1)
    if np.any(dens <= 0):
        raise UndefinedRegression("zero kernel density for a candidate")
    return dens, (weights @ q) / dens


# --------------------------------------------------------------------------
# empirical quantiles and tail means


def _sorted(samples) -> np.ndarray:
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise EmptyDistribution("empirical distribution has no samples")
    return x


def _check_alpha(alpha: float) -> None:
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")


def var(costs, alpha: float) -> float:
    """Smallest (1 - alpha)-quantile: ``min{z : P(Z <= z) >= 1 - alpha}``."""
    _check_alpha(alpha)
    x = _sorted(costs)
    n = x.size
    # smallest i with (i + 1) >= n (1 - alpha)
    i = max(math.ceil(n * (1.0 - alpha) - _COUNT_TOL) - 1, 0)
    return float(x[min(i, n - 1)])


def var_plus(samples, alpha: float) -> float:
    """Largest (1 - alpha)-quantile: ``inf{z : P(Z <= z) > 1 - alpha}``."""
    _check_alpha(alpha)
    x = _sorted(samples)
    n = x.size
    # smallest i with (i + 1) > n (1 - alpha)
    i = math.floor(n * (1.0 - alpha) + _COUNT_TOL)
    return float(x[min(i, n - 1)])


def cvar(costs, alpha: float) -> float:
    """Mean of the costs at or above ``var(costs, alpha)``."""
    x = _sorted(costs)
    v = var(x, alpha)
    return float(x[x >= v].mean())


def ccvar(returns, alpha: float) -> float:
    """Mean of the returns at or below ``var_plus(returns, 1 - alpha)``.

    Maximising this over actions is the same as minimising the CVaR of the
    negated returns.
    """
    x = _sorted(returns)
    v = var_plus(x, 1.0 - alpha)
    return float(x[x <= v].mean())
