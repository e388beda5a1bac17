"""Closed forms for token law, token counts, stopping time, acceptance rate and FLOPs."""

from __future__ import annotations

from dataclasses import dataclass

from .dist import CategoricalDist, sprinter_mixture, tv_distance
from .engine import CostModel


class Divergent(ArithmeticError):
    """The quantity is infinite (every unacceptable token is accepted forever)."""


@dataclass(frozen=True)
class ScenarioParams:
    """First ``r`` draft tokens acceptable, every later one unacceptable."""

    eta_tp: float
    eta_fp: float
    r: int
    t_d: float = 0.1

    def __post_init__(self):
        if not (0.0 <= self.eta_tp <= 1.0 and 0.0 <= self.eta_fp <= 1.0):
            raise ValueError("rates must lie in [0, 1]")
        if self.r < 1:
            raise ValueError("r must be >= 1")
        if self.t_d <= 0:
            raise ValueError("t_d must be positive")


def token_count_pmf(params: ScenarioParams, i: int) -> float:
    """P(N = i) where N counts consecutive verifier accepts."""
    if i < 0:
        raise ValueError("i must be >= 0")
    tp, fp, r = params.eta_tp, params.eta_fp, params.r
    if i < r:
        return tp ** i * (1.0 - tp)
    return tp ** r * fp ** (i - r) * (1.0 - fp)


def token_count_tail(params: ScenarioParams, n: int) -> float:
    """P(N >= n) in closed form."""
    tp, fp, r = params.eta_tp, params.eta_fp, params.r
    if n <= 0:
        return 1.0
    if n <= r:
        return tp ** n
    return tp ** r * fp ** (n - r)


def expected_tokens(params: ScenarioParams) -> float:
    tp, fp, r = params.eta_tp, params.eta_fp, params.r
    if fp >= 1.0:
        raise Divergent("E[N] diverges when eta_fp = 1")
    if tp == 1.0:
        return (r - 1.0) + 1.0 / (1.0 - fp)
    return (tp - tp ** r) / (1.0 - tp) + tp ** r / (1.0 - fp)


def expected_stop_time(params: ScenarioParams) -> float:
    """Expected drafting time before the first verifier rejection (verifier cost ignored)."""
    tp, fp, r, t_d = params.eta_tp, params.eta_fp, params.r, params.t_d
    if fp >= 1.0:
        raise Divergent("E[T_stop] diverges when eta_fp = 1")
    if tp == 1.0:
        return r * t_d + t_d / (1.0 - fp)
    return (1.0 - tp ** r) * t_d / (1.0 - tp) + tp ** r * t_d / (1.0 - fp)


def acceptance_rate_sd(p: CategoricalDist, q: CategoricalDist) -> float:
    return 1.0 - tv_distance(p, q)


def acceptance_rate_sprinter(p: CategoricalDist, q: CategoricalDist, eta_fp: float) -> float:
    if not 0.0 <= eta_fp <= 1.0:
        raise ValueError("eta_fp must lie in [0, 1]")
    return 1.0 - (1.0 - eta_fp) * tv_distance(p, q)


def sprinter_token_dist(p: CategoricalDist, q: CategoricalDist, eta_fp: float) -> CategoricalDist:
    return sprinter_mixture(p, q, eta_fp)


def flops_sd(gamma: int, cost: CostModel) -> float:
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    return gamma * cost.F_d + gamma * cost.F_t


def flops_sprinter(gamma: int, cost: CostModel) -> float:
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    return gamma * cost.F_d + gamma * cost.F_v + cost.F_t


def flops_savings(gamma: int, cost: CostModel) -> float:
    return flops_sd(gamma, cost) - flops_sprinter(gamma, cost)
