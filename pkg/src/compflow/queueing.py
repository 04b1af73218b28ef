"""Per-node, per-class delay costs and Little's-Law bookkeeping.

Rates are in bits/sec, delays in seconds, occupancies in packets.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

from .errors import InstabilityError


class Complexity(str, enum.Enum):
    SEARCH = "Search"
    MAPREDUCE = "MapReduce"
    CLASSIFICATION = "Classification"
    EXPSERVICE = "ExpService"

    @classmethod
    def parse(cls, value) -> "Complexity":
        if isinstance(value, cls):
            return value
        for member in cls:
            if str(value).lower() == member.value.lower():
                return member
        raise ValueError(f"unknown complexity class {value!r}")


class DelayMode(str, enum.Enum):
    ADDITIVE = "additive"
    PIPELINED = "pipelined"


@dataclass(frozen=True)
class QueueDecomposition:
    L: float
    m: float
    n: float


@dataclass(frozen=True)
class CostBreakdown:
    w_comp: float
    w_comm: float
    mode: DelayMode = DelayMode.ADDITIVE

    @property
    def w_total(self) -> float:
        if self.mode == DelayMode.PIPELINED:
            return max(self.w_comp, self.w_comm)
        return self.w_comp + self.w_comm


@dataclass(frozen=True)
class NodeClassParams:
    lam: float
    mu: float
    gamma: float
    k: float = 1.0
    complexity: Complexity = Complexity.MAPREDUCE
    chi: float | None = None

    def __post_init__(self):
        if not 0 <= self.gamma <= self.lam * (1 + 1e-12):
            raise ValueError(f"need 0 <= gamma <= lambda, got gamma={self.gamma}, lambda={self.lam}")
        if self.gamma >= self.mu:
            raise InstabilityError(f"rho = gamma/mu = {self.gamma / self.mu:.6g} >= 1")
        if self.complexity == Complexity.EXPSERVICE:
            if self.chi is None or self.lam >= self.chi:
                raise InstabilityError("ExpService needs chi > lambda")

    @property
    def rho(self) -> float:
        return self.gamma / self.mu

    @property
    def sigma(self) -> float | None:
        return None if self.chi is None else self.lam / self.chi


def comm_delay(mu: float, gamma: float = 0.0, node_kind: str = "interior", beta: float = 0.0) -> float:
    """Mean waiting plus service time of the communication queue."""
    if node_kind == "sink":
        return 0.0
    if node_kind == "source":
        load = beta
    elif node_kind == "interior":
        load = gamma
    else:
        raise ValueError(f"unknown node kind {node_kind!r}")
    if load >= mu:
        raise InstabilityError(f"load {load} >= service rate {mu}")
    return 1.0 / (mu - load)


def complexity(cls, m: float, k: float = 1.0) -> float:
    """Operation count for ``m`` queued packets; every class has d(0) = 0."""
    cls = Complexity.parse(cls)
    if m < 0:
        raise ValueError("m must be nonnegative")
    if k < 0:
        raise ValueError("k must be nonnegative")
    if cls == Complexity.SEARCH:
        return k * math.log2(1.0 + m)
    if cls == Complexity.MAPREDUCE:
        return k * m
    if cls == Complexity.CLASSIFICATION:
        return k * math.expm1(m)
    raise ValueError("ExpService has no operation-count form; use comp_delay_exp_service")


def comp_delay(lam: float, d: float, node_kind: str = "interior") -> float:
    if node_kind in ("source", "sink"):
        return 0.0
    if lam <= 0:
        raise ValueError("lambda must be positive")
    return d / lam


def comp_delay_exp_service(lam: float, chi: float, k: float = 1.0) -> float:
    """Compute delay when the compute stage is an exponential server of rate ``chi``."""
    sigma = lam / chi
    if sigma >= 1:
        raise InstabilityError(f"compute intensity sigma = {sigma:.6g} >= 1")
    return k / (chi * (1.0 - sigma))


def comp_delay_routed_terms(lam: float, gamma: float, m: float, p_dep: float, p_route_total: float):
    """Departure and routing terms of the routed compute delay, returned separately."""
    if abs(p_dep + p_route_total - 1.0) > 1e-9:
        raise ValueError("departure and routing probabilities must sum to 1")
    if gamma >= lam:
        raise ValueError("routed compute delay is undefined for gamma >= lambda")
    return p_dep * m / (lam - gamma), p_route_total * m / (lam - gamma)


def comp_delay_routed(lam: float, gamma: float, m: float, p_dep: float, p_route_total: float) -> float:
    return sum(comp_delay_routed_terms(lam, gamma, m, p_dep, p_route_total))


def little_decompose(L: float, lam: float, gamma: float) -> QueueDecomposition:
    """Split occupancy ``L`` into compute (m) and communication (n) parts."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if not 0 <= gamma <= lam or L < 0:
        raise ValueError("need 0 <= gamma <= lambda and L >= 0")
    n = L * gamma / lam
    return QueueDecomposition(L, L - n, n)


def little_check(L: float, gamma: float, W: float, tol: float = 1e-9) -> bool:
    return abs(L - gamma * W) <= tol * max(1.0, L)


def product_form_prob(rho_per_class: Sequence[float], counts: Sequence[int]) -> float:
    """Stationary probability of a multi-class M/M/1 queue holding ``counts`` per class.

    The state is aggregated over class orderings, hence the multinomial factor.
    """
    if len(rho_per_class) != len(counts):
        raise ValueError("rho_per_class and counts differ in length")
    total = math.fsum(rho_per_class)
    if total >= 1:
        raise InstabilityError(f"total intensity {total} >= 1")
    if any(c < 0 for c in counts):
        raise ValueError("counts must be nonnegative")
    log_mult = math.lgamma(sum(counts) + 1) - sum(math.lgamma(c + 1) for c in counts)
    p = (1.0 - total) * math.exp(log_mult)
    for r, c in zip(rho_per_class, counts):
        p *= r**c
    return p


def node_cost(p: NodeClassParams, mode: DelayMode = DelayMode.ADDITIVE) -> tuple[CostBreakdown, QueueDecomposition]:
    """Delay breakdown and occupancies of one interior node-class.

    The communication queue is M/M/1 at load gamma, so n = gamma/(mu - gamma).
    The compute backlog follows from n through the Little's-Law split,
    m = n (lambda/gamma - 1) = (lambda - gamma)/(mu - gamma), which is then
    the input size fed to the complexity function.
    """
    w_comm = comm_delay(p.mu, p.gamma)
    n = p.gamma / (p.mu - p.gamma)
    m = (p.lam - p.gamma) / (p.mu - p.gamma)
    if p.complexity == Complexity.EXPSERVICE:
        w_comp = comp_delay_exp_service(p.lam, p.chi, p.k)
    elif p.lam > 0:
        w_comp = comp_delay(p.lam, complexity(p.complexity, m, p.k))
    else:
        w_comp = 0.0
    return CostBreakdown(w_comp, w_comm, DelayMode(mode)), QueueDecomposition(m + n, m, n)
