"""Load thresholds, stability and occupancy bounds, and allocation cost examples."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InstabilityError
from .queueing import complexity

_RHO_MAX = 1.0 - 1e-12


@dataclass(frozen=True)
class ThresholdResult:
    rho_th: float
    feasible: bool
    iterations: int


@dataclass(frozen=True)
class LBounds:
    lower: float
    upper: float
    b_minus: float
    b_plus: float
    regime: str
    a: float
    gamma_cap: float


@dataclass(frozen=True)
class FlowBounds:
    lower: float
    upper: float
    approx_upper: float
    gamma_min: float


def threshold_gap(rho: float, d: float, gamma_surj: float) -> float:
    """Positive exactly when computing at intensity ``rho`` beats pure relaying."""
    return rho * rho / (1.0 - rho) - d * (1.0 - rho * gamma_surj) / (1.0 - gamma_surj)


def load_threshold(d: float, gamma_surj: float, tol: float = 1e-10) -> ThresholdResult:
    """Smallest traffic intensity at which the compute condition holds.

    Bisection on the sign change of :func:`threshold_gap`, which is increasing
    in rho on [0, 1).
    """
    if d < 0:
        raise ValueError("d must be nonnegative")
    if gamma_surj >= 1:
        raise ValueError("Gamma = 1: class is incompressible, threshold undefined")
    if gamma_surj < 0:
        raise ValueError("Gamma must be nonnegative")
    if d == 0:
        return ThresholdResult(0.0, True, 0)
    lo, hi = 0.0, _RHO_MAX
    if threshold_gap(hi, d, gamma_surj) <= 0:
        return ThresholdResult(1.0, False, 0)
    it = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if threshold_gap(mid, d, gamma_surj) > 0:
            hi = mid
        else:
            lo = mid
        it += 1
    return ThresholdResult(hi, True, it)


def load_threshold_coupled(cls, k: float, gamma_surj: float, tol: float = 1e-10, grid: int = 10_000) -> ThresholdResult:
    """Threshold with the compute backlog tied to the intensity itself.

    Uses the backlog of the M/M/1 node model at gamma = Gamma lambda,
    m(rho) = rho (1 - Gamma) / (1 - rho Gamma), in place of a fixed d. The
    gap may then cross zero more than once, so the first crossing is located
    on a grid and refined by bisection.
    """
    if gamma_surj >= 1:
        raise ValueError("Gamma = 1: class is incompressible, threshold undefined")

    def gap(rho):
        m = rho * (1 - gamma_surj) / (1 - rho * gamma_surj)
        return threshold_gap(rho, complexity(cls, m, k), gamma_surj)

    prev = 0.0
    for i in range(1, grid + 1):
        rho = _RHO_MAX * i / grid
        if gap(rho) > 0:
            lo, hi, it = prev, rho, 0
            while hi - lo > tol:
                mid = 0.5 * (lo + hi)
                lo, hi = (lo, mid) if gap(mid) > 0 else (mid, hi)
                it += 1
            return ThresholdResult(hi, True, it)
        prev = rho
    return ThresholdResult(1.0, False, grid)


def stability_check(d: float, n: float) -> bool:
    if d < 0 or n < 0:
        raise ValueError("d and n must be nonnegative")
    return d >= n


def little_L_bounds(lam: float, mu: float, d: float, linear_factor: float = 1.01) -> LBounds:
    """Occupancy bounds from the feasible processing-factor interval.

    Roots b- <= b+ of g^2 - 2 a g + lam mu = 0 with 2a = lam (1 + 1/d) + mu.
    The quadratic is negative at both g = lam and g = mu, so b- < lam < mu < b+
    always; the upper occupancy is therefore evaluated at min(b+, lam), the
    largest stable processing factor.
    """
    if d <= 0:
        raise ValueError("d must be positive")
    if not 0 < lam < mu:
        raise InstabilityError(f"need 0 < lambda < mu, got lambda={lam}, mu={mu}")
    a = 0.5 * (lam * (1.0 + 1.0 / d) + mu)
    disc = a * a - lam * mu
    if disc < 0:
        raise ValueError("negative discriminant: no feasible processing factor")
    root = math.sqrt(disc)
    # lam*mu/(a+root) avoids cancellation in a - root
    b_minus = lam * mu / (a + root)
    b_plus = a + root
    cap = min(b_plus, lam)

    def occupancy(g):
        return g * (d / lam + 1.0 / (mu - g))

    regime = "linear" if a * a <= linear_factor * lam * mu else "sublinear"
    return LBounds(occupancy(b_minus), occupancy(cap), b_minus, b_plus, regime, a, cap)


def flow_L_bounds(hg: float, h_x: float, mu: float, lam: float) -> FlowBounds:
    """Bounds on occupancy between full compression and no computation."""
    if h_x <= 0:
        raise ValueError("source entropy must be positive")
    if hg >= mu or lam >= mu:
        raise InstabilityError("graph entropy and arrival rate must both be below mu")
    ratio = hg / h_x
    approx = math.inf if ratio >= 1 else 1.0 / (1.0 - ratio)
    return FlowBounds(
        lower=hg / (mu - hg),
        upper=lam / (mu - lam),
        approx_upper=approx,
        gamma_min=mu * hg / (2.0 * mu - hg),
    )


def bisection_allocation_cost(N: float, V: int, W: int = 0) -> tuple[float, float]:
    """Compute and communication cost of a distributed minimum by bisection.

    ``W`` intermediate aggregators (0 for direct reporting to the sink). Big-O
    constants are 1 and logs are base 2.
    """
    if V < 1 or N < V or W < 0 or W >= V:
        raise ValueError("need N >= V >= 1 and 0 <= W < V")
    comm = V * math.e
    if W == 0:
        return V * math.log2(N / V) + math.log2(V), comm
    compute = (V - W) * math.log2(N / V) + W * math.log2((V - W) / W) + math.log2(W)
    return compute, comm


def classification_split_cost(N: float, W: int) -> tuple[float, float, float]:
    """Split vs centralized cost of a linear score over ``N`` inputs on ``W`` nodes.

    Returns ``(split_cost, central_cost, min_W)`` where ``min_W`` is the worker
    count beyond which splitting can beat the centralized cost.
    """
    if N < 1 or W < 1:
        raise ValueError("need N >= 1 and W >= 1")
    logn = math.log2(N)
    central = N * logn
    per_node = (N / W) * logn
    split = per_node * math.log2(per_node) + W if per_node > 0 else float(W)
    return split, central, logn
