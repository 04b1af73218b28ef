"""Routing policies, network specs and the per-class traffic equations.

Arrays indexed by (node, class) have shape ``(V, C)``. Routing transfers have
shape ``(V, C, V, C)``: ``transfer[v, c, w, d]`` is the probability that a
class ``c`` packet finishing service at ``v`` moves to ``w`` as class ``d``.
Class indices are ordered by decreasing complexity, so a packet may only move
to a class of equal or higher index.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import ConvergenceError, SingularSystemError
from .queueing import Complexity, DelayMode

_DIRECT_SOLVE_MAX = 64
_SOLVE_TOL = 1e-12


@dataclass
class RoutingPolicy:
    transfer: np.ndarray
    depart: np.ndarray
    source: np.ndarray | None = None  # (C, V): share of external class-c arrivals sent to each node

    def __post_init__(self):
        self.transfer = np.asarray(self.transfer, dtype=float)
        self.depart = np.asarray(self.depart, dtype=float)
        if self.source is not None:
            self.source = np.asarray(self.source, dtype=float)

    @classmethod
    def from_transfer(cls, transfer, source=None) -> "RoutingPolicy":
        """Policy whose departure probabilities are the complement of the transfers."""
        transfer = np.asarray(transfer, dtype=float)
        return cls(transfer, 1.0 - transfer.sum(axis=(2, 3)), source)

    @classmethod
    def no_routing(cls, n_nodes: int, n_classes: int) -> "RoutingPolicy":
        return cls(np.zeros((n_nodes, n_classes, n_nodes, n_classes)), np.ones((n_nodes, n_classes)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.depart.shape

    def matrix(self) -> np.ndarray:
        """Transfers flattened to a ``(V*C, V*C)`` matrix over (node, class) pairs."""
        V, C = self.shape
        return self.transfer.reshape(V * C, V * C)

    def destination_mass(self) -> np.ndarray:
        """Total routing mass into each destination, per incoming class: shape (V, C).

        Contracts the class-c routing tensor over origin nodes and outgoing
        classes, giving a per-destination total for each class c.
        """
        return np.einsum("vcwd->wc", self.transfer)


def validate_routing(policy: RoutingPolicy, tol: float = 1e-9) -> list[str]:
    """Every violated routing rule, one message per offending row."""
    problems = []
    if policy.depart.ndim != 2:
        return ["depart must be a (nodes, classes) array"]
    V, C = policy.depart.shape
    if policy.transfer.shape != (V, C, V, C):
        return [f"transfer has shape {policy.transfer.shape}, expected {(V, C, V, C)}"]

    for v in range(V):
        for c in range(C):
            row = policy.transfer[v, c]
            dep = policy.depart[v, c]
            if (row < -tol).any() or dep < -tol or (row > 1 + tol).any() or dep > 1 + tol:
                problems.append(f"node {v} class {c}: probabilities outside [0, 1]")
            total = row.sum() + dep
            if abs(total - 1.0) > tol:
                problems.append(f"node {v} class {c}: row sums to {total:.12g}, expected 1")
            lower = row[:, :c]
            if (lower > tol).any():
                w, d = np.argwhere(lower > tol)[0]
                problems.append(
                    f"node {v} class {c}: converts to lower class {d} at node {w} "
                    f"(p={lower[w, d]:.6g}); conversions must not decrease class index"
                )
    for c in range(C):
        if not (policy.depart[:, c] > tol).any():
            problems.append(f"class {c}: no node lets packets depart (network not open)")
    if policy.source is not None:
        if policy.source.shape != (C, V):
            problems.append(f"source has shape {policy.source.shape}, expected {(C, V)}")
        else:
            for c in range(C):
                s = policy.source[c]
                if (s < -tol).any() or abs(s.sum() - 1.0) > tol:
                    problems.append(f"source class {c}: assignment sums to {s.sum():.12g}, expected 1")
    return problems


def _broadcast(value, shape, name):
    # 1-D input is always per node
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 1:
        if arr.shape[0] != shape[0]:
            raise ValueError(f"{name} has {arr.shape[0]} entries, expected one per node ({shape[0]})")
        arr = arr[:, None]
    try:
        return np.broadcast_to(arr, shape).astype(float)
    except ValueError as exc:
        raise ValueError(f"{name} of shape {arr.shape} does not fit {shape}") from exc


@dataclass
class NetworkSpec:
    """Multi-class open network: external arrivals, service rates and routing.

    Scalars and 1-D per-node vectors are broadcast to ``(V, C)``; per-class
    values must be given as a ``(1, C)`` row. ``complexity`` is per class.
    """

    beta: np.ndarray
    mu: np.ndarray
    gamma_surj: np.ndarray
    routing: RoutingPolicy
    k: np.ndarray | float = 1.0
    chi: np.ndarray | float | None = None
    complexity: tuple = ()
    delay_mode: DelayMode = DelayMode.ADDITIVE
    node_names: tuple = ()
    class_names: tuple = ()

    def __post_init__(self):
        V, C = self.routing.shape
        shape = (V, C)
        self.beta = _broadcast(self.beta, shape, "beta")
        self.mu = _broadcast(self.mu, shape, "mu")
        self.k = _broadcast(self.k, shape, "k")
        self.chi = None if self.chi is None else _broadcast(self.chi, shape, "chi")
        self.gamma_surj = np.broadcast_to(np.asarray(self.gamma_surj, dtype=float), (C,)).copy()
        comp = self.complexity or (Complexity.MAPREDUCE,) * C
        if isinstance(comp, (str, Complexity)):
            comp = (comp,) * C
        self.complexity = tuple(Complexity.parse(x) for x in comp)
        if len(self.complexity) != C:
            raise ValueError(f"complexity needs {C} entries, got {len(self.complexity)}")
        self.delay_mode = DelayMode(self.delay_mode)
        self.node_names = tuple(self.node_names) or tuple(f"v{v}" for v in range(V))
        self.class_names = tuple(self.class_names) or tuple(f"c{c}" for c in range(C))
        if (self.beta < 0).any():
            raise ValueError("beta must be nonnegative")
        if (self.mu <= 0).any():
            raise ValueError("mu must be positive")
        if (self.gamma_surj < 0).any() or (self.gamma_surj > 1).any():
            raise ValueError("entropic surjectivity must lie in [0, 1]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.routing.shape

    def with_(self, **changes) -> "NetworkSpec":
        return replace(self, **changes)


@dataclass
class FlowSolution:
    lam: np.ndarray
    gamma: np.ndarray
    residual: float
    feasible: bool
    network: NetworkSpec | None = field(default=None, repr=False)

    @property
    def ratio(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.lam > 0, self.gamma / self.lam, 1.0)


def _residual(net, lam, gamma):
    V, C = net.shape
    inflow = net.routing.matrix().T @ gamma.ravel()
    return float(np.max(np.abs(lam.ravel() - net.beta.ravel() - inflow), initial=0.0))


def _solve_linear(A_op, b, n):
    """Solve lam = b + A_op @ lam."""
    if n <= _DIRECT_SOLVE_MAX:
        try:
            return np.linalg.solve(np.eye(n) - A_op, b)
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError("traffic equations are singular") from exc
    lam = b.copy()
    for _ in range(100_000):
        nxt = b + A_op @ lam
        if np.max(np.abs(nxt - lam)) <= _SOLVE_TOL * max(1.0, np.max(np.abs(nxt))):
            return nxt
        lam = nxt
    raise ConvergenceError("fixed-point traffic iteration did not converge")


def solve_traffic(net: NetworkSpec, mode: str = "equality", gamma=None, ratio=None) -> FlowSolution:
    """Arrival and generated rates satisfying per-class flow conservation.

    ``equality`` sets every generated rate to Gamma_c times the arrival rate.
    ``ratio`` instead fixes gamma/lambda per (node, class), and
    ``given_gamma`` takes the generated rates as given.
    """
    V, C = net.shape
    R_T = net.routing.matrix().T
    if mode == "given_gamma":
        if gamma is None:
            raise ValueError("given_gamma mode needs gamma")
        gamma = _broadcast(gamma, (V, C), "gamma")
        lam = (net.beta.ravel() + R_T @ gamma.ravel()).reshape(V, C)
    else:
        if mode == "equality":
            t = np.broadcast_to(net.gamma_surj, (V, C))
        elif mode == "ratio":
            if ratio is None:
                raise ValueError("ratio mode needs ratio")
            t = _broadcast(ratio, (V, C), "ratio")
        else:
            raise ValueError(f"unknown mode {mode!r}")
        A_op = R_T * t.ravel()[None, :]
        radius = max(abs(np.linalg.eigvals(A_op)), default=0.0)
        if radius >= 1 - 1e-12:
            raise SingularSystemError(f"effective routing has spectral radius {radius:.6g} >= 1; flows diverge")
        lam = _solve_linear(A_op, net.beta.ravel(), V * C).reshape(V, C)
        lam = np.maximum(lam, 0.0)
        gamma = t * lam
    feasible = bool(np.all((lam < net.mu) | (lam == 0)))
    return FlowSolution(lam, gamma, _residual(net, lam, gamma), feasible, net)


def lambda_bounds(net: NetworkSpec) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal-routing bounds on the arrival rates, each of shape (V, C).

    Only each destination's total routing mass is kept, so these bound the
    exact solution only when cross-node structure is negligible.
    """
    ptilde = net.routing.destination_mass()
    lower_diag = 1.0 - ptilde * net.gamma_surj[None, :]
    upper_diag = 1.0 - ptilde
    if np.any(np.isclose(lower_diag, 0.0, atol=1e-14)) or np.any(np.isclose(upper_diag, 0.0, atol=1e-14)):
        raise SingularSystemError("diagonal routing matrix is singular")
    return net.beta / lower_diag, net.beta / upper_diag


def is_irreducible(P) -> bool:
    n, _ = connected_components(np.asarray(P) > 0, directed=True, connection="strong")
    return n == 1


def stationary_distribution(P, tol: float = 1e-12, max_iters: int = 1_000_000, damping: float = 0.999) -> np.ndarray:
    """Stationary vector of an irreducible stochastic matrix by power iteration.

    Iterates the lazy chain ``damping * P + (1 - damping) * I``, which has the
    same stationary vector and is aperiodic.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError("P must be square")
    if (P < 0).any() or not np.allclose(P.sum(axis=1), 1.0, atol=1e-10):
        raise ValueError("P must be row-stochastic")
    if not is_irreducible(P):
        raise ValueError("chain is reducible; stationary distribution is not unique")
    lazy = damping * P + (1.0 - damping) * np.eye(len(P))
    pi = np.full(len(P), 1.0 / len(P))
    for _ in range(max_iters):
        pi = pi @ lazy
        pi /= pi.sum()
        if np.abs(pi @ P - pi).sum() < tol:
            return pi
    raise ConvergenceError("power iteration did not reach tolerance")


def dtmc_entropy_rate(P, pi) -> float:
    """Entropy rate in bits of a stationary Markov chain."""
    P = np.asarray(P, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if P.ndim != 2 or P.shape != (len(pi), len(pi)):
        raise ValueError("dimension mismatch between P and pi")
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(P > 0, np.log2(np.where(P > 0, P, 1.0)), 0.0)
    return float(-(pi[:, None] * P * logs).sum()) + 0.0


def routing_chain(net: NetworkSpec) -> np.ndarray:
    """Class-conversion chain over (node, class) states, flattened row-major.

    A packet that departs is replaced by a fresh arrival drawn in proportion
    to the external arrival rates, which closes the open network into a
    proper stochastic matrix.
    """
    beta = net.beta.ravel()
    if beta.sum() <= 0:
        raise ValueError("routing chain needs some external arrivals")
    restart = beta / beta.sum()
    return net.routing.matrix() + net.routing.depart.ravel()[:, None] * restart[None, :]
