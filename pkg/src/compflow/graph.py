"""Characteristic graphs, graph entropy and related source-coding quantities.

All entropies are in bits.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Sequence

import networkx as nx
import numpy as np

_PMF_TOL = 1e-12


@dataclass(frozen=True)
class Pmf:
    """Probability mass function over an ordered, duplicate-free support."""

    support: tuple
    probs: tuple

    def __post_init__(self):
        support = tuple(self.support)
        probs = tuple(float(p) for p in self.probs)
        if len(support) != len(probs):
            raise ValueError("support and probs differ in length")
        if len(set(support)) != len(support):
            raise ValueError("support symbols must be distinct")
        if any(p < 0 or not math.isfinite(p) for p in probs):
            raise ValueError("probabilities must be finite and nonnegative")
        if abs(sum(probs) - 1.0) > _PMF_TOL:
            raise ValueError(f"probabilities sum to {sum(probs)!r}, not 1")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def uniform(cls, support: Iterable[Hashable]) -> "Pmf":
        support = tuple(support)
        if not support:
            raise ValueError("empty support")
        return cls(support, [1.0 / len(support)] * len(support))

    @classmethod
    def from_weights(cls, support, weights) -> "Pmf":
        w = np.asarray(weights, dtype=float)
        return cls(tuple(support), tuple(w / w.sum()))

    def prob(self, symbol) -> float:
        return self.as_dict().get(symbol, 0.0)

    def as_dict(self) -> dict:
        return dict(zip(self.support, self.probs))

    def marginal(self, index: int) -> "Pmf":
        """Marginal of component ``index`` (0-based) for a pmf over tuples."""
        acc: dict = {}
        for sym, p in zip(self.support, self.probs):
            acc[sym[index]] = acc.get(sym[index], 0.0) + p
        return Pmf(tuple(acc), tuple(acc.values()))


@dataclass(frozen=True)
class FunctionSpec:
    """A finite function table over ``arity`` sources with a joint source pmf."""

    alphabets: tuple
    table: dict
    joint: Pmf

    def __post_init__(self):
        alphabets = tuple(tuple(a) for a in self.alphabets)
        if not alphabets:
            raise ValueError("a function needs at least one source")
        object.__setattr__(self, "alphabets", alphabets)
        for sym, p in zip(self.joint.support, self.joint.probs):
            if len(sym) != len(alphabets):
                raise ValueError(f"joint symbol {sym!r} has wrong arity")
            if p > 0 and sym not in self.table:
                raise ValueError(f"function undefined at {sym!r} which has nonzero probability")

    @property
    def arity(self) -> int:
        return len(self.alphabets)

    @classmethod
    def from_callable(cls, func: Callable, alphabets: Sequence[Sequence], joint: Pmf | None = None):
        alphabets = tuple(tuple(a) for a in alphabets)
        tuples = list(itertools.product(*alphabets))
        table = {t: func(*t) for t in tuples}
        if joint is None:
            joint = Pmf.uniform(tuples)
        return cls(alphabets, table, joint)

    def source_pmf(self, source_index: int) -> Pmf:
        """Marginal pmf of source ``source_index`` (1-based), over its full alphabet."""
        marg = self.joint.marginal(source_index - 1).as_dict()
        alphabet = self.alphabets[source_index - 1]
        return Pmf(alphabet, [marg.get(a, 0.0) for a in alphabet])


@dataclass(frozen=True)
class CharacteristicGraph:
    vertices: tuple
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        vertices = tuple(self.vertices)
        vset = set(vertices)
        edges = set()
        for e in self.edges:
            pair = frozenset(e)
            if len(pair) != 2:
                raise ValueError(f"self-loop or malformed edge {tuple(e)!r}")
            if not pair <= vset:
                raise ValueError(f"edge {tuple(e)!r} references unknown vertices")
            edges.add(pair)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "edges", frozenset(edges))

    @classmethod
    def complete(cls, vertices) -> "CharacteristicGraph":
        vertices = tuple(vertices)
        return cls(vertices, frozenset(frozenset(p) for p in itertools.combinations(vertices, 2)))

    @classmethod
    def cycle(cls, n: int) -> "CharacteristicGraph":
        return cls(tuple(range(n)), frozenset(frozenset((i, (i + 1) % n)) for i in range(n)))

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(self.vertices)
        g.add_edges_from(tuple(e) for e in self.edges)
        return g

    def is_independent(self, subset) -> bool:
        return not any(frozenset(p) in self.edges for p in itertools.combinations(subset, 2))


@dataclass
class GraphEntropyResult:
    value: float
    sets: list
    conditional: np.ndarray  # rows: vertices, columns: sets; p(w | x)
    iterations: int
    converged: bool

    def conditional_map(self, vertices) -> dict:
        return {
            (w, x): self.conditional[i, j]
            for i, x in enumerate(vertices)
            for j, w in enumerate(self.sets)
            if self.conditional[i, j] > 0
        }


def build_characteristic_graph(spec: FunctionSpec, source_index: int) -> CharacteristicGraph:
    """Characteristic graph of ``spec`` on source ``source_index`` (1-based).

    Vertices ``u`` and ``v`` are joined when some assignment of the other
    sources has positive joint probability with both of them and the function
    values differ there.
    """
    if not 1 <= source_index <= spec.arity:
        raise IndexError(f"source_index {source_index} outside 1..{spec.arity}")
    i = source_index - 1
    alphabet = spec.alphabets[i]
    if not alphabet:
        raise ValueError(f"source {source_index} has an empty alphabet")

    # group positive-probability tuples by the assignment of the other sources
    by_rest: dict = {}
    for sym, p in zip(spec.joint.support, spec.joint.probs):
        if p > 0:
            rest = sym[:i] + sym[i + 1:]
            by_rest.setdefault(rest, {})[sym[i]] = spec.table[sym]

    edges = set()
    for values in by_rest.values():
        for (u, fu), (v, fv) in itertools.combinations(values.items(), 2):
            if fu != fv:
                edges.add(frozenset((u, v)))
    return CharacteristicGraph(alphabet, frozenset(edges))


def maximal_independent_sets(g: CharacteristicGraph, max_vertices: int = 20) -> list:
    """All maximal independent sets, as a sorted list of frozensets.

    Uses maximal-clique enumeration on the complement graph; the vertex cap
    guards against exponential blowup.
    """
    if len(g.vertices) > max_vertices:
        raise ValueError(f"{len(g.vertices)} vertices exceeds the cap of {max_vertices}")
    if not g.vertices:
        return []
    order = {v: k for k, v in enumerate(g.vertices)}
    comp = nx.complement(g.to_networkx())
    sets = [frozenset(c) for c in nx.find_cliques(comp)]
    return sorted(sets, key=lambda s: sorted(order[v] for v in s))


def source_entropy(pmf: Pmf) -> float:
    p = np.asarray(pmf.probs, dtype=float)
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum()) + 0.0


def _mutual_information(px, cond, q):
    # I(X;W) = sum_x p(x) sum_w p(w|x) log2(p(w|x)/q(w))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(cond > 0, cond / q[None, :], 1.0)
        terms = np.where(cond > 0, cond * np.log2(ratio), 0.0)
    return float((px[:, None] * terms).sum())


def _alternate(px, member, q, tol, max_iters):
    """Alternating minimization from marginal ``q``; returns (value, cond, iters, converged)."""
    prev = math.inf
    value = math.inf
    cond = None
    for it in range(1, max_iters + 1):
        weights = member * q[None, :]
        cond = weights / weights.sum(axis=1, keepdims=True)
        q = px @ cond
        value = _mutual_information(px, cond, q)
        if abs(prev - value) < tol:
            return value, cond, it, True
        prev = value
    return value, cond, max_iters, False


def graph_entropy(
    g: CharacteristicGraph,
    pmf: Pmf,
    tol: float = 1e-13,
    max_iters: int = 200_000,
    restarts: int = 8,
    seed: int = 0,
) -> GraphEntropyResult:
    """Körner graph entropy of ``g`` under ``pmf`` by alternating minimization.

    Minimizes I(X;W) over conditionals p(w|x) supported on the maximal
    independent sets containing x. The first run starts from the uniform
    conditional over containing sets; ``restarts`` further runs start from
    random set marginals and the best value is kept.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    probs = pmf.as_dict()
    if set(probs) - set(g.vertices):
        raise ValueError("pmf has symbols outside the graph's vertex set")
    px = np.array([probs.get(v, 0.0) for v in g.vertices], dtype=float)
    sets = maximal_independent_sets(g)
    index = {v: k for k, v in enumerate(g.vertices)}
    member = np.zeros((len(g.vertices), len(sets)))
    for j, s in enumerate(sets):
        for v in s:
            member[index[v], j] = 1.0

    if len(sets) <= 1:
        cond = np.ones((len(g.vertices), len(sets)))
        return GraphEntropyResult(0.0, sets, cond, 0, True)

    init = member / member.sum(axis=1, keepdims=True)
    starts = [px @ init]
    rng = np.random.default_rng(seed)
    starts += [rng.dirichlet(np.ones(len(sets))) for _ in range(restarts)]

    best = None
    for q0 in starts:
        run = _alternate(px, member, q0, tol, max_iters)
        if best is None or run[0] < best[0]:
            best = run
    value, cond, iters, converged = best
    return GraphEntropyResult(max(value, 0.0), sets, cond, iters, converged)


def entropic_surjectivity(hg_f: float, h_x: float) -> float:
    """Ratio of a function's graph entropy to its source entropy."""
    if h_x <= 0:
        raise ValueError("source entropy is zero: degenerate deterministic source")
    if hg_f < -1e-12 or hg_f > h_x * (1 + 1e-9) + 1e-12:
        raise ValueError(f"graph entropy {hg_f} outside [0, {h_x}]")
    return min(max(hg_f / h_x, 0.0), 1.0)


def function_surjectivity(spec: FunctionSpec, source_index: int | None = None, **solver) -> dict:
    """Graph entropy, source entropy and their ratio for a function table.

    With ``source_index`` the ratio is for that source alone; otherwise the
    per-source graph and source entropies are summed before dividing.
    """
    indices = [source_index] if source_index else range(1, spec.arity + 1)
    hg = hx = 0.0
    for i in indices:
        pmf = spec.source_pmf(i)
        hg += graph_entropy(build_characteristic_graph(spec, i), pmf, **solver).value
        hx += source_entropy(pmf)
    return {"graph_entropy": hg, "source_entropy": hx, "surjectivity": entropic_surjectivity(hg, hx)}


def slepian_wolf_member(r1: float, r2: float, joint: Pmf, tol: float = 1e-12) -> bool:
    """Whether rates (r1, r2) lie in the Slepian-Wolf region of a pair source."""
    h12 = source_entropy(joint)
    h1 = source_entropy(joint.marginal(0))
    h2 = source_entropy(joint.marginal(1))
    return r1 >= h12 - h2 - tol and r2 >= h12 - h1 - tol and r1 + r2 >= h12 - tol
