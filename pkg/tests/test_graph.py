import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from compflow.graph import (
    CharacteristicGraph,
    FunctionSpec,
    Pmf,
    build_characteristic_graph,
    entropic_surjectivity,
    function_surjectivity,
    graph_entropy,
    maximal_independent_sets,
    slepian_wolf_member,
    source_entropy,
)


# ---- independent oracles -------------------------------------------------

def brute_mis(vertices, edges):
    """Maximal independent sets by exhaustive subset enumeration."""
    edges = {frozenset(e) for e in edges}

    def independent(s):
        return not any(frozenset(p) in edges for p in itertools.combinations(s, 2))

    indep = [frozenset(s) for r in range(len(vertices) + 1) for s in itertools.combinations(vertices, r) if independent(s)]
    return {s for s in indep if not any(s < t for t in indep)}


def oracle_graph_entropy(vertices, edges, px, starts=40, seed=1):
    """min I(X;W) by direct softmax-parametrized minimization from many starts."""
    sets = sorted(brute_mis(vertices, edges), key=sorted)
    member = np.array([[v in s for s in sets] for v in vertices], dtype=bool)
    px = np.asarray(px, float)
    idx = np.nonzero(member)

    def mi(theta):
        logits = np.full(member.shape, -np.inf)
        logits[idx] = theta
        logits -= logits.max(axis=1, keepdims=True)
        w = np.exp(logits)
        cond = w / w.sum(axis=1, keepdims=True)
        q = px @ cond
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(cond > 0, cond * np.log2(cond / q), 0.0)
        return float((px[:, None] * t).sum())

    rng = np.random.default_rng(seed)
    best = math.inf
    for _ in range(starts):
        res = minimize(mi, rng.normal(scale=3.0, size=len(idx[0])), method="BFGS", options={"gtol": 1e-10})
        best = min(best, res.fun)
    return best


def random_graph(draw_edges, n):
    return CharacteristicGraph(tuple(range(n)), frozenset(frozenset(e) for e in draw_edges))


edge_lists = st.integers(min_value=1, max_value=7).flatmap(
    lambda n: st.tuples(
        st.just(n),
        st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)).filter(lambda e: e[0] != e[1]), max_size=12),
    )
)


# ---- graph entropy -------------------------------------------------------

@pytest.mark.parametrize("n,expected", [(2, 1.0), (4, 2.0), (8, 3.0)])
def test_complete_graph_uniform(n, expected):
    g = CharacteristicGraph.complete(range(n))
    assert graph_entropy(g, Pmf.uniform(range(n))).value == pytest.approx(expected, abs=1e-9)


def test_empty_graph_is_zero():
    g = CharacteristicGraph(tuple(range(4)))
    res = graph_entropy(g, Pmf.from_weights(range(4), [1, 2, 3, 4]))
    assert res.value == pytest.approx(0.0, abs=1e-12)


def test_single_vertex():
    assert graph_entropy(CharacteristicGraph((0,)), Pmf.uniform([0])).value == 0.0


def test_five_cycle_matches_oracle():
    g = CharacteristicGraph.cycle(5)
    got = graph_entropy(g, Pmf.uniform(range(5))).value
    oracle = oracle_graph_entropy(range(5), g.edges, [0.2] * 5)
    assert got == pytest.approx(oracle, abs=1e-4)
    # vertex-transitive graphs have H = log2(n / alpha)
    assert got == pytest.approx(math.log2(5 / 2), abs=1e-6)


def test_path_nonuniform_matches_oracle():
    g = CharacteristicGraph((0, 1, 2), frozenset({frozenset((0, 1)), frozenset((1, 2))}))
    px = [1 / 6, 2 / 6, 3 / 6]
    got = graph_entropy(g, Pmf.from_weights((0, 1, 2), [1, 2, 3])).value
    assert got == pytest.approx(oracle_graph_entropy((0, 1, 2), g.edges, px), abs=1e-6)


def test_conditional_supported_on_containing_sets():
    g = CharacteristicGraph.cycle(5)
    res = graph_entropy(g, Pmf.uniform(range(5)))
    for (w, x), p in res.conditional_map(g.vertices).items():
        assert x in w and p > 0
    assert np.allclose(res.conditional.sum(axis=1), 1.0)


@settings(max_examples=40, deadline=None)
@given(edge_lists, st.lists(st.floats(0.05, 1.0), min_size=7, max_size=7))
def test_graph_entropy_at_most_source_entropy(ne, w):
    n, edges = ne
    g = random_graph(edges, n)
    pmf = Pmf.from_weights(range(n), w[:n])
    assert graph_entropy(g, pmf, restarts=2).value <= source_entropy(pmf) + 1e-9


@settings(max_examples=30, deadline=None)
@given(edge_lists, st.tuples(st.integers(0, 6), st.integers(0, 6)))
def test_graph_entropy_monotone_under_edge_addition(ne, extra):
    n, edges = ne
    u, v = extra[0] % n, extra[1] % n
    g = random_graph(edges, n)
    pmf = Pmf.uniform(range(n))
    base = graph_entropy(g, pmf, restarts=4).value
    if u != v:
        g2 = random_graph(list(edges) + [(u, v)], n)
        assert graph_entropy(g2, pmf, restarts=4).value >= base - 1e-6


# ---- maximal independent sets --------------------------------------------

@settings(max_examples=60, deadline=None)
@given(
    st.integers(min_value=1, max_value=10).flatmap(
        lambda n: st.tuples(st.just(n), st.sets(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=25))
    )
)
def test_mis_matches_exhaustive_enumeration(ne):
    n, raw = ne
    edges = [e for e in raw if e[0] != e[1]]
    g = random_graph(edges, n)
    assert set(maximal_independent_sets(g)) == brute_mis(range(n), edges)


def test_mis_vertex_cap():
    with pytest.raises(ValueError):
        maximal_independent_sets(CharacteristicGraph(tuple(range(21))))


# ---- characteristic graph ------------------------------------------------

def test_identity_function_gives_complete_graph():
    spec = FunctionSpec.from_callable(lambda a, b: (a, b), [range(3), range(2)])
    g = build_characteristic_graph(spec, 1)
    assert g.edges == CharacteristicGraph.complete(range(3)).edges


def test_constant_function_gives_empty_graph():
    spec = FunctionSpec.from_callable(lambda a, b: 0, [range(3), range(2)])
    assert build_characteristic_graph(spec, 1).edges == frozenset()


def test_zero_probability_pairs_do_not_create_edges():
    # f = x1 xor x2, but x2 = x1 always: no rest-assignment separates x1 values
    joint = Pmf.uniform([(0, 0), (1, 1)])
    spec = FunctionSpec.from_callable(lambda a, b: a ^ b, [(0, 1), (0, 1)], joint)
    assert build_characteristic_graph(spec, 1).edges == frozenset()
    full = FunctionSpec.from_callable(lambda a, b: a ^ b, [(0, 1), (0, 1)])
    assert build_characteristic_graph(full, 1).edges == {frozenset((0, 1))}


def test_source_index_is_one_based():
    spec = FunctionSpec.from_callable(lambda a, b: b, [range(2), range(3)])
    assert build_characteristic_graph(spec, 1).edges == frozenset()
    assert len(build_characteristic_graph(spec, 2).edges) == 3
    with pytest.raises(IndexError):
        build_characteristic_graph(spec, 0)


def test_mod_function_surjectivity_between_zero_and_one():
    # f = (x1 + x2) mod 2 over x1 in 0..3: x1 only matters through its parity
    spec = FunctionSpec.from_callable(lambda a, b: (a + b) % 2, [range(4), range(2)])
    info = function_surjectivity(spec, source_index=1)
    assert info["graph_entropy"] == pytest.approx(1.0, abs=1e-9)
    assert info["surjectivity"] == pytest.approx(0.5, abs=1e-9)


# ---- entropies and surjectivity -----------------------------------------

def test_source_entropy_examples():
    assert source_entropy(Pmf.uniform([0, 1])) == pytest.approx(1.0)
    assert source_entropy(Pmf((0, 1), (1.0, 0.0))) == 0.0
    assert source_entropy(Pmf((0, 1, 2), (0.5, 0.25, 0.25))) == pytest.approx(1.5)


def test_entropic_surjectivity_examples():
    assert entropic_surjectivity(2.0, 2.0) == 1.0
    assert entropic_surjectivity(0.0, 2.0) == 0.0
    hg = graph_entropy(CharacteristicGraph.cycle(5), Pmf.uniform(range(5))).value
    assert entropic_surjectivity(hg, math.log2(5)) == pytest.approx(math.log2(2.5) / math.log2(5), abs=1e-6)
    with pytest.raises(ValueError):
        entropic_surjectivity(0.0, 0.0)


@settings(max_examples=30, deadline=None)
@given(edge_lists)
def test_surjectivity_in_unit_interval_and_zero_iff_edgeless(ne):
    n, edges = ne
    g = random_graph(edges, n)
    pmf = Pmf.uniform(range(n))
    hx = source_entropy(pmf)
    if hx == 0:
        return
    gamma = entropic_surjectivity(graph_entropy(g, pmf, restarts=2).value, hx)
    assert 0.0 <= gamma <= 1.0
    assert (gamma < 1e-9) == (len(g.edges) == 0)


def test_complete_graph_surjectivity_is_one():
    pmf = Pmf.from_weights(range(4), [1, 2, 3, 4])
    hg = graph_entropy(CharacteristicGraph.complete(range(4)), pmf).value
    assert entropic_surjectivity(hg, source_entropy(pmf)) == pytest.approx(1.0, abs=1e-9)


# ---- Slepian-Wolf --------------------------------------------------------

INDEP = Pmf.uniform(list(itertools.product((0, 1), (0, 1))))
COPY = Pmf.uniform([(0, 0), (1, 1)])


def test_slepian_wolf_examples():
    assert slepian_wolf_member(1.0, 1.0, INDEP)
    assert not slepian_wolf_member(0.9, 0.9, INDEP)
    assert slepian_wolf_member(1.0, 0.0, COPY)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 2), st.floats(0, 2), st.floats(0, 1), st.floats(0, 1), st.sampled_from([INDEP, COPY]))
def test_slepian_wolf_monotone(r1, r2, d1, d2, joint):
    if slepian_wolf_member(r1, r2, joint):
        assert slepian_wolf_member(r1 + d1, r2 + d2, joint)
