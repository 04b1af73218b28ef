import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compflow.errors import InstabilityError
from compflow.queueing import (
    Complexity,
    CostBreakdown,
    DelayMode,
    NodeClassParams,
    comm_delay,
    comp_delay,
    comp_delay_exp_service,
    comp_delay_routed,
    comp_delay_routed_terms,
    complexity,
    little_check,
    little_decompose,
    node_cost,
    product_form_prob,
)

rates = st.floats(min_value=1e-3, max_value=1e3)


def test_comm_delay_examples():
    assert comm_delay(2.0, 1.0) == 1.0
    assert comm_delay(5.0, 10.0, node_kind="sink") == 0.0
    assert comm_delay(4.0, node_kind="source", beta=2.0) == 0.5
    with pytest.raises(InstabilityError):
        comm_delay(1.0, 1.0)


def test_complexity_examples():
    assert complexity(Complexity.SEARCH, 0, 1) == 0.0
    assert complexity("MapReduce", 5, 1) == 5.0
    assert complexity("classification", 2, 1) == pytest.approx(math.e**2 - 1)
    with pytest.raises(ValueError):
        complexity("ExpService", 1, 1)


@pytest.mark.parametrize("cls", ["Search", "MapReduce", "Classification"])
def test_identity_has_zero_cost(cls):
    assert complexity(cls, 0.0, 3.0) == 0.0


def test_comp_delay_examples():
    assert comp_delay(2.0, 4.0) == 2.0
    assert comp_delay(2.0, 0.0) == 0.0
    assert comp_delay(1.0, complexity("Search", 3, 1)) == pytest.approx(2.0)
    assert comp_delay(1.0, 5.0, node_kind="sink") == 0.0
    with pytest.raises(ValueError):
        comp_delay(0.0, 1.0)


def test_comp_delay_exp_service_examples():
    assert comp_delay_exp_service(1.0, 2.0, 1.0) == pytest.approx(1.0)
    assert comp_delay_exp_service(1e-12, 2.0, 3.0) == pytest.approx(1.5)
    assert comp_delay_exp_service(3.0, 4.0, 2.0) == pytest.approx(2.0)
    with pytest.raises(InstabilityError):
        comp_delay_exp_service(2.0, 2.0)


def test_comp_delay_routed_examples():
    assert comp_delay_routed(2.0, 1.0, 3.0, 1.0, 0.0) == 3.0
    assert comp_delay_routed(2.0, 1.0, 0.0, 1.0, 0.0) == 0.0
    assert comp_delay_routed(3.0, 1.0, 4.0, 0.5, 0.5) == pytest.approx(2.0)
    assert comp_delay_routed_terms(3.0, 1.0, 4.0, 0.25, 0.75) == pytest.approx((0.5, 1.5))
    with pytest.raises(ValueError):
        comp_delay_routed(2.0, 2.0, 1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        comp_delay_routed(2.0, 1.0, 1.0, 0.5, 0.4)


def test_little_decompose_examples():
    d = little_decompose(4.0, 2.0, 2.0)
    assert (d.m, d.n) == (0.0, 4.0)
    d = little_decompose(4.0, 2.0, 1.0)
    assert d.m == d.n == 2.0
    d = little_decompose(6.0, 3.0, 1.0)
    assert (d.m, d.n) == pytest.approx((4.0, 2.0))
    with pytest.raises(ValueError):
        little_decompose(1.0, 0.0, 0.0)


@given(st.floats(0, 1e3), rates, st.floats(0, 1))
def test_decomposition_conserves_occupancy(L, lam, frac):
    d = little_decompose(L, lam, frac * lam)
    assert d.m >= 0 and d.n >= 0
    assert d.m + d.n == pytest.approx(L, rel=1e-12, abs=1e-12)


def test_little_check_examples():
    assert little_check(2.0, 1.0, 2.0)
    assert not little_check(2.0, 1.0, 3.0)
    lam, mu, gamma, d = 2.0, 5.0, 1.5, 3.0
    W = d / lam + 1.0 / (mu - gamma)
    assert little_check(gamma * (d / lam + 1.0 / (mu - gamma)), gamma, W)


@given(st.floats(0.01, 0.99))
def test_mm1_comm_queue_obeys_little(rho):
    mu = 1.0
    lam = rho * mu
    n = rho / (1 - rho)
    assert n == pytest.approx(lam * comm_delay(mu, lam), abs=1e-12)


def test_product_form_examples():
    assert product_form_prob([0.5], [0]) == pytest.approx(0.5)
    assert product_form_prob([0.5], [2]) == pytest.approx(0.125)
    assert product_form_prob([0.2, 0.3], [1, 1]) == pytest.approx(0.06)
    with pytest.raises(InstabilityError):
        product_form_prob([0.6, 0.4], [0, 0])


@given(st.floats(0.01, 0.9))
def test_product_form_sums_to_one(rho):
    total = sum(product_form_prob([rho], [n]) for n in range(2000))
    assert total == pytest.approx(1.0, abs=1e-9)


def test_product_form_two_class_mass():
    rho = [0.2, 0.35]
    total = sum(product_form_prob(rho, [a, b]) for a in range(200) for b in range(200))
    assert total == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=50)
@given(st.sampled_from(["Search", "MapReduce", "Classification"]), st.floats(0, 20), st.floats(0, 5), rates)
def test_comp_delay_monotone_in_m(cls, m, dm, lam):
    assert comp_delay(lam, complexity(cls, m + dm, 1.0)) >= comp_delay(lam, complexity(cls, m, 1.0))


@given(st.floats(0, 0.98), st.floats(1e-4, 0.01))
def test_comm_delay_increasing_in_gamma(g, dg):
    assert comm_delay(1.0, g + dg) > comm_delay(1.0, g)


@given(st.floats(0, 1e3), st.floats(0, 1e3))
def test_pipelined_never_exceeds_additive(a, b):
    assert CostBreakdown(a, b, DelayMode.PIPELINED).w_total <= CostBreakdown(a, b).w_total


def test_node_class_params_validation():
    with pytest.raises(ValueError):
        NodeClassParams(lam=1.0, mu=2.0, gamma=1.5)
    with pytest.raises(InstabilityError):
        NodeClassParams(lam=3.0, mu=2.0, gamma=2.0)
    with pytest.raises(InstabilityError):
        NodeClassParams(lam=1.0, mu=2.0, gamma=0.5, complexity=Complexity.EXPSERVICE, chi=1.0)


def test_node_cost_identity_relay():
    # gamma = lambda: no compute backlog, pure M/M/1 relay
    cost, dec = node_cost(NodeClassParams(lam=1.0, mu=2.0, gamma=1.0, complexity=Complexity.SEARCH))
    assert dec.m == 0.0 and dec.n == pytest.approx(1.0)
    assert cost.w_comp == 0.0 and cost.w_comm == pytest.approx(1.0)


def test_node_cost_split_follows_little():
    p = NodeClassParams(lam=1.0, mu=2.0, gamma=0.5, complexity=Complexity.MAPREDUCE, k=2.0)
    cost, dec = node_cost(p)
    ref = little_decompose(dec.L, p.lam, p.gamma)
    assert (dec.m, dec.n) == pytest.approx((ref.m, ref.n))
    assert cost.w_comp == pytest.approx(2.0 * dec.m / p.lam)
    assert node_cost(p, DelayMode.PIPELINED)[0].w_total == pytest.approx(max(cost.w_comp, cost.w_comm))
