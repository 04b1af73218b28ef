import numpy as np
import pytest

from compflow.desim import SimConfig, analytic_occupancy, compare_to_analytic, empirical_little_check, run_simulation
from compflow.errors import CompflowError, InstabilityError
from compflow.flownet import NetworkSpec, RoutingPolicy, solve_traffic
from compflow.queueing import product_form_prob
from compflow.scenario import load_preset


def mm1(beta=0.5, mu=1.0):
    return NetworkSpec(beta=beta, mu=mu, gamma_surj=1.0, routing=RoutingPolicy.no_routing(1, 1))


def tandem():
    T = np.zeros((2, 1, 2, 1))
    T[0, 0, 1, 0] = 1.0
    return NetworkSpec(beta=[0.5, 0.0], mu=1.0, gamma_surj=1.0, routing=RoutingPolicy.from_transfer(T))


@pytest.fixture(scope="module")
def mm1_stats():
    return run_simulation(SimConfig(mm1(), departures=300_000, seed=11))


def test_mm1_occupancy(mm1_stats):
    assert mm1_stats.L[0, 0] == pytest.approx(1.0, rel=0.05)
    assert mm1_stats.throughput[0, 0] == pytest.approx(0.5, rel=0.02)
    assert mm1_stats.L_halfwidth[0, 0] > 0


def test_mm1_little(mm1_stats):
    assert all(r["pass"] for r in empirical_little_check(mm1_stats, tol=0.02))


def test_m_plus_n_is_L(mm1_stats):
    assert np.allclose(mm1_stats.m + mm1_stats.n, mm1_stats.L)


def test_truncated_run_fails_tight_little_check():
    # 100 departures: sampling noise alone breaks a 0.1% tolerance
    stats = run_simulation(SimConfig(mm1(), departures=100, seed=0))
    assert not all(r["pass"] for r in empirical_little_check(stats, tol=0.001))


def test_tandem_each_node_mm1():
    stats = run_simulation(SimConfig(tandem(), departures=300_000, seed=5))
    assert stats.L[:, 0] == pytest.approx([1.0, 1.0], rel=0.06)
    flow = solve_traffic(tandem())
    assert compare_to_analytic(stats, flow, tol=0.06)["pass"]


def test_zero_arrivals():
    stats = run_simulation(SimConfig(mm1(beta=0.0), departures=10, seed=0))
    assert not stats.L.any() and not stats.throughput.any() and stats.events == 0
    assert all(r["pass"] for r in empirical_little_check(stats))
    flow = solve_traffic(mm1(beta=0.0))
    assert compare_to_analytic(stats, flow)["pass"]


def test_unstable_rejected():
    with pytest.raises(InstabilityError):
        run_simulation(SimConfig(mm1(beta=1.0), departures=10))
    net = NetworkSpec(beta=0.5, mu=1.0, gamma_surj=0.5, chi=0.4, routing=RoutingPolicy.no_routing(1, 1))
    with pytest.raises(InstabilityError):
        run_simulation(SimConfig(net, departures=10))


def test_class_dependent_mu_rejected():
    net = NetworkSpec(beta=0.1, mu=np.array([[1.0, 2.0]]), gamma_surj=1.0, routing=RoutingPolicy.no_routing(1, 2))
    with pytest.raises(ValueError):
        run_simulation(SimConfig(net, departures=10))


@pytest.mark.parametrize("kw", [dict(departures=None), dict(departures=0), dict(warmup=1.0), dict(slot=0.0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SimConfig(mm1(), **kw)


def test_event_cap():
    with pytest.raises(CompflowError):
        run_simulation(SimConfig(mm1(), departures=1000, max_events=50))


def test_seed_determinism():
    net = load_preset("mixed3").network
    a = run_simulation(SimConfig(net, departures=20_000, seed=9))
    b = run_simulation(SimConfig(net, departures=20_000, seed=9))
    c = run_simulation(SimConfig(net, departures=20_000, seed=10))
    assert a.rows() == b.rows()
    assert np.array_equal(a.slotted, b.slotted)
    assert a.rows() != c.rows()


def test_conservation_and_slots():
    net = load_preset("mixed3").network
    stats = run_simulation(SimConfig(net, departures=50_000, seed=1, slot=2.0))
    # external arrivals per class = exits + absorptions + in flight (class 0 converts into class 1)
    ext = stats.external_total.sum()
    out = stats.exited_total.sum() + stats.absorbed_total.sum() + stats.in_flight.sum()
    assert ext == out
    assert np.array_equal(stats.slotted.sum(axis=2), stats.generated)


def test_duration_horizon():
    stats = run_simulation(SimConfig(mm1(), departures=None, duration=50_000.0, warmup=0.1, seed=2))
    assert stats.window == pytest.approx(45_000.0, rel=1e-3)
    assert stats.L[0, 0] == pytest.approx(1.0, rel=0.1)
    assert stats.L_halfwidth[0, 0] > 0


def test_throughput_at_most_offered_load():
    net = load_preset("mixed3").network
    stats = run_simulation(SimConfig(net, departures=100_000, seed=4))
    lam = solve_traffic(net, "ratio", ratio=stats.ratio).lam
    assert np.all(stats.throughput <= lam * 1.05)


def test_mixed_flow_matches_theory():
    net = load_preset("mixed3").network
    stats = run_simulation(SimConfig(net, departures=400_000, seed=3))
    flow = solve_traffic(net, "ratio", ratio=stats.ratio)
    report = compare_to_analytic(stats, flow, tol=0.05)
    assert report["pass"], report["failed"]


def test_mismatched_mu_fails_with_named_rows(mm1_stats):
    wrong = solve_traffic(mm1(mu=2.0))
    report = compare_to_analytic(mm1_stats, wrong, tol=0.05)
    assert not report["pass"] and report["failed"] == ["v0/c0"]


def test_shape_mismatch_raises(mm1_stats):
    with pytest.raises(ValueError):
        compare_to_analytic(mm1_stats, solve_traffic(tandem()))


def test_product_form_histogram():
    net = NetworkSpec(beta=np.array([[0.2, 0.3]]), mu=1.0, gamma_surj=1.0, routing=RoutingPolicy.no_routing(1, 2))
    stats = run_simulation(SimConfig(net, departures=1_000_000, seed=8, histogram_node=0))
    total = sum(stats.histogram.values())
    assert total == pytest.approx(stats.window)
    tv = 0.0
    for a in range(12):
        for b in range(12):
            p = product_form_prob([0.2, 0.3], [a, b])
            q = stats.histogram.get((a, b), 0.0) / total
            tv += abs(p - q)
            if p > 0.02:
                assert q == pytest.approx(p, rel=0.05)
    assert tv / 2 < 0.01


def test_analytic_occupancy_mm1():
    m, n = analytic_occupancy(mm1(), solve_traffic(mm1()))
    assert n[0, 0] == pytest.approx(1.0) and m[0, 0] == 0.0
