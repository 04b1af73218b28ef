import numpy as np
import pytest

from compflow.flownet import NetworkSpec, RoutingPolicy


def random_network(rng, max_nodes=10, max_classes=4, min_depart=0.1, mu=None):
    """A valid open network with upper-triangular class conversion."""
    V = int(rng.integers(1, max_nodes + 1))
    C = int(rng.integers(1, max_classes + 1))
    transfer = np.zeros((V, C, V, C))
    depart = np.zeros((V, C))
    for v in range(V):
        for c in range(C):
            w = rng.random((V, C - c)) * (rng.random((V, C - c)) < 0.5)
            d = min_depart + rng.random()
            total = w.sum() + d
            transfer[v, c, :, c:] = w / total
            depart[v, c] = d / total
    beta = rng.random((V, C)) * (rng.random((V, C)) < 0.7)
    gamma = rng.random(C)
    return NetworkSpec(
        beta=beta,
        mu=mu if mu is not None else 1.0 + 10 * rng.random((V, C)),
        gamma_surj=gamma,
        routing=RoutingPolicy(transfer, depart),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
