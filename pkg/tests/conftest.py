import numpy as np
import pytest

from gossipsa.gossip import NetworkGraph

# criterion id -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.split()[0].rstrip("ab")), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_connected_graph(rng, n, extra=0.3):
    """Random spanning tree plus each remaining pair with probability ``extra``."""
    order = rng.permutation(n)
    edges = {tuple(sorted((int(order[k]), int(order[rng.integers(0, k)])))) for k in range(1, n)}
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < extra:
                edges.add((i, j))
    return NetworkGraph(n, tuple(edges))


def random_disconnected_graph(rng, n):
    """Two random connected blocks with no edge between them."""
    split = int(rng.integers(1, n))
    a = random_connected_graph(rng, split) if split > 1 else NetworkGraph(1, ())
    b = random_connected_graph(rng, n - split) if n - split > 1 else NetworkGraph(1, ())
    edges = list(a.edges) + [(i + split, j + split) for i, j in b.edges]
    if not edges:
        raise ValueError("need n >= 3 for an edge in a disconnected graph")
    return NetworkGraph(n, tuple(edges))
