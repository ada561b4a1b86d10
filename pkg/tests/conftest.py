import numpy as np
import pytest

from sltgnn.data import SyntheticSpec, generate_synthetic
from sltgnn.graph import Graph


@pytest.fixture(scope="session")
def sbm():
    """The 60-node, 2-community fixture every training test uses."""
    return generate_synthetic(SyntheticSpec(num_nodes=60, num_communities=2, p_in=0.5, p_out=0.02))


def random_graph(rng, n=6, f=4, c=3, p=0.4):
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    features = rng.standard_normal((n, f)).astype(np.float32)
    labels = np.arange(n) % c
    idx = rng.permutation(n)
    a, b = max(1, n // 3), max(2, 2 * n // 3)
    splits = (np.sort(idx[:a]), np.sort(idx[a:b]), np.sort(idx[b:]))
    return Graph.from_edges(edges, features, labels, splits, num_classes=c)


@pytest.fixture
def tiny_graph():
    return random_graph(np.random.default_rng(7))


# criterion id -> (status, detail), filled by test_acceptance.py
ACCEPTANCE: dict[str, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
        status, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{status:4s} {key:>3s}  {detail}")
