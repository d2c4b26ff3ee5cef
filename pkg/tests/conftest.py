import numpy as np
import pytest

from tgwish.experiments import washington_subgraph
from tgwish.graph import AdjacencyGraph, washington_counties


@pytest.fixture(scope="session")
def wa():
    return washington_counties()


@pytest.fixture(scope="session")
def se10():
    return washington_subgraph()[0]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def path_graph(n):
    return AdjacencyGraph(n, frozenset((i, i + 1) for i in range(n - 1)))


def complete_graph(n):
    return AdjacencyGraph(n, frozenset((i, j) for i in range(n) for j in range(i + 1, n)))


def cycle_graph(n):
    return AdjacencyGraph(n, frozenset({(i, (i + 1) % n) for i in range(n)}))


# acceptance bookkeeping: criterion -> list of (passed, detail)
ACCEPTANCE: dict[int, list[tuple[bool, str]]] = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE.setdefault(criterion, []).append((bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[k]
        status = "PASS" if all(p for p, _ in parts) else "FAIL"
        terminalreporter.write_line(f"criterion {k}: {status} | " + "; ".join(d for _, d in parts))
