import numpy as np
import pytest

from d2drelay.relaygraph import RelayEdge, RelayGraph


def make_graph(edges, s, r, t_max, cost=None):
    """Relay graph from ``{(i, j): (w, t)}``; incentive cost defaults to ``w``."""
    es = {}
    for (i, j), (w, t) in edges.items():
        c = w if cost is None else cost.get((i, j), w)
        es[(i, j)] = RelayEdge(c, c, w - c if cost is not None else 0.0, w, t, 0, 1.0, 1.0, 1.0)
    nodes = tuple(sorted({x for e in edges for x in e} | {s, r}, key=str))
    return RelayGraph(nodes, es, s, r, 0.0, 1.0, t_max)


def random_geometric(seed, n_lo=4, n_hi=12):
    """Random geometric digraph, weights in (0, 1], delays in (0, 10], t_max in [0, 40)."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(n_lo, n_hi + 1))
    xy = rng.uniform(0, 1, (n, 2))
    rad = float(rng.uniform(0.35, 0.7))
    edges = {}
    for i in range(n):
        for j in range(n):
            if i != j and np.hypot(*(xy[i] - xy[j])) <= rad:
                edges[(i, j)] = (float(1 - rng.uniform(0, 1)), float(10 * (1 - rng.uniform(0, 1))))
    t_max = float(rng.uniform(0, 40))
    return make_graph(edges, 0, n - 1, t_max)


TWO_ROUTE = {("s", "a"): (1.0, 5.0), ("a", "r"): (1.0, 5.0), ("s", "b"): (3.0, 2.0), ("b", "r"): (3.0, 2.0)}


@pytest.fixture
def two_route():
    return lambda t_max: make_graph(TWO_ROUTE, "s", "r", t_max)


ACCEPTANCE: dict[int, str] = {}


def report_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
