import numpy as np
import pytest

from specformer.graph import SparseGraph, normalized_laplacian


def random_graph(rng, n, p=0.3, connected=False):
    upper = np.triu(rng.random((n, n)) < p, k=1)
    pairs = np.argwhere(upper)
    if connected:
        perm = rng.permutation(n)
        pairs = np.concatenate([pairs, np.stack([perm[:-1], perm[1:]], axis=1)])
    return SparseGraph.from_edges(n, pairs.reshape(-1, 2))


def random_laplacian(rng, n, p=0.3):
    return normalized_laplacian(random_graph(rng, n, p))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record():
    """Log one pass/fail line per acceptance criterion."""

    def _record(criterion: int, passed: bool, detail: str) -> None:
        line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
