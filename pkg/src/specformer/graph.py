"""Graphs, normalized Laplacians, dataset ingestion and synthetic filtering tasks."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .linalg import EigenSystem, spectral_apply, symmetric_eig

__all__ = [
    "DatasetError",
    "SparseGraph",
    "FilterSpec",
    "FILTERS",
    "SyntheticTask",
    "normalized_laplacian",
    "grid_graph",
    "make_filter",
    "table_filter",
    "make_synthetic_task",
    "load_node_dataset",
    "random_split",
    "stochastic_block_model",
]

log = logging.getLogger(__name__)


class DatasetError(ValueError):
    """Malformed or missing dataset file; the message names the file (and line)."""


@dataclass(frozen=True)
class SparseGraph:
    n: int
    edges: np.ndarray  # (E, 2) int64, each row i < j, sorted, unique
    features: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if edges.size:
            if np.any(edges[:, 0] >= edges[:, 1]):
                raise ValueError("edges must satisfy i < j (no self-loops, canonical order)")
            if edges.min() < 0 or edges.max() >= self.n:
                raise ValueError(f"edge endpoint out of range for n={self.n}")
            if len(np.unique(edges, axis=0)) != len(edges):
                raise ValueError("duplicate edges")
        object.__setattr__(self, "edges", edges)
        if self.features is not None and self.features.shape[0] != self.n:
            raise ValueError(f"features have {self.features.shape[0]} rows for {self.n} nodes")
        if self.labels is not None and self.labels.shape[0] != self.n:
            raise ValueError(f"{self.labels.shape[0]} labels for {self.n} nodes")

    @classmethod
    def from_edges(cls, n: int, pairs, features=None, labels=None) -> "SparseGraph":
        """Canonicalize arbitrary (i, j) pairs: drop self-loops, merge duplicates."""
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        lo = np.minimum(pairs[:, 0], pairs[:, 1])
        hi = np.maximum(pairs[:, 0], pairs[:, 1])
        keep = lo != hi
        canon = np.unique(np.stack([lo[keep], hi[keep]], axis=1), axis=0)
        return cls(n, canon.reshape(-1, 2), features, labels)

    @property
    def num_classes(self) -> int:
        return 0 if self.labels is None else int(self.labels.max()) + 1

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        a[self.edges[:, 0], self.edges[:, 1]] = 1.0
        a[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return a

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n).astype(np.float64)

    def permuted(self, perm: Sequence[int]) -> "SparseGraph":
        """Relabel node ``v`` as ``perm[v]``."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.argsort(perm)
        feats = None if self.features is None else self.features[inv]
        labels = None if self.labels is None else self.labels[inv]
        return SparseGraph.from_edges(self.n, perm[self.edges], feats, labels)


def normalized_laplacian(g: SparseGraph) -> np.ndarray:
    """``I - D^{-1/2} A D^{-1/2}``; isolated nodes get a zero D^{-1/2} entry."""
    deg = g.degrees()
    inv_sqrt = np.zeros(g.n)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    lap = np.eye(g.n)
    i, j = g.edges[:, 0], g.edges[:, 1]
    w = inv_sqrt[i] * inv_sqrt[j]
    lap[i, j] = -w
    lap[j, i] = -w
    return lap


def grid_graph(height: int, width: int) -> SparseGraph:
    """4-neighbour grid; node ``r * width + c`` sits at row r, column c."""
    if height < 1 or width < 1:
        raise ValueError(f"grid dimensions must be positive, got {height}x{width}")
    ids = np.arange(height * width).reshape(height, width)
    horizontal = np.stack([ids[:, :-1].ravel(), ids[:, 1:].ravel()], axis=1)
    vertical = np.stack([ids[:-1, :].ravel(), ids[1:, :].ravel()], axis=1)
    edges = np.concatenate([horizontal, vertical])
    return SparseGraph.from_edges(height * width, edges)


# ---------------------------------------------------------------------------
# filters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FilterSpec:
    kind: str
    evaluator: Callable[[np.ndarray], np.ndarray] = field(repr=False)

    def __call__(self, lam) -> np.ndarray:
        return np.asarray(self.evaluator(np.asarray(lam, dtype=np.float64)), dtype=np.float64)


FILTERS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "lowpass": lambda lam: np.exp(-10.0 * lam**2),
    "highpass": lambda lam: 1.0 - np.exp(-10.0 * lam**2),
    "bandpass": lambda lam: np.exp(-10.0 * (lam - 1.0) ** 2),
    "bandreject": lambda lam: 1.0 - np.exp(-10.0 * (lam - 1.0) ** 2),
    "comb": lambda lam: np.abs(np.sin(np.pi * lam)),
}


def make_filter(name: str) -> FilterSpec:
    try:
        return FilterSpec(name, FILTERS[name])
    except KeyError:
        raise ValueError(f"unknown filter {name!r}; choose from {sorted(FILTERS)}") from None


def table_filter(lambdas, values, kind: str = "custom-table") -> FilterSpec:
    """Piecewise-linear filter through the points ``(lambdas[k], values[k])``."""
    xs = np.asarray(lambdas, dtype=np.float64)
    ys = np.asarray(values, dtype=np.float64)
    order = np.argsort(xs)
    xs, ys = xs[order], ys[order]
    return FilterSpec(kind, lambda lam: np.interp(lam, xs, ys))


# ---------------------------------------------------------------------------
# synthetic regression task
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticTask:
    graph: SparseGraph
    signals: list[tuple[np.ndarray, np.ndarray]]  # (x, filtered x), each n x 1
    filter: FilterSpec
    eigensystem: EigenSystem

    @property
    def inputs(self) -> list[np.ndarray]:
        return [x for x, _ in self.signals]

    @property
    def targets(self) -> list[np.ndarray]:
        return [y for _, y in self.signals]


def make_synthetic_task(
    height: int,
    width: int,
    num_images: int,
    filter: FilterSpec,
    seed: int,
    eigensystem: Optional[EigenSystem] = None,
) -> SyntheticTask:
    """Grid graph with ``num_images`` uniform [0, 1] signals and their filtered versions."""
    graph = grid_graph(height, width)
    eig = eigensystem if eigensystem is not None else symmetric_eig(normalized_laplacian(graph))
    response = filter(eig.eigenvalues)
    rng = np.random.default_rng(seed)
    x = rng.random((graph.n, num_images))
    y = spectral_apply(eig, response, x)
    signals = [(x[:, [k]].copy(), y[:, [k]].copy()) for k in range(num_images)]
    return SyntheticTask(graph, signals, filter, eig)


# ---------------------------------------------------------------------------
# on-disk node classification datasets
# ---------------------------------------------------------------------------


def _content_lines(path: Path):
    if not path.is_file():
        raise DatasetError(f"missing dataset file: {path}")
    with path.open() as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if line and not line.startswith("#"):
                yield lineno, line


def load_node_dataset(directory) -> SparseGraph:
    """Read ``edges.txt``, ``features.csv`` and ``labels.txt`` from ``directory``."""
    root = Path(directory)
    edges_path = root / "edges.txt"
    feats_path = root / "features.csv"
    labels_path = root / "labels.txt"
    for p in (edges_path, feats_path, labels_path):
        if not p.is_file():
            raise DatasetError(f"missing dataset file: {p}")

    rows = []
    for lineno, line in _content_lines(feats_path):
        try:
            rows.append([float(tok) for tok in line.split(",")])
        except ValueError:
            raise DatasetError(f"{feats_path}:{lineno}: non-numeric feature value") from None
        if len(rows[-1]) != len(rows[0]):
            raise DatasetError(
                f"{feats_path}:{lineno}: ragged row ({len(rows[-1])} values, expected {len(rows[0])})"
            )
    if not rows:
        raise DatasetError(f"{feats_path}: no feature rows")
    features = np.array(rows, dtype=np.float64)
    n = features.shape[0]

    labels = []
    for lineno, line in _content_lines(labels_path):
        try:
            labels.append(int(line))
        except ValueError:
            raise DatasetError(f"{labels_path}:{lineno}: non-integer label {line!r}") from None
    if len(labels) != n:
        raise DatasetError(f"{labels_path}: {len(labels)} labels for {n} feature rows")
    labels_arr = np.array(labels, dtype=np.int64)
    if labels_arr.min() < 0:
        raise DatasetError(f"{labels_path}: negative class id")

    pairs = []
    for lineno, line in _content_lines(edges_path):
        toks = line.split()
        if len(toks) != 2:
            raise DatasetError(f"{edges_path}:{lineno}: expected two node ids, got {len(toks)} fields")
        try:
            i, j = int(toks[0]), int(toks[1])
        except ValueError:
            raise DatasetError(f"{edges_path}:{lineno}: non-integer node id") from None
        if not (0 <= i < n and 0 <= j < n):
            raise DatasetError(f"{edges_path}:{lineno}: node index out of range for n={n}")
        pairs.append((i, j))
    pairs_arr = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    loops = int(np.sum(pairs_arr[:, 0] == pairs_arr[:, 1]))
    if loops:
        log.info("dropped %d self-loop(s) from %s", loops, edges_path)
    return SparseGraph.from_edges(n, pairs_arr, features, labels_arr)


def random_split(n: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded 60/20/20 split; sizes floor(0.6n), floor(0.2n) and the remainder."""
    if n < 5:
        raise ValueError(f"need at least 5 nodes to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = math.floor(0.6 * n)
    n_val = math.floor(0.2 * n)
    return (
        np.sort(perm[:n_train]),
        np.sort(perm[n_train : n_train + n_val]),
        np.sort(perm[n_train + n_val :]),
    )


def stochastic_block_model(
    sizes: Sequence[int],
    p_in: float,
    p_out: float,
    seed: int,
    flip: float = 0.3,
    noise_dim: int = 16,
) -> SparseGraph:
    """Planted-partition graph with weakly informative node features.

    Each node gets a one-hot community indicator that points at a uniformly
    random community with probability ``flip``, concatenated with a one-hot
    noise code over ``noise_dim`` channels. Features alone therefore recover
    roughly ``1 - flip`` of the labels; the edges carry the rest.
    """
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(len(sizes)), sizes)
    n = labels.shape[0]
    k = len(sizes)
    same = labels[:, None] == labels[None, :]
    upper = np.triu(rng.random((n, n)) < np.where(same, p_in, p_out), k=1)
    pairs = np.argwhere(upper)
    shown = np.where(rng.random(n) < flip, rng.integers(0, k, n), labels)
    features = np.zeros((n, k + noise_dim))
    features[np.arange(n), shown] = 1.0
    features[np.arange(n), k + rng.integers(0, noise_dim, n)] = 1.0
    return SparseGraph.from_edges(n, pairs, features, labels)
