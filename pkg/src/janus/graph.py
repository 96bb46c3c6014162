"""Undirected attributed graphs, propagation operators and node views."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import kernels

log = logging.getLogger(__name__)

DENSE_RW_LIMIT = 2000


class GraphFormatError(ValueError):
    """Malformed graph input file or inconsistent graph data."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable undirected graph.

    ``edges`` holds each undirected edge once as a row ``(u, v)`` with
    ``u < v``, sorted lexicographically. Self-loops are never stored.
    """

    n: int
    edges: np.ndarray
    X: np.ndarray
    labels: np.ndarray | None = None
    _adj: sp.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= self.n):
            raise GraphFormatError(f"edge endpoint outside [0, {self.n})")
        edges = edges[edges[:, 0] != edges[:, 1]]
        edges = np.sort(edges, axis=1)
        edges = np.unique(edges, axis=0) if edges.size else edges
        X = np.array(self.X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != self.n:
            raise GraphFormatError(f"feature matrix must be {self.n} x d, got {X.shape}")
        labels = self.labels
        if labels is not None:
            labels = np.array(labels, dtype=np.int64).ravel()
            if labels.shape != (self.n,) or not np.isin(labels, (0, 1)).all():
                raise GraphFormatError("labels must be an n-vector over {0, 1}")
            if not (labels == 0).any():
                raise GraphFormatError("labels must contain at least one normal (0) node")
        u, v = edges[:, 0], edges[:, 1]
        adj = sp.csr_matrix(
            (np.ones(2 * len(edges)), (np.concatenate([u, v]), np.concatenate([v, u]))),
            shape=(self.n, self.n),
        )
        adj.sort_indices()
        object.__setattr__(self, "edges", _frozen(edges))
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "labels", None if labels is None else _frozen(labels))
        object.__setattr__(self, "_adj", adj)

    @property
    def adjacency(self) -> sp.csr_matrix:
        return self._adj.copy()

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self._adj.indptr)

    def neighbors(self, u: int) -> np.ndarray:
        return self._adj.indices[self._adj.indptr[u]:self._adj.indptr[u + 1]]

    def subgraph(self, nodes: Sequence[int]) -> "Graph":
        """Induced subgraph; node ``nodes[k]`` becomes ``k``."""
        nodes = np.asarray(nodes, dtype=np.int64)
        sub = self._adj[nodes][:, nodes].tocoo()
        keep = sub.row < sub.col
        labels = None if self.labels is None else self.labels[nodes]
        if labels is not None and not (labels == 0).any():
            labels = None
        return Graph(len(nodes), np.stack([sub.row[keep], sub.col[keep]], axis=1),
                     self.X[nodes], labels)


@dataclass(frozen=True, eq=False)
class NodeViews:
    """The two per-node views: original features and structural features."""

    Xs: np.ndarray
    Xg: np.ndarray
    d_rw: int
    max_deg: int

    def __post_init__(self):
        _frozen(np.asarray(self.Xs))
        _frozen(np.asarray(self.Xg))


@dataclass(frozen=True, eq=False)
class NeighborBatch:
    seed_nodes: np.ndarray
    nodes: np.ndarray
    sampled_adjacency: sp.csr_matrix
    layer_fanouts: tuple[int, ...]
    sampled: tuple[dict[int, np.ndarray], ...]
    subgraph: Graph


def _self_loop_adjacency(g: Graph) -> sp.csr_matrix:
    a = (g._adj + sp.identity(g.n, format="csr")).tocsr()
    a.sort_indices()
    return a


def normalized_adjacency(g: Graph) -> sp.csr_matrix:
    """``D^-1/2 (A + I) D^-1/2`` as a sparse symmetric matrix."""
    a = _self_loop_adjacency(g)
    dinv = 1.0 / np.sqrt(np.asarray(a.sum(axis=1)).ravel())
    out = sp.diags(dinv) @ a @ sp.diags(dinv)
    out = out.tocsr()
    out.sort_indices()
    return out


def gin_operator(g: Graph, eps: float = 0.0) -> sp.csr_matrix:
    """Sum aggregation ``A + (1 + eps) I`` used by the GIN backbone."""
    out = (g._adj + (1.0 + eps) * sp.identity(g.n, format="csr")).tocsr()
    out.sort_indices()
    return out


def transition_matrix(g: Graph) -> sp.csr_matrix:
    """Column-stochastic ``T = (A + I) D^-1`` with D the degree matrix of ``A + I``."""
    a = _self_loop_adjacency(g)
    deg = np.asarray(a.sum(axis=0)).ravel()
    out = (a @ sp.diags(1.0 / deg)).tocsr()
    out.sort_indices()
    return out


def rw_features(g: Graph, d_rw: int) -> np.ndarray:
    """Return probabilities ``[T_ii, (T^2)_ii, ..., (T^d_rw)_ii]`` per node."""
    if d_rw < 1:
        raise ValueError("d_rw must be >= 1")
    t = transition_matrix(g)
    if g.n <= DENSE_RW_LIMIT:
        dense = t.toarray()
        power = np.eye(g.n)
        out = np.empty((g.n, d_rw))
        for k in range(d_rw):
            power = dense @ power
            out[:, k] = np.diagonal(power)
    else:
        out = kernels.rw_diagonal(t.indptr.astype(np.int64), t.indices.astype(np.int64),
                                  t.data, d_rw)
    return np.clip(out, 0.0, 1.0)


def default_max_deg(g: Graph) -> int:
    """95th-percentile degree, at least 1."""
    if g.n == 0:
        return 1
    return max(1, int(np.ceil(np.percentile(g.degrees, 95))))


def degree_onehot(g: Graph, max_deg: int) -> np.ndarray:
    if max_deg < 1:
        raise ValueError("max_deg must be >= 1")
    out = np.zeros((g.n, max_deg + 1))
    out[np.arange(g.n), np.minimum(g.degrees, max_deg)] = 1.0
    return out


def build_views(g: Graph, d_rw: int, max_deg: int | None = None) -> NodeViews:
    if g.X.shape[1] == 0:
        raise ValueError("graph has zero-dimensional features")
    if max_deg is None:
        max_deg = default_max_deg(g)
    xg = np.hstack([rw_features(g, d_rw), degree_onehot(g, max_deg)])
    return NodeViews(g.X, xg, d_rw, max_deg)


def sample_neighborhood(g: Graph, seeds, fanouts, rng_seed: int) -> NeighborBatch:
    """Uniform layer-wise neighbor sampling without replacement.

    Each frontier node draws ``min(fanout, deg)`` distinct neighbors; the next
    frontier is the set of newly reached nodes. The returned operator is the
    normalized adjacency of the subgraph induced on seeds plus sampled nodes,
    with seeds occupying the first rows in their given order.
    """
    seeds = np.asarray(seeds, dtype=np.int64).ravel()
    fanouts = tuple(int(f) for f in fanouts)
    if seeds.size == 0 or not fanouts:
        raise ValueError("seeds and fanouts must be nonempty")
    if any(f < 1 for f in fanouts):
        raise ValueError("fanouts must be positive")
    if seeds.min() < 0 or seeds.max() >= g.n:
        raise ValueError(f"unknown node id in seeds (graph has {g.n} nodes)")
    rng = np.random.default_rng(rng_seed)
    order = list(dict.fromkeys(seeds.tolist()))
    seen = set(order)
    frontier = list(order)
    sampled = []
    for fanout in fanouts:
        layer = {}
        nxt = []
        for u in frontier:
            nbrs = g.neighbors(u)
            take = min(fanout, len(nbrs))
            pick = np.sort(rng.choice(nbrs, size=take, replace=False)) if take else nbrs[:0]
            layer[u] = pick
            for v in pick.tolist():
                if v not in seen:
                    seen.add(v)
                    order.append(v)
                    nxt.append(v)
        sampled.append(layer)
        frontier = nxt
    nodes = np.array(order, dtype=np.int64)
    sub = g.subgraph(nodes)
    return NeighborBatch(seeds, nodes, normalized_adjacency(sub), fanouts, tuple(sampled), sub)


# ---------------------------------------------------------------- file formats

def read_edge_list(path) -> np.ndarray:
    """Whitespace-separated 0-based id pairs, ``#`` comments allowed."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise GraphFormatError(f"{path}:{lineno}: expected two node ids, got {line!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: node ids must be integers: {line!r}") from None
            if u < 0 or v < 0:
                raise GraphFormatError(f"{path}:{lineno}: negative node id")
            rows.append((u, v))
    return np.array(rows, dtype=np.int64).reshape(-1, 2)


def read_features(path) -> np.ndarray:
    try:
        x = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise GraphFormatError(f"{path}: {exc}") from None
    if x.size == 0:
        raise GraphFormatError(f"{path}: no feature rows")
    return x


def read_labels(path) -> np.ndarray:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if s not in ("0", "1"):
                raise GraphFormatError(f"{path}:{lineno}: label must be 0 or 1, got {s!r}")
            out.append(int(s))
    return np.array(out, dtype=np.int64)


def load_graph(edge_file, feature_file, label_file=None) -> Graph:
    X = read_features(feature_file)
    n = X.shape[0]
    edges = read_edge_list(edge_file)
    if edges.size and edges.max() >= n:
        raise GraphFormatError(
            f"{edge_file}: node id {int(edges.max())} has no feature row (features have {n} rows)")
    labels = None
    if label_file is not None:
        labels = read_labels(label_file)
        if len(labels) != n:
            raise GraphFormatError(f"{label_file}: {len(labels)} labels for {n} nodes")
    loops = int((edges[:, 0] == edges[:, 1]).sum()) if edges.size else 0
    if loops:
        log.warning("dropping %d self-loops from %s", loops, edge_file)
    return Graph(n, edges, X, labels)


def write_edge_list(g: Graph, path) -> None:
    with open(path, "w") as fh:
        for u, v in g.edges.tolist():
            fh.write(f"{u} {v}\n")


def write_labels(labels, path) -> None:
    Path(path).write_text("".join(f"{int(y)}\n" for y in labels))
