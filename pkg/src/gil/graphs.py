"""Geometric graphs over 3D point sets: KNN / fully-connected / r-ball
construction, node-removal semantics with policy-aware edge rebuilding, and
the structural rewiring baselines (+FA full connection, PPR diffusion).

Graphs are immutable after construction and safe to share across workers.
Edges are directed pairs of node ids; KNN stores i -> each of its k nearest
neighbors, FC and r-ball store both directions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

DIGL_DENSE_LIMIT = 512  # dense PPR solve only; datasets here are <= 32 nodes


@dataclass(frozen=True)
class Construction:
    """Tag recording which mechanism produced a graph's edge set."""

    kind: str  # "knn" | "fc" | "rball" | "explicit"
    k: int | None = None
    r: float | None = None

    @classmethod
    def knn(cls, k):
        return cls("knn", k=int(k))

    @classmethod
    def fc(cls):
        return cls("fc")

    @classmethod
    def rball(cls, r):
        return cls("rball", r=float(r))

    @classmethod
    def explicit(cls):
        return cls("explicit")


@dataclass(frozen=True)
class GeometricGraph:
    node_ids: tuple
    coords: np.ndarray  # (n, 3)
    features: np.ndarray  # (n, F); F may be 0
    edges: frozenset  # directed (i, j) pairs over node ids
    construction: Construction = field(default_factory=Construction.explicit)

    def __post_init__(self):
        self.coords.setflags(write=False)
        self.features.setflags(write=False)

    @property
    def n(self):
        return len(self.node_ids)

    def index_of(self):
        """Map node id -> positional row in coords/features."""
        return {v: i for i, v in enumerate(self.node_ids)}


@dataclass(frozen=True)
class Subgraph:
    """Kept-node view of a parent graph with edges rebuilt per its policy."""

    parent: GeometricGraph
    kept_nodes: tuple
    edges: frozenset

    @property
    def n(self):
        return len(self.kept_nodes)

    @property
    def node_ids(self):
        return self.kept_nodes

    @property
    def construction(self):
        return self.parent.construction

    @property
    def coords(self):
        rows = [self.parent.index_of()[v] for v in self.kept_nodes]
        return self.parent.coords[rows]

    @property
    def features(self):
        rows = [self.parent.index_of()[v] for v in self.kept_nodes]
        return self.parent.features[rows]


def _validate_coords(coords):
    coords = np.array(coords, dtype=np.float64)  # copy; graphs own their arrays
    if coords.size == 0:
        raise ValueError("empty graph")
    coords = np.atleast_2d(coords)
    if coords.shape[1] != 3:
        raise ValueError("coordinates must be 3-vectors")
    return coords


def _empty_features(n):
    return np.zeros((n, 0))


def _pairwise_sq_dists(coords):
    diff = coords[:, None, :] - coords[None, :, :]
    return (diff * diff).sum(axis=-1)


def _knn_edges(coords, node_ids, k):
    """Deterministic KNN edge set: equidistant candidates prefer lower id."""
    n = len(node_ids)
    d2 = _pairwise_sq_dists(coords)
    edges = set()
    take = min(k, n - 1)
    for i in range(n):
        cand = [j for j in range(n) if j != i]
        cand.sort(key=lambda j: (d2[i, j], node_ids[j]))
        for j in cand[:take]:
            edges.add((node_ids[i], node_ids[j]))
    return frozenset(edges)


def build_knn(coords, k, features=None):
    """Connect each point to its min(k, n-1) nearest neighbors (directed)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    coords = _validate_coords(coords)
    n = len(coords)
    ids = tuple(range(n))
    feats = _empty_features(n) if features is None else np.array(features, dtype=np.float64)
    return GeometricGraph(ids, coords, feats, _knn_edges(coords, ids, k), Construction.knn(k))


def build_fc(coords, features=None):
    """Complete digraph: every ordered pair of distinct nodes is an edge."""
    coords = _validate_coords(coords)
    n = len(coords)
    ids = tuple(range(n))
    edges = frozenset((i, j) for i in ids for j in ids if i != j)
    feats = _empty_features(n) if features is None else np.array(features, dtype=np.float64)
    return GeometricGraph(ids, coords, feats, edges, Construction.fc())


def build_rball(coords, r, features=None):
    """Edge iff euclidean distance <= r. May be disconnected; such graphs are
    constructible here but rejected by the interaction estimators (removal
    does not preserve connectivity)."""
    if r <= 0:
        raise ValueError("radius must be positive")
    coords = _validate_coords(coords)
    n = len(coords)
    ids = tuple(range(n))
    d2 = _pairwise_sq_dists(coords)
    edges = frozenset(
        (i, j) for i in ids for j in ids if i != j and d2[i, j] <= r * r
    )
    feats = _empty_features(n) if features is None else np.array(features, dtype=np.float64)
    return GeometricGraph(ids, coords, feats, edges, Construction.rball(r))


def explicit_graph(coords, edges, features=None):
    """Graph with a caller-supplied edge set (no construction policy)."""
    coords = _validate_coords(coords)
    n = len(coords)
    ids = tuple(range(n))
    edges = frozenset((int(a), int(b)) for a, b in edges)
    for a, b in edges:
        if a == b:
            raise ValueError("self-loops are not allowed")
        if a not in ids or b not in ids:
            raise ValueError(f"edge ({a},{b}) references a missing node")
    feats = _empty_features(n) if features is None else np.array(features, dtype=np.float64)
    return GeometricGraph(ids, coords, feats, edges, Construction.explicit())


def _rebuild_edges(parent, kept):
    """Re-establish connectivity over the kept nodes per the parent policy."""
    con = parent.construction
    if con.kind == "fc":
        return frozenset((a, b) for a in kept for b in kept if a != b)
    idx = parent.index_of()
    coords = parent.coords[[idx[v] for v in kept]]
    if con.kind == "knn":
        return _knn_edges(coords, kept, con.k)
    if con.kind == "rball":
        # distances are unchanged by removal, so rebuild == restriction
        d2 = _pairwise_sq_dists(coords)
        return frozenset(
            (kept[a], kept[b])
            for a in range(len(kept))
            for b in range(len(kept))
            if a != b and d2[a, b] <= con.r * con.r
        )
    kept_set = set(kept)
    return frozenset((a, b) for a, b in parent.edges if a in kept_set and b in kept_set)


def remove_nodes(g, drop):
    """Drop nodes and their edges, rebuilding connectivity per the parent's
    construction policy (KNN re-runs on survivors, FC is recompleted).

    Node features of kept nodes pass through untouched; nothing is imputed.
    Accepts a Subgraph too, in which case removal composes against the same
    parent.
    """
    if isinstance(g, Subgraph):
        parent, universe = g.parent, g.kept_nodes
    else:
        parent, universe = g, g.node_ids
    drop = {int(v) for v in drop}
    unknown = drop - set(universe)
    if unknown:
        raise ValueError(f"cannot drop absent nodes {sorted(unknown)}")
    kept = tuple(v for v in universe if v not in drop)
    if not kept:
        raise ValueError("empty subgraph")
    return Subgraph(parent, kept, _rebuild_edges(parent, kept))


def rewire_fa(g):
    """Fully-connected version of g, for use in the final message-passing
    layer only (earlier layers keep the original edges)."""
    ids = g.node_ids
    edges = frozenset((a, b) for a in ids for b in ids if a != b)
    if isinstance(g, Subgraph):
        return Subgraph(g.parent, g.kept_nodes, edges)
    return GeometricGraph(ids, g.coords, g.features, edges, Construction.fc())


def _is_connected(adj):
    n = len(adj)
    seen = {0}
    frontier = [0]
    while frontier:
        i = frontier.pop()
        for j in np.nonzero(adj[i])[0]:
            if j not in seen:
                seen.add(int(j))
                frontier.append(int(j))
    return len(seen) == n


def rewire_digl(g, alpha, top_k=None, eps=None):
    """Rewire via personalized-PageRank diffusion over the symmetric-normalized
    adjacency with self-loops, S = alpha (I - (1-alpha) T)^-1, row-normalized,
    then sparsified by keeping the top_k entries per row or entries >= eps.

    Exactly one of top_k / eps must be given. Dense solve only; node counts
    above DIGL_DENSE_LIMIT are refused.
    """
    if (top_k is None) == (eps is None):
        raise ValueError("supply exactly one of top_k / eps")
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    if top_k is not None and top_k < 1:
        raise ValueError("top_k must be >= 1")
    if eps is not None and eps <= 0:
        raise ValueError("eps must be positive")
    n = g.n
    if n > DIGL_DENSE_LIMIT:
        raise ValueError(f"dense diffusion limited to {DIGL_DENSE_LIMIT} nodes")

    idx = g.index_of()
    A = np.zeros((n, n))
    for a, b in g.edges:
        A[idx[a], idx[b]] = 1.0
        A[idx[b], idx[a]] = 1.0  # diffusion runs on the symmetrized graph
    if n > 1 and not _is_connected(np.maximum(A, np.eye(n))):
        warnings.warn("diffusing a disconnected graph", stacklevel=2)

    A_tilde = A + np.eye(n)
    d_inv_sqrt = 1.0 / np.sqrt(A_tilde.sum(axis=1))
    T = A_tilde * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]
    try:
        S = alpha * np.linalg.solve(np.eye(n) - (1 - alpha) * T, np.eye(n))
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("diffusion failed") from exc
    if not np.all(np.isfinite(S)):
        raise RuntimeError("diffusion failed")
    S = S / S.sum(axis=1, keepdims=True)  # rows sum to 1 before sparsifying

    keep = np.zeros_like(S, dtype=bool)
    if top_k is not None:
        kk = min(top_k, n)
        for i in range(n):
            order = np.argsort(-S[i])[:kk]
            keep[i, order] = True
        keep &= S > 0
    else:
        keep = S >= eps

    ids = g.node_ids
    edges = frozenset(
        (ids[i], ids[j]) for i in range(n) for j in range(n) if i != j and keep[i, j]
    )
    return GeometricGraph(ids, np.array(g.coords), np.array(g.features), edges,
                          Construction.explicit())


def graph_arrays(g):
    """(coords, features, edge_index) with edges as positional row indices.

    Uniform accessor over GeometricGraph and Subgraph for the models: row r of
    coords/features is node node_ids[r], and edge_index[:, 0] -> edge_index[:, 1]
    lists directed edges in sorted order for determinism.
    """
    ids = g.node_ids
    pos = {v: i for i, v in enumerate(ids)}
    coords, feats = g.coords, g.features
    edges = sorted(g.edges)
    if edges:
        edge_index = np.array([[pos[a], pos[b]] for a, b in edges], dtype=np.int64)
    else:
        edge_index = np.zeros((0, 2), dtype=np.int64)
    return np.array(coords), np.array(feats), edge_index
