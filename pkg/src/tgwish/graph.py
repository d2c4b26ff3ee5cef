"""Undirected adjacency graphs over areal units.

Vertices are indexed ``0..n-1`` internally; files and user-facing labels use
area names (or ``1..n`` when no names are given).
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class AdjacencyGraph:
    """Simple undirected graph with optional vertex labels.

    Parameters
    ----------
    n : int
        Number of vertices.
    edges : iterable of (int, int)
        Unordered vertex pairs. Stored normalised as ``(min, max)``.
    labels : sequence of str, optional
        Per-vertex area names.
    """

    n: int
    edges: frozenset = field(default_factory=frozenset)
    labels: tuple | None = None

    def __post_init__(self):
        norm = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop at vertex {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge ({i}, {j}) outside 0..{self.n - 1}")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(norm))
        if self.labels is not None:
            labels = tuple(str(s) for s in self.labels)
            if len(labels) != self.n:
                raise ValueError("labels length does not match vertex count")
            object.__setattr__(self, "labels", labels)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def adjacency(self) -> np.ndarray:
        """Symmetric boolean adjacency matrix (zero diagonal)."""
        A = np.zeros((self.n, self.n), dtype=np.bool_)
        for i, j in self.edges:
            A[i, j] = A[j, i] = True
        return A

    def weights(self) -> np.ndarray:
        """Binary weight matrix W as float."""
        return self.adjacency().astype(float)

    def degrees(self) -> np.ndarray:
        return self.adjacency().sum(axis=1).astype(int)

    def neighbors(self, i: int) -> list[int]:
        A = self.adjacency()
        return [int(j) for j in np.flatnonzero(A[i])]

    def components(self) -> list[list[int]]:
        A = self.adjacency()
        seen = np.zeros(self.n, dtype=bool)
        comps = []
        for s in range(self.n):
            if seen[s]:
                continue
            comp, queue = [], deque([s])
            seen[s] = True
            while queue:
                v = queue.popleft()
                comp.append(v)
                for w in np.flatnonzero(A[v]):
                    if not seen[w]:
                        seen[w] = True
                        queue.append(int(w))
            comps.append(sorted(comp))
        return comps

    def is_connected(self) -> bool:
        return self.n <= 1 or len(self.components()) == 1

    def permute(self, ordering: "VertexOrdering") -> "AdjacencyGraph":
        """Relabel so that new vertex ``k`` is old vertex ``ordering.perm[k]``."""
        inv = ordering.inverse
        edges = {(int(inv[i]), int(inv[j])) for i, j in self.edges}
        labels = None
        if self.labels is not None:
            labels = tuple(self.labels[p] for p in ordering.perm)
        return AdjacencyGraph(self.n, frozenset(edges), labels)

    def subgraph(self, vertices) -> "AdjacencyGraph":
        """Induced subgraph on ``vertices`` (kept in the given order)."""
        vertices = [int(v) for v in vertices]
        pos = {v: k for k, v in enumerate(vertices)}
        edges = {(pos[i], pos[j]) for i, j in self.edges if i in pos and j in pos}
        labels = None
        if self.labels is not None:
            labels = tuple(self.labels[v] for v in vertices)
        return AdjacencyGraph(len(vertices), frozenset(edges), labels)

    def digest(self) -> str:
        """Stable hash of (n, edge set); labels are ignored."""
        payload = json.dumps([self.n, self.sorted_edges()]).encode()
        return hashlib.sha256(payload).hexdigest()[:16]

    def label_of(self, i: int) -> str:
        return self.labels[i] if self.labels is not None else str(i + 1)


@dataclass(frozen=True)
class VertexOrdering:
    """A permutation of ``0..n-1``; ``perm[k]`` is the old index placed at ``k``."""

    perm: np.ndarray

    def __post_init__(self):
        perm = np.asarray(self.perm, dtype=int)
        if not np.array_equal(np.sort(perm), np.arange(perm.size)):
            raise ValueError("ordering is not a permutation")
        object.__setattr__(self, "perm", perm)

    @property
    def inverse(self) -> np.ndarray:
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.perm.size)
        return inv

    @classmethod
    def identity(cls, n: int) -> "VertexOrdering":
        return cls(np.arange(n))


def neighbor_counts(g: AdjacencyGraph) -> np.ndarray:
    """Number of neighbours of each vertex (the binary-weight row sums)."""
    return g.degrees()


def nu_counts(g: AdjacencyGraph) -> np.ndarray:
    """Per vertex, the number of neighbours with a larger index."""
    nu = np.zeros(g.n, dtype=int)
    for i, _ in g.edges:
        nu[i] += 1
    return nu


def edge_density(g: AdjacencyGraph) -> float:
    if g.n < 2:
        raise ValueError("edge density needs at least two vertices")
    return g.n_edges / (g.n * (g.n - 1) / 2)


def bandwidth(g: AdjacencyGraph, ordering: VertexOrdering | None = None) -> int:
    """Maximum ``|pos(i) - pos(j)|`` over edges under ``ordering``."""
    if not g.edges:
        return 0
    pos = np.arange(g.n) if ordering is None else ordering.inverse
    return int(max(abs(pos[i] - pos[j]) for i, j in g.edges))


def rcm_order(g: AdjacencyGraph) -> VertexOrdering:
    """Reverse Cuthill-McKee ordering.

    Each component is started from its minimum-degree vertex (lowest index on
    ties); unvisited neighbours are queued by ascending degree, then index.
    If the result would widen the bandwidth, the identity is returned.
    """
    A = g.adjacency()
    deg = A.sum(axis=1)
    visited = np.zeros(g.n, dtype=bool)
    order: list[int] = []
    while len(order) < g.n:
        rest = np.flatnonzero(~visited)
        start = int(rest[np.argmin(deg[rest])])
        visited[start] = True
        queue = deque([start])
        while queue:
            v = queue.popleft()
            order.append(v)
            nbrs = [int(w) for w in np.flatnonzero(A[v]) if not visited[w]]
            nbrs.sort(key=lambda w: (deg[w], w))
            for w in nbrs:
                visited[w] = True
                queue.append(w)
    ordering = VertexOrdering(np.array(order[::-1]))
    if bandwidth(g, ordering) > bandwidth(g):
        return VertexOrdering.identity(g.n)
    return ordering


# -- file formats -------------------------------------------------------------


def _from_named_edges(names, pairs) -> AdjacencyGraph:
    names = sorted(set(names), key=str) if names is None else list(names)
    index = {name: k for k, name in enumerate(names)}
    edges = set()
    for a, b in pairs:
        if a not in index or b not in index:
            raise ValueError(f"edge ({a}, {b}) references an unknown area")
        edges.add((index[a], index[b]))
    return AdjacencyGraph(len(names), frozenset(edges), tuple(names))


def read_edgelist(path) -> AdjacencyGraph:
    """Plain-text adjacency list: one edge per line, two labels.

    Labels are separated by a tab, comma or whitespace; ``#`` starts a comment.
    A line holding a single label declares an isolated vertex. Vertices are
    indexed in sorted label order.
    """
    names, pairs = set(), []
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "\t" in line:
            parts = [p.strip() for p in line.split("\t") if p.strip()]
        elif "," in line:
            parts = [p.strip() for p in line.split(",") if p.strip()]
        else:
            parts = line.split()
        if len(parts) == 1:
            names.add(parts[0])
        elif len(parts) == 2:
            names.update(parts)
            pairs.append((parts[0], parts[1]))
        else:
            raise ValueError(f"{path}:{lineno}: expected one or two labels")
    ordered = sorted(names, key=_natural_key)
    return _from_named_edges(ordered, pairs)


def _natural_key(s: str):
    return (0, int(s), "") if s.isdigit() else (1, 0, s)


def read_graph_json(path) -> AdjacencyGraph:
    """JSON document ``{"nodes": [...], "edges": [[a, b], ...]}``.

    Nodes are strings or objects with an ``"id"`` key; node order is kept.
    """
    doc = json.loads(Path(path).read_text())
    return _graph_from_doc(doc)


def _graph_from_doc(doc) -> AdjacencyGraph:
    nodes = [nd["id"] if isinstance(nd, dict) else nd for nd in doc["nodes"]]
    nodes = [str(v) for v in nodes]
    pairs = [(str(a), str(b)) for a, b in doc["edges"]]
    return _from_named_edges(nodes, pairs)


def read_graph(path) -> AdjacencyGraph:
    """Dispatch on extension: ``.json`` or plain-text edge list."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"graph file not found: {path}")
    if path.suffix.lower() == ".json":
        return read_graph_json(path)
    return read_edgelist(path)


def write_graph_json(g: AdjacencyGraph, path) -> None:
    nodes = [g.label_of(i) for i in range(g.n)]
    edges = [[nodes[i], nodes[j]] for i, j in g.sorted_edges()]
    Path(path).write_text(json.dumps({"nodes": nodes, "edges": edges}, indent=1))


def _wa_doc():
    text = resources.files("tgwish.data").joinpath("wa_counties.json").read_text()
    return json.loads(text)


def washington_counties() -> AdjacencyGraph:
    """Bundled 39-county Washington State adjacency graph (93 edges)."""
    return _graph_from_doc(_wa_doc())


def washington_centroids() -> np.ndarray:
    """Approximate county centroids as ``(lat, lon)`` rows, fixture order."""
    doc = _wa_doc()
    return np.array([[nd["lat"], nd["lon"]] for nd in doc["nodes"]])


def washington_population() -> np.ndarray:
    doc = _wa_doc()
    return np.array([nd["population_2010"] for nd in doc["nodes"]], dtype=float)


def random_graph(n: int, density: float, rng: np.random.Generator) -> AdjacencyGraph:
    """Uniform graph with ``round(density * n(n-1)/2)`` edges."""
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    m = int(round(density * len(pairs)))
    chosen = rng.choice(len(pairs), size=m, replace=False)
    return AdjacencyGraph(n, frozenset(pairs[k] for k in chosen))
