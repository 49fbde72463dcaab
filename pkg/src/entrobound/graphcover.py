"""Pairing edges of a connected graph into adjacent pairs, and the bound it gives.

For ``H = -sum_e |psi-><psi-|_e`` every pair of adjacent edges is a copy
of the three-site instance (scaled by 2), whose weak-monotonicity
relaxation is at least ``2 * PAIR_CONSTANT``. Summing over a pairing and
charging ``-1`` to a leftover edge bounds the whole relaxation.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .hamiltonians import _normalize_edges, is_connected

__all__ = [
    "PAIR_CONSTANT",
    "Graph",
    "EdgePairing",
    "edge_pair_cover",
    "epr_wm_bound",
    "recompute_pair_constant",
    "parse_edge_list",
    "load_graph",
]

PAIR_CONSTANT = -0.811

Edge = tuple[int, int]


@dataclass(frozen=True)
class Graph:
    """Simple undirected graph. Nodes default to the endpoints of the edges."""

    edges: tuple[Edge, ...]
    nodes: tuple[int, ...] = ()

    def __init__(self, edges: Iterable[Sequence[int]], nodes: Iterable[int] | None = None):
        es = tuple(sorted(_normalize_edges(edges)))
        ns = {v for e in es for v in e}
        if nodes is not None:
            extra = ns - {int(v) for v in nodes}
            if extra:
                raise ValueError(f"edges use undeclared nodes {sorted(extra)}")
            ns = {int(v) for v in nodes}
        object.__setattr__(self, "edges", es)
        object.__setattr__(self, "nodes", tuple(sorted(ns)))

    @property
    def n(self) -> int:
        return len(self.nodes)

    def is_connected(self) -> bool:
        return is_connected(self.nodes, self.edges)

    def require_connected(self) -> None:
        if not self.edges:
            raise ValueError("graph has no edges")
        if not self.is_connected():
            raise ValueError("graph is not connected")


@dataclass(frozen=True)
class EdgePairing:
    pairs: tuple[tuple[Edge, Edge], ...]
    unmatched: Edge | None = None
    steps: int = 0

    def check(self, graph: Graph) -> None:
        """Raise ``AssertionError`` unless this is a valid pairing of ``graph``."""
        used = [e for p in self.pairs for e in p]
        if self.unmatched is not None:
            used.append(self.unmatched)
        assert len(used) == len(set(used)), "an edge is used twice"
        assert set(used) == set(graph.edges), "pairing does not cover the edge set exactly"
        for a, b in self.pairs:
            assert set(a) & set(b), f"edges {a} and {b} share no node"
        assert (self.unmatched is not None) == (len(graph.edges) % 2 == 1)


def _line_graph(edges: Sequence[Edge]) -> list[list[int]]:
    at: dict[int, list[int]] = {}
    for k, (i, j) in enumerate(edges):
        at.setdefault(i, []).append(k)
        at.setdefault(j, []).append(k)
    adj = []
    for k, (i, j) in enumerate(edges):
        adj.append(sorted({m for m in at[i] + at[j] if m != k}))
    return adj


def _bfs(adj, src):
    dist = {src: 0}
    parent = {src: None}
    q = deque([src])
    while q:
        u = q.popleft()
        for w in adj[u]:
            if w not in dist:
                dist[w] = dist[u] + 1
                parent[w] = u
                q.append(w)
    return dist, parent


def edge_pair_cover(graph: Graph) -> EdgePairing:
    """Disjoint pairs of adjacent edges covering all edges but at most one.

    Repeatedly take the two closest unmatched edges ``e, e'`` (line-graph
    distance, ties by edge index). Adjacent ones are paired. Otherwise the
    first edge ``f`` on a shortest path from ``e`` is already paired with
    some ``g``; if ``g`` touches ``e`` the pair becomes ``(e, g)`` and ``f``
    is freed, else it becomes ``(e, f)`` and ``g`` is freed. Either way the
    freed edge is strictly closer to ``e'``.
    """
    graph.require_connected()
    edges = list(graph.edges)
    m = len(edges)
    adj = _line_graph(edges)
    partner: dict[int, int] = {}
    unmatched = set(range(m))
    steps = 0
    while len(unmatched) > 1:
        best = None
        for a in sorted(unmatched):
            dist, parent = _bfs(adj, a)
            for b in sorted(unmatched):
                if b > a and (best is None or (dist[b], a, b) < best[0]):
                    best = ((dist[b], a, b), parent)
        (d, a, b), parent = best
        if d == 1:
            partner[a], partner[b] = b, a
            unmatched -= {a, b}
            continue
        # walk back from b to find the edge right after a
        path = [b]
        while parent[path[-1]] is not None:
            path.append(parent[path[-1]])
        path.reverse()
        f = path[1]
        assert f not in unmatched, "an intermediate edge is unmatched"
        g = partner.pop(f)
        del partner[g]
        if set(edges[g]) & set(edges[a]):
            partner[a], partner[g] = g, a
            freed = f
        else:
            partner[a], partner[f] = f, a
            freed = g
        unmatched.discard(a)
        unmatched.add(freed)
        steps += 1
        assert steps <= m * m, "re-pairing did not terminate within |E|^2 steps"
    pairs = tuple(sorted({tuple(sorted((edges[k], edges[v]))) for k, v in partner.items()}))
    left = edges[next(iter(unmatched))] if unmatched else None
    return EdgePairing(pairs, left, steps)


def epr_wm_bound(graph: Graph, constant: float = PAIR_CONSTANT) -> tuple[float, EdgePairing]:
    """``constant * (|E| - odd) - odd`` with ``odd = |E| mod 2``, and the pairing behind it."""
    pairing = edge_pair_cover(graph)
    m = len(graph.edges)
    odd = m % 2
    return constant * (m - odd) - odd, pairing


def recompute_pair_constant(config=None) -> float:
    """Certified weak-monotonicity value of the three-site instance."""
    from .hamiltonians import build_three_site_epr
    from .relaxations import build_loc_for, build_wm
    from .solver import solve

    ham = build_three_site_epr()
    return solve(build_wm(build_loc_for(ham), 2), config).lower_bound_certified


def parse_edge_list(text: str) -> Graph:
    """Edges as JSON (``[[i, j], ...]`` or ``{"edges": ...}``) or one ``i j`` per line."""
    stripped = text.strip()
    if stripped.startswith(("[", "{")):
        data = json.loads(stripped)
        if isinstance(data, dict):
            return Graph(data["edges"], data.get("nodes"))
        return Graph(data)
    edges = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected two node ids, got {line!r}")
        edges.append((int(parts[0]), int(parts[1])))
    return Graph(edges)


def load_graph(path: str | Path) -> Graph:
    return parse_edge_list(Path(path).read_text())
