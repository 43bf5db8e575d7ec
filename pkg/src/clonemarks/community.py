"""Training-period social graph and k-clique percolation communities."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Hashable, Iterable

import numpy as np

from .identity import EntityId, EntityKind
from .trace import ContactTrace


class CliqueBudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class SocialGraph:
    vertices: tuple
    edges: dict  # (u, v) with u < v -> number of distinct meeting days

    def neighbours(self) -> dict:
        adj = {v: set() for v in self.vertices}
        for u, v in self.edges:
            adj[u].add(v)
            adj[v].add(u)
        return adj

    def write_edgelist(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["u", "v", "days"])
            for (u, v), d in sorted(self.edges.items()):
                w.writerow([str(u), str(v), d])


@dataclass(frozen=True)
class Community:
    id: str
    members: frozenset

    def sorted_members(self) -> list:
        return sorted(self.members)


def pair_meeting_days(trace: ContactTrace, kinds=(EntityKind.MOBILE_NODE,)):
    """Distinct (a, b, day) triples for contacts between entities of ``kinds``.

    Returns three int64 arrays sorted by (a, b, day).
    """
    if not len(trace):
        z = np.zeros(0, dtype=np.int64)
        return z, z, z
    ok = trace.kind_mask(set(kinds))
    m = ok[trace.a] & ok[trace.b]
    a, b = trace.a[m], trace.b[m]
    day = trace.day_of(trace.start[m])
    n = len(trace.entities)
    n_days = max(trace.n_days, 1)
    key = np.unique((a * n + b) * n_days + day)
    pair, day = np.divmod(key, n_days)
    a, b = np.divmod(pair, n)
    return a, b, day


def build_social_graph(training: ContactTrace, min_days: int = 3,
                       kinds=(EntityKind.MOBILE_NODE,)) -> SocialGraph:
    """Edge (i, j) iff i and j met on at least ``min_days`` distinct days."""
    if min_days < 1:
        raise ValueError("min_days must be >= 1")
    a, b, _ = pair_meeting_days(training, kinds)
    ents = training.entities
    edges = {}
    if len(a):
        n = len(ents)
        pairs, counts = np.unique(a * n + b, return_counts=True)
        for p, c in zip(pairs.tolist(), counts.tolist()):
            if c >= min_days:
                u, v = divmod(p, n)
                edges[(ents[u], ents[v])] = c
    vertices = tuple(e for e in ents if e.kind in kinds)
    return SocialGraph(vertices, edges)


def maximal_cliques(adj: dict, budget: int | None = None) -> list[frozenset]:
    """Bron–Kerbosch with pivoting over a symmetric adjacency dict."""
    out: list[frozenset] = []
    order = {v: i for i, v in enumerate(sorted(adj))}

    def expand(r: list, p: set, x: set) -> None:
        if not p and not x:
            out.append(frozenset(r))
            if budget is not None and len(out) > budget:
                raise CliqueBudgetExceeded(
                    f"more than {budget} maximal cliques; raise the budget or min_days")
            return
        pivot = max(p | x, key=lambda u: (len(adj[u] & p), -order[u]))
        for v in sorted(p - adj[pivot], key=order.__getitem__):
            expand(r + [v], p & adj[v], x & adj[v])
            p = p - {v}
            x = x | {v}

    expand([], set(adj), set())
    return out


def _percolate(cliques: list[frozenset], k: int) -> list[frozenset]:
    parent = list(range(len(cliques)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    by_vertex: dict = {}
    for ci, c in enumerate(cliques):
        for v in c:
            by_vertex.setdefault(v, []).append(ci)
    for ci, c in enumerate(cliques):
        seen = set()
        for v in c:
            for cj in by_vertex[v]:
                if cj <= ci or cj in seen:
                    continue
                seen.add(cj)
                if len(c & cliques[cj]) >= k - 1:
                    ri, rj = find(ci), find(cj)
                    if ri != rj:
                        parent[rj] = ri
    groups: dict[int, set] = {}
    for ci, c in enumerate(cliques):
        groups.setdefault(find(ci), set()).update(c)
    return [frozenset(g) for g in groups.values()]


def k_clique_communities(graph: SocialGraph | dict, k: int = 3,
                         budget: int | None = 1_000_000) -> list[Community]:
    """Clique percolation: unions of k-cliques chained through k-1 shared vertices.

    Works on maximal cliques of size >= k; two of them belong to the same
    community iff they share at least k-1 vertices (transitively).  Output is
    sorted by member list and ids are assigned in that order.
    """
    if k < 3:
        raise ValueError("k must be >= 3")
    adj = graph.neighbours() if isinstance(graph, SocialGraph) else {
        v: set(ns) for v, ns in graph.items()}
    cliques = [c for c in maximal_cliques(adj, budget) if len(c) >= k]
    members = sorted((sorted(g) for g in _percolate(cliques, k)))
    width = max(4, len(str(len(members))))
    return [Community(f"c{i:0{width}d}", frozenset(m)) for i, m in enumerate(members)]


def community_of(node: Hashable, communities: Iterable[Community]) -> set:
    """Union of all communities containing ``node``, minus the node itself."""
    out: set = set()
    for c in communities:
        if node in c.members:
            out |= c.members
    out.discard(node)
    return out


def community_map(communities: Iterable[Community]) -> dict:
    """community_of for every member at once."""
    out: dict = {}
    for c in communities:
        for v in c.members:
            out.setdefault(v, set()).update(c.members)
    for v, s in out.items():
        s.discard(v)
    return out


def write_communities(communities: Iterable[Community], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["community_id", "member_id"])
        for c in communities:
            for m in c.sorted_members():
                w.writerow([c.id, str(m)])


def read_communities(path, kind: EntityKind = EntityKind.MOBILE_NODE) -> list[Community]:
    groups: dict[str, set] = {}
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header != ["community_id", "member_id"]:
            raise ValueError(f"{path}: expected header community_id,member_id")
        for lineno, row in enumerate(rows, start=2):
            if len(row) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 fields")
            groups.setdefault(row[0], set()).add(EntityId(row[1], kind))
    return [Community(cid, frozenset(m)) for cid, m in sorted(groups.items())]
