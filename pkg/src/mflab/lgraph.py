"""Symbolic engine for round/straight-edge interaction diagrams.

A diagram is a multi-hypergraph on labeled vertices: a round edge is a loop
on a vertex subset, a straight edge joins two disjoint subsets.  Diagrams are
built by iteratively adding edges between whole connected components; the
multiplicity gamma of an unlabeled diagram is 2^(#straight edges) times the
number of (labeling, admissible insertion order) pairs.  Golden coefficients
for the small cases are pinned in the test suite.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

__all__ = [
    "LGraph",
    "GraphClass",
    "validate",
    "is_connected",
    "is_irreducible",
    "canonical_form",
    "enumerate_graphs",
    "enumerate_connected",
    "gamma_decomposition_check",
    "MAX_SIZE",
]

MAX_SIZE = 8  # guard on k + m

End = tuple[int, ...]
Edge = tuple[End, ...]  # 1 end: round edge (loop), 2 ends: straight edge


def _norm_edge(ends) -> Edge:
    ends = tuple(tuple(sorted(e)) for e in ends)
    if len(ends) == 2 and ends[0] == ends[1]:
        ends = (ends[0],)  # loop written with equal ends
    return tuple(sorted(ends))


@dataclass(frozen=True)
class LGraph:
    """Vertices 1..k plus a multiset of round/straight edges."""

    k: int
    edges: tuple[Edge, ...]

    def __post_init__(self):
        object.__setattr__(self, "edges",
                           tuple(sorted(_norm_edge(e) for e in self.edges)))

    @property
    def m(self) -> int:
        return len(self.edges)

    def straight_edges(self) -> list[Edge]:
        return [e for e in self.edges if len(e) == 2]

    def round_edges(self) -> list[Edge]:
        return [e for e in self.edges if len(e) == 1]

    def vertices(self) -> range:
        return range(1, self.k + 1)


@dataclass(frozen=True)
class GraphClass:
    """Classification record attached to an enumerated diagram."""

    connected: bool
    irreducible: bool
    SE: int
    RE: int
    gamma: int


def validate(g: LGraph) -> str | None:
    """Check the three defining properties; None if valid, else a report."""
    verts = set(g.vertices())
    for e in g.edges:
        for end in e:
            if not end or not set(end) <= verts:
                return f"edge {e}: end {end} is not a nonempty vertex subset"
        if len(e) == 2 and set(e[0]) & set(e[1]):
            return f"edge {e}: straight ends are not disjoint"

    ends_of_straight = [end for e in g.straight_edges() for end in e]
    seen = set()
    for end in ends_of_straight:
        if end in seen:
            return f"subset {end} is the end of more than one straight edge"
        seen.add(end)

    for e in g.edges:
        for big in e:
            big_set = set(big)
            for f in g.edges:
                for i, small in enumerate(f):
                    if set(small) < big_set:
                        other = f[1 - i] if len(f) == 2 else small
                        if not set(other) < big_set:
                            return (f"nesting violated: {f} crosses out of "
                                    f"subset {big} of edge {e}")
    return None


def _require_valid(g: LGraph):
    report = validate(g)
    if report is not None:
        raise ValueError(f"invalid graph: {report}")


def _components(k: int, edges) -> list[tuple[int, ...]]:
    """Connected components: each edge ties together the union of its ends."""
    parent = list(range(k + 1))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb

    for e in edges:
        touched = [v for end in e for v in end]
        for v in touched[1:]:
            union(touched[0], v)
    groups: dict[int, list[int]] = {}
    for v in range(1, k + 1):
        groups.setdefault(find(v), []).append(v)
    return sorted(tuple(sorted(vs)) for vs in groups.values())


def is_connected(g: LGraph) -> bool:
    _require_valid(g)
    return len(_components(g.k, g.edges)) == 1


def _induced_connected(vertex_set: tuple[int, ...], edges) -> bool:
    vs = set(vertex_set)
    sub = [e for e in edges if all(set(end) <= vs for end in e)]
    comps = _components(len(vertex_set), _relabel_edges(sub, {v: i + 1 for i, v in
                                                             enumerate(vertex_set)}))
    return len(comps) == 1


def _relabel_edges(edges, mapping) -> list[Edge]:
    return [_norm_edge(tuple(tuple(mapping[v] for v in end) for end in e))
            for e in edges]


def is_irreducible(g: LGraph) -> bool:
    """Straight ends induce connected subgraphs; round interiors connected."""
    _require_valid(g)
    for e in g.straight_edges():
        for end in e:
            if not _induced_connected(end, g.edges):
                return False
    for e in g.round_edges():
        interior = set(e[0])
        strict = [f for f in g.edges
                  if all(set(end) < interior for end in f)]
        mapping = {v: i + 1 for i, v in enumerate(e[0])}
        if len(_components(len(e[0]), _relabel_edges(strict, mapping))) != 1:
            return False
    return True


def canonical_form(g: LGraph) -> LGraph:
    """Isomorphism-invariant representative: minimum over vertex relabelings.

    Exhaustive minimization is exact and cheap at the k + m <= 8 sizes this
    engine is built for.
    """
    _require_valid(g)
    best = None
    verts = list(g.vertices())
    for perm in itertools.permutations(verts):
        mapping = dict(zip(verts, perm))
        relabeled = tuple(sorted(_relabel_edges(g.edges, mapping)))
        if best is None or relabeled < best:
            best = relabeled
    return LGraph(g.k, best)


@lru_cache(maxsize=None)
def _insertion_counts(k: int, m: int) -> dict[tuple[Edge, ...], int]:
    """Labeled diagrams with m edges and their admissible-order counts.

    Forward dynamic programming over edge insertions: a round edge may wrap
    one whole component, a straight edge may join two whole components.
    """
    level: dict[tuple[Edge, ...], int] = {(): 1}
    for _ in range(m):
        nxt: dict[tuple[Edge, ...], int] = {}
        for edges, count in level.items():
            comps = _components(k, edges)
            moves = [(c,) for c in comps]
            moves += [_norm_edge((a, b)) for a, b in itertools.combinations(comps, 2)]
            for new_edge in moves:
                key = tuple(sorted(edges + (new_edge,)))
                nxt[key] = nxt.get(key, 0) + count
        level = nxt
    return level


def enumerate_graphs(k: int, m: int) -> list[tuple[LGraph, int]]:
    """All constructible diagrams with k vertices and m edges, with gamma.

    gamma = 2^(#straight edges) * N, where N counts (labeling, admissible
    insertion order) pairs.  Returned graphs are canonical forms, sorted.
    """
    if k < 1 or m < 0:
        raise ValueError("need k >= 1 and m >= 0")
    if k + m > MAX_SIZE:
        raise ValueError(f"k + m = {k + m} exceeds bound {MAX_SIZE}")
    gamma_map: dict[LGraph, int] = {}
    for edges, count in _insertion_counts(k, m).items():
        g = canonical_form(LGraph(k, edges))
        gamma_map[g] = gamma_map.get(g, 0) + count
    out = []
    for g, n_ways in sorted(gamma_map.items(), key=lambda kv: kv[0].edges):
        out.append((g, 2 ** len(g.straight_edges()) * n_ways))
    return out


def enumerate_connected(k: int, m: int) -> list[tuple[LGraph, int]]:
    return [(g, gamma) for g, gamma in enumerate_graphs(k, m) if is_connected(g)]


def classify(g: LGraph, gamma: int) -> GraphClass:
    return GraphClass(connected=is_connected(g), irreducible=is_irreducible(g),
                      SE=len(g.straight_edges()), RE=len(g.round_edges()),
                      gamma=gamma)


@lru_cache(maxsize=None)
def _gamma_lookup(k: int, m: int) -> dict[LGraph, int]:
    return {g: gamma for g, gamma in enumerate_graphs(k, m)}


def _gamma_of(g: LGraph) -> int:
    if g.k == 0:
        return 1
    table = _gamma_lookup(g.k, g.m)
    cg = canonical_form(g)
    if cg not in table:
        raise ValueError("graph is not constructible (gamma undefined)")
    return table[cg]


def _standalone(component: tuple[int, ...], edges) -> LGraph:
    vs = set(component)
    sub = [e for e in edges if all(set(end) <= vs for end in e)]
    mapping = {v: i + 1 for i, v in enumerate(component)}
    return LGraph(len(component), tuple(_relabel_edges(sub, mapping)))


def gamma_decomposition_check(g: LGraph) -> bool:
    """Check gamma(Psi) against its split over connected-component classes.

    gamma(Psi) = sum over isomorphism classes theta of components of
    C(k-1, V(theta)-1) C(m, E(theta)) gamma(theta) gamma(Psi minus theta).
    """
    _require_valid(g)
    if not is_irreducible(g):
        raise ValueError("decomposition check expects an irreducible graph")
    gamma = _gamma_of(g)
    comps = _components(g.k, g.edges)
    if len(comps) == 1:
        return gamma == gamma * 1  # empty remainder has gamma 1

    by_class: dict[LGraph, tuple[int, ...]] = {}
    for comp in comps:
        theta = canonical_form(_standalone(comp, g.edges))
        by_class.setdefault(theta, comp)

    total = 0
    for theta, comp in by_class.items():
        rest_vertices = [v for v in g.vertices() if v not in comp]
        mapping = {v: i + 1 for i, v in enumerate(rest_vertices)}
        rest_edges = [e for e in g.edges
                      if all(set(end) <= set(rest_vertices) for end in e)]
        rest = LGraph(len(rest_vertices), tuple(_relabel_edges(rest_edges, mapping)))
        total += (math.comb(g.k - 1, theta.k - 1) * math.comb(g.m, theta.m)
                  * _gamma_of(theta) * _gamma_of(rest))
    return total == gamma
