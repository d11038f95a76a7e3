"""Combinatorial machinery: bilateration orderings, triangulation tests,
maximal cliques, chordality, sparsity patterns and clique selectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from angleloc.core import Framework, Graph, cross2

CROSS_TOL = 1e-10
ACUTE_EPS = 1e-9
SPARSITY_TOL = 1e-14


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class BilaterationOrdering:
    """Vertex growth witness: a 3-clique seed, then vertices with >= 2 back-edges."""

    seed: tuple[int, int, int]
    additions: tuple[tuple[int, tuple[int, ...]], ...]

    def order(self) -> list[int]:
        return list(self.seed) + [v for v, _ in self.additions]


@dataclass(frozen=True)
class CliqueSet:
    cliques: tuple[tuple[int, ...], ...]


@dataclass(frozen=True)
class SparsityPattern:
    """Aggregate nonzero structure of a family of symmetric matrices."""

    graph: Graph
    aggregate: np.ndarray


# ---------------------------------------------------------------------------
# bilateration orderings


def _triangles(g: Graph) -> list[tuple[int, int, int]]:
    out = []
    for (i, j) in g.edge_list():
        for k in g.neighbors(i):
            if k > j and g.has_edge(j, k):
                out.append((i, j, k))
    return sorted(out)


def _grow_from_seed(g: Graph, seed, adjacent_pair_required: bool = False):
    """Greedy closure from a placed seed; returns additions or None.

    Absorption is monotone: the set of placeable vertices only grows as
    vertices are placed, so failure from a given seed is conclusive.
    """
    placed = set(seed)
    additions = []
    while len(placed) < g.n:
        progress = False
        for v in g.vertices():
            if v in placed:
                continue
            back = [u for u in g.neighbors(v) if u in placed]
            if len(back) < 2:
                continue
            if adjacent_pair_required and not any(
                g.has_edge(a, b) for x, a in enumerate(back) for b in back[x + 1:]
            ):
                continue
            placed.add(v)
            additions.append((v, tuple(back)))
            progress = True
            break  # restart scan at the lowest id
        if not progress:
            return None
    return tuple(additions)


def find_bilateration_ordering(g: Graph, required_seed=None,
                               triangulated: bool = False) -> BilaterationOrdering | None:
    """Search for a bilateration ordering by greedy closure over 3-clique seeds.

    Seeds are tried in lexicographic order (or only ``required_seed``).
    With ``triangulated`` every absorbed vertex must have two placed
    neighbors that are themselves adjacent.
    """
    if g.n < 3:
        return None
    if required_seed is not None:
        seed = tuple(sorted(required_seed))
        if len(seed) != 3:
            raise ValueError("seed must have 3 vertices")
        if not all(g.has_edge(a, b) for a in seed for b in seed if a < b):
            return None
        seeds = [seed]
    else:
        seeds = _triangles(g)
    for seed in seeds:
        additions = _grow_from_seed(g, seed, adjacent_pair_required=triangulated)
        if additions is not None:
            return BilaterationOrdering(seed, additions)
    return None


def verify_nondegenerate_ordering(fw: Framework, ordering: BilaterationOrdering) -> bool:
    """Check the geometric non-degeneracy conditions of an ordering."""
    g = fw.graph
    seed = ordering.seed
    if len(set(seed)) != 3 or not all(g.has_edge(a, b) for a in seed for b in seed if a < b):
        return False
    a, b, c = (fw.pos(v) for v in seed)
    if abs(cross2(b - a, c - a)) <= CROSS_TOL:
        return False
    placed = set(seed)
    for v, back in ordering.additions:
        if v in placed or len(back) < 2 or not set(back) <= placed:
            return False
        if not all(g.has_edge(v, u) for u in back):
            return False
        dirs = [fw.pos(u) - fw.pos(v) for u in back]
        if not any(
            abs(cross2(dirs[x], dirs[y])) > CROSS_TOL
            for x in range(len(dirs))
            for y in range(x + 1, len(dirs))
        ):
            return False
        placed.add(v)
    return placed == set(g.vertices())


def find_nondegenerate_ordering(fw: Framework, triangulated: bool = False) -> BilaterationOrdering | None:
    """Search seeds until an ordering passes the geometric non-degeneracy
    check; a combinatorial ordering whose seed happens to be collinear must
    not mask a valid ordering from another seed."""
    for seed in _triangles(fw.graph):
        additions = _grow_from_seed(fw.graph, seed, adjacent_pair_required=triangulated)
        if additions is None:
            continue
        ordering = BilaterationOrdering(seed, additions)
        if verify_nondegenerate_ordering(fw, ordering):
            return ordering
    return None


def is_acute_triangulated(fw: Framework) -> bool:
    """True when fw grows by triangulated bilateration and every 3-clique is acute."""
    if find_nondegenerate_ordering(fw, triangulated=True) is None:
        return False
    for (i, j, k) in _triangles(fw.graph):
        for (a, b, c) in ((i, j, k), (j, i, k), (k, i, j)):
            g_ab = fw.pos(b) - fw.pos(a)
            g_ac = fw.pos(c) - fw.pos(a)
            cos = float(g_ab @ g_ac / (np.linalg.norm(g_ab) * np.linalg.norm(g_ac)))
            if not (ACUTE_EPS < cos < 1.0 - ACUTE_EPS):
                return False
    return True


# ---------------------------------------------------------------------------
# cliques and chordality


def maximal_cliques(g: Graph) -> CliqueSet:
    """Exact maximal clique enumeration (Bron-Kerbosch with pivoting)."""
    adj = {v: set(g.neighbors(v)) for v in g.vertices()}
    out: list[tuple[int, ...]] = []

    def expand(r: set, p: set, x: set):
        if not p and not x:
            out.append(tuple(sorted(r)))
            return
        pivot = max(p | x, key=lambda u: len(p & adj[u]))
        for v in sorted(p - adj[pivot]):
            expand(r | {v}, p & adj[v], x & adj[v])
            p = p - {v}
            x = x | {v}

    expand(set(), set(g.vertices()), set())
    return CliqueSet(tuple(sorted(out)))


def is_chordal(g: Graph) -> tuple[bool, list[int] | None]:
    """Lexicographic BFS plus elimination check; returns (flag, PEO or None)."""
    adj = {v: set(g.neighbors(v)) for v in g.vertices()}
    # lex-BFS produces the reverse of a candidate perfect elimination ordering
    labels: dict[int, list[int]] = {v: [] for v in g.vertices()}
    unvisited = set(g.vertices())
    order: list[int] = []
    while unvisited:
        v = max(unvisited, key=lambda u: (labels[u], -u))
        order.append(v)
        unvisited.discard(v)
        for w in adj[v]:
            if w in unvisited:
                # earlier visit times carry higher lexicographic priority
                labels[w].append(-len(order))
    peo = list(reversed(order))
    position = {v: idx for idx, v in enumerate(peo)}
    for v in peo:
        later = [w for w in adj[v] if position[w] > position[v]]
        if not later:
            continue
        u = min(later, key=lambda w: position[w])
        rest = set(later) - {u}
        if not rest <= adj[u]:
            return False, None
    return True, peo


def chordal_extension(g: Graph) -> Graph:
    """Chordal supergraph via greedy minimum-degree elimination fill-in.

    Returns ``g`` itself when already chordal.  Positive-semidefinite
    completability over any chordal supergraph of a pattern still certifies
    the pattern's entries, so clique decomposition stays valid.
    """
    chordal, _ = is_chordal(g)
    if chordal:
        return g
    adj = {v: set(g.neighbors(v)) for v in g.vertices()}
    fill: set[tuple[int, int]] = set()
    remaining = set(g.vertices())
    while remaining:
        v = min(remaining, key=lambda u: (len(adj[u] & remaining), u))
        nbrs = sorted(adj[v] & remaining)
        for x in range(len(nbrs)):
            for y in range(x + 1, len(nbrs)):
                a, b = nbrs[x], nbrs[y]
                if b not in adj[a]:
                    adj[a].add(b)
                    adj[b].add(a)
                    fill.add((a, b))
        remaining.discard(v)
    return Graph(g.n, frozenset(set(g.edges) | fill))


# ---------------------------------------------------------------------------
# sparsity patterns and clique selectors


def sparsity_pattern(matrices, extend_first_rows: bool = False) -> SparsityPattern:
    """Aggregate |.|-sum pattern of symmetric matrices, optionally with the
    first two rows tied to every later column (the anchor-row extension)."""
    mats = [np.asarray(M, dtype=float) for M in matrices]
    if not mats:
        raise DimensionMismatch("no matrices given")
    dim = mats[0].shape[0]
    for M in mats:
        if M.shape != (dim, dim):
            raise DimensionMismatch(f"matrix shape {M.shape} != ({dim}, {dim})")
    agg = np.zeros((dim, dim))
    for M in mats:
        agg += np.abs(M)
    if extend_first_rows:
        agg[0, 2:] += 1.0
        agg[2:, 0] += 1.0
        agg[1, 2:] += 1.0
        agg[2:, 1] += 1.0
    edges = {
        (i + 1, j + 1)
        for i in range(dim)
        for j in range(i + 1, dim)
        if agg[i, j] > SPARSITY_TOL
    }
    return SparsityPattern(Graph(dim, frozenset(edges)), agg)


def clique_selector(clique, n: int) -> np.ndarray:
    """0/1 matrix Q with Q[i, C(i)] = 1; Q @ eta extracts the clique subvector."""
    clique = sorted(clique)
    if any(not (1 <= v <= n) for v in clique):
        raise ValueError("clique vertex outside 1..n")
    Q = np.zeros((len(clique), n))
    for row, v in enumerate(clique):
        Q[row, v - 1] = 1.0
    return Q
