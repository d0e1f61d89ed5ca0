"""Join queries as hypergraphs, plus the planning math done on them.

Everything here is exact: edge-cover LPs are solved over rationals by
enumerating basic feasible solutions, budgets are integer ceilings of
rational powers, and decomposition widths are rational maxima.  The
attribute order given at construction is canonical and drives every
deterministic tie-break downstream.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from fractions import Fraction

from .errors import BudgetOverflowError, GhdInvalidError, InvalidArgumentError, SizeLimitError

MAX_ATTRS = 16
MAX_EDGES = 16
GHD_SEARCH_MAX_ATTRS = 8
BUDGET_CAP = 2**63 - 1


@dataclass(frozen=True)
class JoinQuery:
    """A natural join query: attributes (vertices) and relations (hyperedges).

    ``attributes`` is the canonical order; each edge is ``(edge_id, attrs)``
    with ``attrs`` stored in canonical order.
    """

    attributes: tuple[str, ...]
    edges: tuple[tuple[str, tuple[str, ...]], ...]

    def __post_init__(self):
        if not self.attributes:
            raise InvalidArgumentError("query needs at least one attribute")
        if len(self.attributes) > MAX_ATTRS or len(self.edges) > MAX_EDGES:
            raise InvalidArgumentError(
                f"query size cap is {MAX_ATTRS} attributes / {MAX_EDGES} edges"
            )
        if len(set(self.attributes)) != len(self.attributes):
            raise InvalidArgumentError("duplicate attribute names")
        ids = [eid for eid, _ in self.edges]
        if len(set(ids)) != len(ids):
            raise InvalidArgumentError("duplicate edge ids")
        order = {a: i for i, a in enumerate(self.attributes)}
        covered = set()
        canon_edges = []
        for eid, attrs in self.edges:
            if not attrs:
                raise InvalidArgumentError(f"edge {eid!r} is empty")
            if len(set(attrs)) != len(attrs):
                raise InvalidArgumentError(f"edge {eid!r} repeats an attribute")
            for a in attrs:
                if a not in order:
                    raise InvalidArgumentError(f"edge {eid!r} uses unknown attribute {a!r}")
            covered.update(attrs)
            canon_edges.append((eid, tuple(sorted(attrs, key=order.__getitem__))))
        missing = [a for a in self.attributes if a not in covered]
        if missing:
            raise InvalidArgumentError(f"attributes {missing} appear in no edge")
        object.__setattr__(self, "edges", tuple(canon_edges))

    @property
    def edge_ids(self) -> tuple[str, ...]:
        return tuple(eid for eid, _ in self.edges)

    def edge_attrs(self, eid: str) -> tuple[str, ...]:
        for e, attrs in self.edges:
            if e == eid:
                return attrs
        raise InvalidArgumentError(f"unknown edge {eid!r}")

    def attr_index(self, a: str) -> int:
        try:
            return self.attributes.index(a)
        except ValueError:
            raise InvalidArgumentError(f"unknown attribute {a!r}") from None


@dataclass(frozen=True)
class EdgeCover:
    """Edge weights certifying coverage of every attribute."""

    weights: dict[str, Fraction]
    kind: str  # "fractional" | "integral"
    total: Fraction

    def verify(self, query: JoinQuery) -> bool:
        for x in query.attributes:
            if sum(self.weights[eid] for eid in edges_containing(query, x)) < 1:
                return False
        return all(0 <= w <= 1 for w in self.weights.values())


@dataclass(frozen=True)
class GHD:
    """Tree of attribute bags: node order, parent links, designated root."""

    nodes: tuple[str, ...]
    parent: dict[str, str | None]
    bags: dict[str, tuple[str, ...]]
    root: str

    def children(self, u: str) -> list[str]:
        return [v for v in self.nodes if self.parent[v] == u]


def restrict_query(query: JoinQuery, attrs) -> JoinQuery:
    """Sub-query induced by an attribute subset; empty edge intersections
    are dropped, edge ids are preserved."""
    s = set(attrs)
    if not s:
        raise InvalidArgumentError("attribute subset must be non-empty")
    unknown = s - set(query.attributes)
    if unknown:
        raise InvalidArgumentError(f"attributes {sorted(unknown)} not in query")
    kept = tuple(a for a in query.attributes if a in s)
    edges = tuple(
        (eid, tuple(a for a in attrs_e if a in s))
        for eid, attrs_e in query.edges
        if any(a in s for a in attrs_e)
    )
    return JoinQuery(kept, edges)


def edges_containing(query: JoinQuery, x: str) -> tuple[str, ...]:
    """Edge ids incident to attribute ``x``, in canonical order."""
    if x not in query.attributes:
        raise InvalidArgumentError(f"unknown attribute {x!r}")
    return tuple(eid for eid, attrs in query.edges if x in attrs)


def _solve_square(rows, rhs):
    """Solve an m x m rational system by Gaussian elimination.

    Returns None when singular.  ``rows`` is a list of coefficient lists.
    """
    m = len(rows)
    a = [[Fraction(v) for v in row] + [Fraction(r)] for row, r in zip(rows, rhs)]
    for col in range(m):
        piv = next((r for r in range(col, m) if a[r][col] != 0), None)
        if piv is None:
            return None
        a[col], a[piv] = a[piv], a[col]
        inv = a[col][col]
        a[col] = [v / inv for v in a[col]]
        for r in range(m):
            if r != col and a[r][col] != 0:
                f = a[r][col]
                a[r] = [v - f * p for v, p in zip(a[r], a[col])]
    return [a[r][m] for r in range(m)]


def _cover_constraints(query: JoinQuery):
    """Rows (coeffs, bound) of the cover polytope in form coeffs . W >= bound."""
    m = len(query.edges)
    rows = []
    for x in query.attributes:
        coeffs = [Fraction(1 if x in attrs else 0) for _, attrs in query.edges]
        rows.append((coeffs, Fraction(1)))
    for j in range(m):
        low = [Fraction(0)] * m
        low[j] = Fraction(1)
        rows.append((low, Fraction(0)))  # W_j >= 0
        high = [Fraction(0)] * m
        high[j] = Fraction(-1)
        rows.append((high, Fraction(-1)))  # W_j <= 1
    return rows


@lru_cache(maxsize=512)
def fractional_edge_cover(query: JoinQuery) -> EdgeCover:
    """Optimal fractional edge cover, solved exactly.

    Enumerates candidate vertices of the LP polytope (every choice of m
    tight constraints), keeps the feasible ones and returns the minimum
    total; ties broken by the lexicographically smallest weight vector.
    """
    m = len(query.edges)
    rows = _cover_constraints(query)
    best = None
    for subset in itertools.combinations(range(len(rows)), m):
        sol = _solve_square([rows[i][0] for i in subset], [rows[i][1] for i in subset])
        if sol is None:
            continue
        if any(sum(c * w for c, w in zip(coeffs, sol)) < b for coeffs, b in rows):
            continue
        cand = (sum(sol), tuple(sol))
        if best is None or cand < best:
            best = cand
    assert best is not None, "all-ones cover is always feasible"
    total, weights = best
    return EdgeCover(
        weights={eid: w for (eid, _), w in zip(query.edges, weights)},
        kind="fractional",
        total=total,
    )


@lru_cache(maxsize=512)
def integral_edge_cover(query: JoinQuery) -> EdgeCover:
    """Minimum-cardinality edge subset covering all attributes.

    Exhaustive search in increasing cardinality; the first hit in
    lexicographic edge-id order wins.
    """
    universe = set(query.attributes)
    for size in range(1, len(query.edges) + 1):
        for combo in itertools.combinations(query.edges, size):
            if set().union(*(set(attrs) for _, attrs in combo)) == universe:
                chosen = {eid for eid, _ in combo}
                return EdgeCover(
                    weights={
                        eid: Fraction(1 if eid in chosen else 0) for eid in query.edge_ids
                    },
                    kind="integral",
                    total=Fraction(size),
                )
    raise AssertionError("unreachable: full edge set always covers")


@lru_cache(maxsize=512)
def fractional_vertex_packing(query: JoinQuery) -> dict[str, Fraction]:
    """Optimal fractional vertex packing (the dual of the cover LP).

    max sum v_x  s.t.  sum_{x in e} v_x <= 1 per edge, 0 <= v_x <= 1.
    By LP duality the optimum equals the fractional edge cover number.
    Used by the extremal-instance construction.
    """
    n = len(query.attributes)
    rows = []
    for _, attrs in query.edges:
        coeffs = [Fraction(-1 if a in attrs else 0) for a in query.attributes]
        rows.append((coeffs, Fraction(-1)))  # sum over e <= 1
    for j in range(n):
        low = [Fraction(0)] * n
        low[j] = Fraction(1)
        rows.append((low, Fraction(0)))
        high = [Fraction(0)] * n
        high[j] = Fraction(-1)
        rows.append((high, Fraction(-1)))
    best = None
    for subset in itertools.combinations(range(len(rows)), n):
        sol = _solve_square([rows[i][0] for i in subset], [rows[i][1] for i in subset])
        if sol is None:
            continue
        if any(sum(c * v for c, v in zip(coeffs, sol)) < b for coeffs, b in rows):
            continue
        cand = (-sum(sol), tuple(sol))
        if best is None or cand < best:
            best = cand
    assert best is not None
    return {a: v for a, v in zip(query.attributes, best[1])}


def _iroot(x: int, q: int) -> int:
    """Largest r with r**q <= x, for x >= 0, q >= 1."""
    if q == 1 or x in (0, 1):
        return x
    r = 1 << ((x.bit_length() + q - 1) // q)
    while True:
        nr = ((q - 1) * r + x // r ** (q - 1)) // q
        if nr >= r:
            break
        r = nr
    while r**q > x:
        r -= 1
    while (r + 1) ** q <= x:
        r += 1
    return r


def power_budget(n: int, exponent: Fraction) -> int:
    """ceil(n ** exponent) by exact integer arithmetic.

    Budgets must be valid upper bounds, hence always the ceiling.
    Raises when the result would not fit in a signed 64-bit slot count.
    """
    exponent = Fraction(exponent)
    if exponent < 0:
        raise InvalidArgumentError("exponent must be >= 0")
    if n < 0:
        raise InvalidArgumentError("n must be non-negative")
    if exponent == 0:
        return 1
    if n == 0:
        return 0
    p, q = exponent.numerator, exponent.denominator
    power = n**p
    root = _iroot(power, q)
    result = root if root**q == power else root + 1
    if result > BUDGET_CAP:
        raise BudgetOverflowError(
            f"budget ceil({n}^{exponent}) exceeds 2^63-1"
        )
    return result


def _check_tree(d: GHD):
    nodes = set(d.nodes)
    if len(nodes) != len(d.nodes):
        raise GhdInvalidError("duplicate node names")
    if d.root not in nodes:
        raise GhdInvalidError(f"root {d.root!r} is not a node")
    if set(d.parent) != nodes:
        raise GhdInvalidError("parent map must cover exactly the node set")
    if d.parent[d.root] is not None:
        raise GhdInvalidError("root must have no parent")
    for u in d.nodes:
        if u == d.root:
            continue
        p = d.parent[u]
        if p not in nodes:
            raise GhdInvalidError(f"node {u!r} has parent {p!r} outside the tree")
        # walk to the root; a cycle never reaches it
        seen = {u}
        while p is not None:
            if p in seen:
                raise GhdInvalidError(f"cycle through node {u!r}")
            seen.add(p)
            p = d.parent[p]


def validate_ghd(query: JoinQuery, d: GHD) -> Fraction:
    """Check both decomposition invariants, then return this GHD's width
    (max over bags of the bag-restricted fractional cover number)."""
    _check_tree(d)
    vset = set(query.attributes)
    for u in d.nodes:
        stray = set(d.bags[u]) - vset
        if stray:
            raise GhdInvalidError(f"bag {u!r} has unknown attributes {sorted(stray)}")
    for eid, attrs in query.edges:
        if not any(set(attrs) <= set(d.bags[u]) for u in d.nodes):
            raise GhdInvalidError(f"edge {eid!r} is covered by no bag", witness=eid)
    for x in query.attributes:
        holders = {u for u in d.nodes if x in d.bags[u]}
        if not holders:
            raise GhdInvalidError(f"attribute {x!r} appears in no bag", witness=x)
        rootless = [u for u in holders if d.parent[u] not in holders]
        if len(rootless) != 1:
            raise GhdInvalidError(
                f"attribute {x!r} occurs in a disconnected node set", witness=x
            )
    width = Fraction(0)
    for u in d.nodes:
        bag = d.bags[u]
        if bag:
            width = max(width, fractional_edge_cover(restrict_query(query, bag)).total)
    return width


def _primal_adjacency(query: JoinQuery) -> dict[str, set[str]]:
    adj: dict[str, set[str]] = {a: set() for a in query.attributes}
    for _, attrs in query.edges:
        for a, b in itertools.combinations(attrs, 2):
            adj[a].add(b)
            adj[b].add(a)
    return adj


def _elimination_ghd(query: JoinQuery, order: tuple[str, ...]):
    """Tree decomposition induced by an elimination order; bags are the
    elimination cliques, subset bags pruned into their parents."""
    adj = {a: set(ns) for a, ns in _primal_adjacency(query).items()}
    pos = {a: i for i, a in enumerate(order)}
    bags = {}
    for v in order:
        bags[v] = {v} | adj[v]
        for a, b in itertools.combinations(adj[v], 2):
            adj[a].add(b)
            adj[b].add(a)
        for a in adj[v]:
            adj[a].discard(v)
        adj[v] = set()
    neighbors: dict[str, set[str]] = {v: set() for v in order}
    for v in order:
        later = [u for u in bags[v] if u != v and pos[u] > pos[v]]
        if later:
            p = min(later, key=pos.__getitem__)
            neighbors[v].add(p)
            neighbors[p].add(v)
    root = order[-1]
    for v in order[:-1]:
        if not neighbors[v]:
            neighbors[v].add(root)
            neighbors[root].add(v)
    # absorb any bag contained in a neighbor's bag
    alive = dict(bags)
    changed = True
    while changed:
        changed = False
        for v in [u for u in order if u in alive]:
            host = next((w for w in neighbors[v] if alive[v] <= alive[w]), None)
            if host is None:
                continue
            for w in neighbors[v] - {host}:
                neighbors[w].discard(v)
                neighbors[w].add(host)
                neighbors[host].add(w)
            neighbors[host].discard(v)
            del alive[v]
            del neighbors[v]
            if v == root:
                root = host
            changed = True
    nodes = tuple(v for v in order if v in alive)
    parent: dict[str, str | None] = {root: None}
    queue = [root]
    while queue:
        u = queue.pop()
        for w in neighbors[u]:
            if w not in parent:
                parent[w] = u
                queue.append(w)
    canon = {a: i for i, a in enumerate(query.attributes)}
    return GHD(
        nodes=nodes,
        parent=parent,
        bags={v: tuple(sorted(alive[v], key=canon.__getitem__)) for v in nodes},
        root=root,
    )


@lru_cache(maxsize=512)
def search_ghd(query: JoinQuery) -> GHD:
    """Exhaustive decomposition search (elimination orderings) minimizing
    width; deterministic tie-break by permutation order.

    Only feasible for small attribute sets; larger queries must supply a
    decomposition in the query file.
    """
    if len(query.attributes) > GHD_SEARCH_MAX_ATTRS:
        raise SizeLimitError(
            f"decomposition search is capped at {GHD_SEARCH_MAX_ATTRS} attributes; "
            "supply a ghd in the query file"
        )
    rho_cache: dict[frozenset, Fraction] = {}

    def bag_rho(bag: frozenset) -> Fraction:
        if bag not in rho_cache:
            rho_cache[bag] = fractional_edge_cover(restrict_query(query, bag)).total
        return rho_cache[bag]

    best = None
    best_ghd = None
    seen_bagsets = set()
    for order in itertools.permutations(query.attributes):
        d = _elimination_ghd(query, order)
        key = frozenset(frozenset(b) for b in d.bags.values())
        if key in seen_bagsets:
            continue
        seen_bagsets.add(key)
        width = max(bag_rho(frozenset(d.bags[u])) for u in d.nodes)
        if best is None or width < best:
            best = width
            best_ghd = d
    assert best_ghd is not None
    return best_ghd
