"""Multi-way oblivious join strategies.

Five strategies share the primitive layer: the integral-cover nested-loop
fold, two triangle specializations (heavy/light value split and delayed
third-attribute expansion), the general worst-case-optimal recursion with
degree-based partitioning, and the decomposition-based relaxed join.  A
deliberately leaky sort-merge baseline rounds out the set as the negative
control for obliviousness experiments.

Public size parameters (relation lengths, the input total N, bounds tau)
drive every trace; tuple contents decide only what the slots hold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import InvalidArgumentError
from .hypergraph import (
    GHD,
    EdgeCover,
    JoinQuery,
    edges_containing,
    fractional_edge_cover,
    integral_edge_cover,
    power_budget,
    restrict_query,
    search_ghd,
    validate_ghd,
)
from .memory import OP_READ, OP_WRITE, EngineContext, ScanSeg
from .oracle import Instance
from .primitives import (
    MAX_ANN,
    Relation,
    augment,
    intersect,
    oblivious_compact,
    preload_relation,
    project,
    semi_join,
)
from .twoway import (
    insecure_sortmerge,
    nested_loop_join,
    relaxed_two_way,
    shared_attrs,
)

STRATEGIES = (
    "nested-loop",
    "triangle-v1",
    "triangle-v2",
    "generic",
    "ghd-relaxed",
    "insecure-sortmerge",
)


@dataclass
class JoinPlan:
    """Static execution plan: covers, budgets, elimination order, GHD."""

    strategy: str
    query: JoinQuery
    n: int
    frac_cover: EdgeCover
    int_cover: EdgeCover
    tau: int
    eliminations: list = field(default_factory=list)
    ghd: GHD | None = None
    fhtw: Fraction | None = None
    bag_taus: dict = field(default_factory=dict)


@dataclass
class JoinResult:
    relation: Relation
    plan: JoinPlan
    ctx: EngineContext

    @property
    def out_count(self) -> int:
        return int(np.count_nonzero(~self.relation.data.dummy))


def load_relations(ctx, inst: Instance, pad_to_n=False) -> dict[str, Relation]:
    """Place instance tables into traced arrays (no events: inputs start
    out resident in untrusted memory).  ``pad_to_n`` dummy-extends every
    relation to the instance's total size, so traces depend on N alone."""
    n_total = inst.total_size
    rels = {}
    for eid, attrs in inst.query.edges:
        rows = inst.tables[eid]
        rels[eid] = preload_relation(
            ctx, attrs, rows, n_slots=n_total if pad_to_n else len(rows)
        )
    return rels


def _route_scan(ctx, src: Relation, n_outputs: int, selector, schemas=None, ann_k=None):
    """One read of each input slot, one write to each of the n outputs:
    the selected output receives the tuple, the rest receive dummies.

    ``selector`` holds the output index per row (< 0 routes nowhere,
    which is where dummies go)."""
    n = src.n
    ann_k = src.data.ann_k if ann_k is None else ann_k
    outs = []
    for k in range(n_outputs):
        schema = src.schema if schemas is None else schemas[k]
        outs.append(Relation(schema, ctx.alloc(n, len(schema), ann_k)))
    ctx.trace.add(
        ScanSeg(
            [(src.data.id, OP_READ, 0)]
            + [(o.data.id, OP_WRITE, 0) for o in outs],
            n,
        )
    )
    selector = np.asarray(selector)
    for k, o in enumerate(outs):
        sel = np.nonzero(selector == k)[0]
        o.data.vals[sel] = src.data.vals[sel]
        o.data.dummy[sel] = False
        o.data.tag[sel] = src.data.tag[sel]
        if ann_k and src.data.ann_k:
            o.data.ann[sel, : src.data.ann_k] = src.data.ann[sel, : src.data.ann_k]
    return outs


def partition_one(qi: Relation, edge_ids, slot_map) -> dict[str, Relation]:
    """Route each tuple to the edge where its annotated degree is smallest
    (ties to the first edge in canonical order); dummies everywhere else.

    The degree annotations are dead after routing, so the outputs carry
    no annotation columns (tuples are single registers in the model; the
    column layout is simulator-internal).
    """
    for eid in edge_ids:
        if eid not in slot_map:
            raise InvalidArgumentError(f"missing degree annotation for {eid!r}")
    degs = np.column_stack([qi.data.ann[:, slot_map[eid]] for eid in edge_ids])
    selector = np.where(qi.data.dummy, -1, np.argmin(degs, axis=1))
    outs = _route_scan(qi.ctx, qi, len(edge_ids), selector, ann_k=0)
    return dict(zip(edge_ids, outs))


def partition_two(qi: Relation, ey_only, ez_only, both, slot_map):
    """Route by the cheaper of the two expansion plans: the best pair
    (e1 from Ey-Ez, e2 from Ez-Ey) when its degree product is at most the
    best shared edge's degree, else that shared edge."""
    if not ey_only or not ez_only:
        raise InvalidArgumentError("partition-two requires non-empty side sets")
    pairs = [(a, b) for a in ey_only for b in ez_only]
    n = qi.n
    INF = np.int64(1) << np.int64(61)

    def degcol(eid):
        return qi.data.ann[:, slot_map[eid]].astype(np.int64)

    d_ey = np.column_stack([degcol(e) for e in ey_only])
    d_ez = np.column_stack([degcol(e) for e in ez_only])
    a1 = np.argmin(d_ey, axis=1)
    a2 = np.argmin(d_ez, axis=1)
    best_pair_val = d_ey.min(axis=1) * d_ez.min(axis=1)
    if both:
        d_e3 = np.column_stack([degcol(e) for e in both])
        a3 = np.argmin(d_e3, axis=1)
        best_single_val = d_e3.min(axis=1)
    else:
        a3 = np.zeros(n, np.int64)
        best_single_val = np.full(n, INF)
    take_pair = best_pair_val <= best_single_val
    pair_index = a1 * len(ez_only) + a2
    selector = np.where(take_pair, pair_index, len(pairs) + a3)
    selector = np.where(qi.data.dummy, -1, selector)
    outs = _route_scan(qi.ctx, qi, len(pairs) + len(both), selector, ann_k=0)
    pair_outs = {pairs[k]: outs[k] for k in range(len(pairs))}
    single_outs = {e3: outs[len(pairs) + k] for k, e3 in enumerate(both)}
    return pair_outs, single_outs


def _concat(ctx, rels, attr_order=None) -> Relation:
    """Concatenate same-schema relations in the given order."""
    schema = rels[0].schema
    for r in rels:
        if r.schema != schema:
            raise InvalidArgumentError("union requires identical schemas")
    total = sum(r.n for r in rels)
    out = ctx.alloc(total, len(schema), 0)
    base = 0
    for r in rels:
        ctx.trace.add(
            ScanSeg([(r.data.id, OP_READ, 0), (out.id, OP_WRITE, base)], r.n)
        )
        out.vals[base : base + r.n] = r.data.vals
        out.dummy[base : base + r.n] = r.data.dummy
        base += r.n
    return Relation(schema, out)


def _real_count(rel: Relation) -> int:
    """True set size of a possibly padded relation: a trusted-register
    value used only in per-tuple comparisons, never in the trace."""
    return int(np.count_nonzero(~rel.data.dummy))


# --- strategy: oblivious nested-loop over an optimal integral cover -----


def oblivious_nested_loop_join(
    query: JoinQuery, rels, ctx, attr_order=None
) -> Relation:
    """Fold the relations chosen by an optimal integral edge cover through
    the blocked nested loop, semi-joining with every other relation after
    each fold."""
    attr_order = attr_order or query.attributes
    cover = integral_edge_cover(query)
    chosen = [eid for eid in query.edge_ids if cover.weights[eid] == 1]
    left = None
    for eid in chosen:
        if left is None:
            left = rels[eid]
        else:
            left = nested_loop_join(left, rels[eid], attr_order)
        for other in query.edge_ids:
            if other != eid:
                left = semi_join(left, rels[other], shared_attrs(left, rels[other]))
    return left


# --- triangle strategies -------------------------------------------------


def _triangle_roles(query: JoinQuery, rels):
    """Map an arbitrary 3-attribute/3-binary-edge query onto the roles
    r1(x2,x3), r2(x1,x3), r3(x1,x2)."""
    if len(query.attributes) != 3 or len(query.edges) != 3:
        raise InvalidArgumentError("triangle strategies need 3 attributes and 3 edges")
    x1, x2, x3 = query.attributes
    want = {
        "r1": {x2, x3},
        "r2": {x1, x3},
        "r3": {x1, x2},
    }
    roles = {}
    for eid, attrs in query.edges:
        for role, attrset in want.items():
            if set(attrs) == attrset and role not in roles:
                roles[role] = rels[eid]
                break
    if len(roles) != 3:
        raise InvalidArgumentError("query is not a triangle")
    return (x1, x2, x3), roles["r1"], roles["r2"], roles["r3"]


def oblivious_triangle_v1(query, rels, ctx, tau, attr_order=None) -> Relation:
    """Heavy/light split on the shared first attribute's candidate values
    (power of two choices between the partner product and |r1|)."""
    attr_order = attr_order or query.attributes
    (x1, x2, x3), r1, r2, r3 = _triangle_roles(query, rels)
    a = intersect(project(r2, (x1,)), project(r3, (x1,)))
    a = augment(a, [r2, r3], (x1,))
    d1 = a.data.ann[:, 0].astype(np.int64)
    d2 = a.data.ann[:, 1].astype(np.int64)
    light = d1 * d2 <= _real_count(r1)
    selector = np.where(a.data.dummy, -1, np.where(light, 0, 1))
    a1, a2 = _route_scan(ctx, a, 2, selector, ann_k=0)
    l1 = relaxed_two_way(a2, r1, tau, site="triangle-v1/heavy", attr_order=attr_order)
    l1 = semi_join(l1, r2, shared_attrs(l1, r2))
    l1 = semi_join(l1, r3, shared_attrs(l1, r3))
    r2l = semi_join(r2, a1, (x1,))
    r3l = semi_join(r3, a1, (x1,))
    l2 = relaxed_two_way(r2l, r3l, tau, site="triangle-v1/light", attr_order=attr_order)
    l2 = semi_join(l2, r1, shared_attrs(l2, r1))
    return oblivious_compact(_concat(ctx, [l1, l2]), tau)


def oblivious_triangle_v2(query, rels, ctx, tau, attr_order=None) -> Relation:
    """Delayed-expansion variant: each surviving (x1,x2) pair joins through
    whichever of r1/r2 offers the smaller degree (ties to r1)."""
    attr_order = attr_order or query.attributes
    (x1, x2, x3), r1, r2, r3 = _triangle_roles(query, rels)
    k = augment(r3, [r1], (x2,), start_slot=0)
    k = augment(k, [r2], (x1,), start_slot=1)
    d1 = k.data.ann[:, 0].astype(np.int64)
    d2 = k.data.ann[:, 1].astype(np.int64)
    selector = np.where(k.data.dummy, -1, np.where(d1 <= d2, 0, 1))
    k1, k2 = _route_scan(ctx, k, 2, selector, ann_k=0)
    l1 = relaxed_two_way(k1, r1, tau, site="triangle-v2/k1", attr_order=attr_order)
    l1 = semi_join(l1, r2, shared_attrs(l1, r2))
    l2 = relaxed_two_way(k2, r2, tau, site="triangle-v2/k2", attr_order=attr_order)
    l2 = semi_join(l2, r1, shared_attrs(l2, r1))
    return oblivious_compact(_concat(ctx, [l1, l2]), tau)


# --- generic worst-case-optimal strategy ---------------------------------


def choose_partition(query: JoinQuery):
    """Deterministic (I, J) split: take the last two attributes as J when
    each brings a private edge, else the last attribute alone."""
    attrs = query.attributes
    if len(attrs) >= 3:
        y, z = attrs[-2], attrs[-1]
        ey = set(edges_containing(query, y))
        ez = set(edges_containing(query, z))
        if (ey - ez) and (ez - ey):
            j = (y, z)
        else:
            j = (attrs[-1],)
    else:
        j = (attrs[-1],)
    i = tuple(a for a in attrs if a not in j)
    return i, j


def eliminations_of(query: JoinQuery):
    """The (I, J) chain the generic recursion will follow (for plans)."""
    out = []
    q = query
    while len(q.attributes) > 1:
        i, j = choose_partition(q)
        out.append((i, j))
        q = restrict_query(q, i)
    return out


def oblivious_generic_join(
    query: JoinQuery, rels, ctx, tau, attr_order=None, depth=0
) -> Relation:
    """The recursive worst-case-optimal join; ``tau`` is the root budget
    threaded unchanged through every level."""
    attr_order = attr_order or query.attributes
    if len(query.attributes) == 1:
        left = None
        for eid, _ in query.edges:
            left = rels[eid] if left is None else intersect(left, rels[eid])
        return left
    i_attrs, j_attrs = choose_partition(query)
    sub_q = restrict_query(query, i_attrs)
    sub_rels = {}
    for eid, eattrs in query.edges:
        inter = tuple(a for a in eattrs if a in i_attrs)
        if inter:
            sub_rels[eid] = project(rels[eid], inter)
    qi = oblivious_generic_join(
        sub_q, sub_rels, ctx, tau, attr_order=attr_order, depth=depth + 1
    )
    site = f"d{depth}"
    if len(j_attrs) == 1:
        (x,) = j_attrs
        ex = list(edges_containing(query, x))
        if len(ex) > MAX_ANN:
            raise InvalidArgumentError(
                f"{len(ex)} incident edges exceed the annotation cap {MAX_ANN}"
            )
        slot_map = {eid: k for k, eid in enumerate(ex)}
        for eid in ex:
            key = tuple(a for a in query.edge_attrs(eid) if a in i_attrs)
            qi = augment(qi, [rels[eid]], key, start_slot=slot_map[eid])
        parts = partition_one(qi, ex, slot_map)
        branches = []
        for eid in ex:
            l_e = relaxed_two_way(
                parts[eid],
                rels[eid],
                tau,
                site=f"{site}/single[{eid}]",
                attr_order=attr_order,
            )
            for other in ex:
                if other != eid:
                    l_e = semi_join(l_e, rels[other], shared_attrs(l_e, rels[other]))
            branches.append(l_e)
    else:
        y, z = j_attrs
        ey = set(edges_containing(query, y))
        ez = set(edges_containing(query, z))
        ey_only = [e for e in query.edge_ids if e in ey - ez]
        ez_only = [e for e in query.edge_ids if e in ez - ey]
        both = [e for e in query.edge_ids if e in ey & ez]
        aug_edges = [e for e in query.edge_ids if e in ey | ez]
        if len(aug_edges) > MAX_ANN:
            raise InvalidArgumentError(
                f"{len(aug_edges)} incident edges exceed the annotation cap {MAX_ANN}"
            )
        slot_map = {eid: k for k, eid in enumerate(aug_edges)}
        for eid in aug_edges:
            key = tuple(a for a in query.edge_attrs(eid) if a in i_attrs)
            qi = augment(qi, [rels[eid]], key, start_slot=slot_map[eid])
        pair_outs, single_outs = partition_two(qi, ey_only, ez_only, both, slot_map)
        branches = []
        for (e1, e2), part in pair_outs.items():
            l_p = relaxed_two_way(
                part, rels[e1], tau, site=f"{site}/pair[{e1},{e2}]/1",
                attr_order=attr_order,
            )
            l_p = relaxed_two_way(
                l_p, rels[e2], tau, site=f"{site}/pair[{e1},{e2}]/2",
                attr_order=attr_order,
            )
            for other in query.edge_ids:
                if other not in (e1, e2):
                    l_p = semi_join(l_p, rels[other], shared_attrs(l_p, rels[other]))
            branches.append(l_p)
        for e3, part in single_outs.items():
            l_s = relaxed_two_way(
                part, rels[e3], tau, site=f"{site}/shared[{e3}]",
                attr_order=attr_order,
            )
            for other in query.edge_ids:
                if other != e3:
                    l_s = semi_join(l_s, rels[other], shared_attrs(l_s, rels[other]))
            branches.append(l_s)
    return oblivious_compact(_concat(ctx, branches), tau)


# --- decomposition-based relaxed strategy --------------------------------


def _postorder(d: GHD):
    out = []

    def walk(u):
        for v in d.children(u):
            walk(v)
        out.append(u)

    walk(d.root)
    return out


def relaxed_join_ghd(
    query: JoinQuery, rels, ctx, tau, d: GHD, attr_order=None
) -> Relation:
    """Materialize every bag with the generic join, run both semi-join
    sweeps to drop dangling tuples, then merge bottom-up with the public
    output bound tau."""
    attr_order = attr_order or query.attributes
    node_rel = {}
    for u in d.nodes:
        bag = d.bags[u]
        bag_q = restrict_query(query, bag)
        sub = {}
        for eid, eattrs in query.edges:
            inter = tuple(a for a in eattrs if a in bag)
            if inter:
                sub[eid] = project(rels[eid], inter)
        n_u = sum(r.n for r in sub.values())
        tau_u = power_budget(n_u, fractional_edge_cover(bag_q).total)
        node_rel[u] = oblivious_generic_join(
            bag_q, sub, ctx, tau_u, attr_order=attr_order
        )
    order = _postorder(d)
    for u in order:
        if u != d.root:
            p = d.parent[u]
            node_rel[p] = semi_join(
                node_rel[p], node_rel[u], shared_attrs(node_rel[p], node_rel[u])
            )
    for u in reversed(order):  # top-down
        for v in d.children(u):
            node_rel[v] = semi_join(
                node_rel[v], node_rel[u], shared_attrs(node_rel[v], node_rel[u])
            )
    for u in order:
        if u != d.root:
            p = d.parent[u]
            node_rel[p] = relaxed_two_way(
                node_rel[p],
                node_rel[u],
                tau,
                site=f"ghd[{u}->{p}]",
                attr_order=attr_order,
            )
    return node_rel[d.root]


# --- front door -----------------------------------------------------------


def plan_query(
    query: JoinQuery, strategy: str, n: int, ghd: GHD | None = None, tau=None
) -> JoinPlan:
    if strategy not in STRATEGIES:
        raise InvalidArgumentError(
            f"unknown strategy {strategy!r}; choose from {STRATEGIES}"
        )
    frac = fractional_edge_cover(query)
    integ = integral_edge_cover(query)
    plan = JoinPlan(
        strategy=strategy,
        query=query,
        n=n,
        frac_cover=frac,
        int_cover=integ,
        tau=power_budget(n, frac.total),
    )
    if strategy == "generic":
        plan.eliminations = eliminations_of(query)
    if strategy == "ghd-relaxed":
        plan.ghd = ghd if ghd is not None else search_ghd(query)
        plan.fhtw = validate_ghd(query, plan.ghd)
        if tau is not None:
            plan.tau = int(tau)
        for u in plan.ghd.nodes:
            bag_q = restrict_query(query, plan.ghd.bags[u])
            plan.bag_taus[u] = fractional_edge_cover(bag_q).total
    return plan


def run_join(
    query: JoinQuery,
    inst: Instance,
    strategy: str,
    ctx: EngineContext | None = None,
    pad_to_n: bool = False,
    tau=None,
    ghd: GHD | None = None,
) -> JoinResult:
    """Evaluate the query with one strategy inside a fresh (or given)
    engine context and return the output relation plus the plan."""
    ctx = ctx or EngineContext()
    rels = load_relations(ctx, inst, pad_to_n=pad_to_n)
    n = sum(r.n for r in rels.values())
    plan = plan_query(query, strategy, n, ghd=ghd, tau=tau)
    attr_order = query.attributes
    if strategy == "nested-loop":
        out = oblivious_nested_loop_join(query, rels, ctx, attr_order)
    elif strategy == "triangle-v1":
        out = oblivious_triangle_v1(query, rels, ctx, plan.tau, attr_order)
    elif strategy == "triangle-v2":
        out = oblivious_triangle_v2(query, rels, ctx, plan.tau, attr_order)
    elif strategy == "generic":
        out = oblivious_generic_join(query, rels, ctx, plan.tau, attr_order)
    elif strategy == "ghd-relaxed":
        out = relaxed_join_ghd(query, rels, ctx, plan.tau, plan.ghd, attr_order)
    elif strategy == "insecure-sortmerge":
        if len(query.edges) != 2:
            raise InvalidArgumentError(
                "the sort-merge baseline handles exactly two relations"
            )
        r1, r2 = (rels[eid] for eid in query.edge_ids)
        out = insecure_sortmerge(r1, r2, attr_order)
    else:  # pragma: no cover
        raise AssertionError(strategy)
    return JoinResult(out, plan, ctx)
