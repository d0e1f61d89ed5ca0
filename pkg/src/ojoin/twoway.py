"""Binary join kernels.

``nested_loop_join`` visits every tuple pair in a cache-agnostic blocked
recursion and writes one output slot per pair unconditionally, so its
trace depends only on the two lengths.  ``relaxed_two_way`` computes an
equi-join into exactly tau slots through the degree/expand/renumber/merge
pipeline; its trace depends only on the lengths and tau.  The
``insecure_sortmerge`` baseline is deliberately leaky and exists as the
negative control for obliviousness experiments.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from ._kernels import nested_loop_order
from .errors import InvalidArgumentError
from .memory import OP_READ, OP_WRITE, NestedLoopSeg, RawSeg, ScanSeg
from .primitives import (
    Relation,
    augment,
    expand,
    multi_number,
    sort_by_slots,
)

DEGREE_SLOT = 0
NUMBER_SLOT = 1


def merged_schema(r_schema, s_schema, attr_order=None):
    """Join output schema; ordered by ``attr_order`` when given (the
    query's canonical attribute order), else r's columns then s's new
    ones."""
    if attr_order is None:
        return tuple(r_schema) + tuple(a for a in s_schema if a not in r_schema)
    present = set(r_schema) | set(s_schema)
    return tuple(a for a in attr_order if a in present)


def shared_attrs(r: Relation, s: Relation):
    return tuple(a for a in r.schema if a in s.schema)


@lru_cache(maxsize=256)
def _nl_order_cached(nr, ns):
    ri, si = nested_loop_order(nr, ns)
    ri.setflags(write=False)
    si.setflags(write=False)
    return ri, si


def nested_loop_join(r: Relation, s: Relation, attr_order=None) -> Relation:
    """All |r|*|s| pair slots in blocked-recursive visit order; a slot
    holds the joined tuple when the pair matches and both are real, else
    a dummy."""
    ctx = r.ctx
    key = shared_attrs(r, s)
    schema = merged_schema(r.schema, s.schema, attr_order)
    nr, ns = r.n, s.n
    out = ctx.alloc(nr * ns, len(schema), 0)
    ctx.trace.add(NestedLoopSeg(r.data.id, s.data.id, out.id, nr, ns))
    if nr and ns:
        ri, si = _nl_order_cached(nr, ns)
        match = (~r.data.dummy[ri]) & (~s.data.dummy[si])
        for a in key:
            match &= r.data.vals[ri, r.col(a)] == s.data.vals[si, s.col(a)]
        sel = np.nonzero(match)[0]
        for col, a in enumerate(schema):
            src = r if a in r.schema else s
            idx = ri if a in r.schema else si
            out.vals[sel, col] = src.data.vals[idx[sel], src.col(a)]
        out.dummy[sel] = False
    return Relation(schema, out)


def relaxed_two_way(
    r: Relation,
    s: Relation,
    tau: int,
    site: str = "relaxed-two-way",
    attr_order=None,
) -> Relation:
    """Equi-join on the shared attributes into exactly tau slots.

    Pipeline: annotate both sides with partner degrees, expand each side
    to tau (copies of an r-tuple are contiguous; the s side is then
    renumbered per distinct tuple and reordered by (key, number) so the
    two expansions line up as the sort-merge pair sequence), then merge
    one-to-one.  Requires |r join s| <= tau, else the expansion alarm
    fires.  Annotation slots of the working copies are clobbered.
    """
    ctx = r.ctx
    key = shared_attrs(r, s)
    schema = merged_schema(r.schema, s.schema, attr_order)
    r_deg = augment(r, [s], key, start_slot=DEGREE_SLOT)
    s_deg = augment(s, [r], key, start_slot=DEGREE_SLOT)
    r_exp = expand(r_deg, tau, weight_slot=DEGREE_SLOT, site=f"{site}/left")
    s_exp = expand(s_deg, tau, weight_slot=DEGREE_SLOT, site=f"{site}/right")
    s_num = multi_number(s_exp, s.schema, out_slot=NUMBER_SLOT)
    s_ord = sort_by_slots(s_num, key, (NUMBER_SLOT,))
    out = ctx.alloc(tau, len(schema), 0)
    ctx.trace.add(
        ScanSeg(
            [
                (r_exp.data.id, OP_READ, 0),
                (s_ord.data.id, OP_READ, 0),
                (out.id, OP_WRITE, 0),
            ],
            tau,
        )
    )
    both = (~r_exp.data.dummy) & (~s_ord.data.dummy)
    if ctx.debug:
        if not np.array_equal(~r_exp.data.dummy, ~s_ord.data.dummy):
            raise AssertionError(f"{site}: expanded sides misaligned")
        for a in key:
            lhs = r_exp.data.vals[both, r_exp.col(a)]
            rhs = s_ord.data.vals[both, s_ord.col(a)]
            if not np.array_equal(lhs, rhs):
                raise AssertionError(f"{site}: merge keys misaligned on {a!r}")
    sel = np.nonzero(both)[0]
    for col, a in enumerate(schema):
        src = r_exp if a in r_exp.schema else s_ord
        out.vals[sel, col] = src.data.vals[sel, src.col(a)]
    out.dummy[sel] = False
    return Relation(schema, out)


def insecure_sortmerge(r: Relation, s: Relation, attr_order=None) -> Relation:
    """Classic sort-merge join; the merge phase's pointer movement and
    match-only writes leak degree structure.  Negative control only."""
    ctx = r.ctx
    key = shared_attrs(r, s)
    if not key:
        raise InvalidArgumentError("sort-merge baseline needs a join key")
    schema = merged_schema(r.schema, s.schema, attr_order)
    from .primitives import oblivious_sort  # the sort itself is not the leak

    rs = oblivious_sort(r, key)
    ss = oblivious_sort(s, key)
    rk = [tuple(row) for row in rs.data.vals[:, [rs.col(a) for a in key]]]
    sk = [tuple(row) for row in ss.data.vals[:, [ss.col(a) for a in key]]]
    r_dummy = rs.data.dummy.tolist()
    s_dummy = ss.data.dummy.tolist()

    def merge(out_id=None):
        matches = []
        events = []
        i = j = 0
        while i < rs.n and j < ss.n and not r_dummy[i] and not s_dummy[j]:
            events.append((rs.data.id, i, OP_READ))
            events.append((ss.data.id, j, OP_READ))
            if rk[i] < sk[j]:
                i += 1
            elif rk[i] > sk[j]:
                j += 1
            else:
                j2 = j
                while j2 < ss.n and not s_dummy[j2] and sk[j2] == rk[i]:
                    events.append((ss.data.id, j2, OP_READ))
                    if out_id is not None:
                        events.append((out_id, len(matches), OP_WRITE))
                    matches.append((i, j2))
                    j2 += 1
                i += 1
        return matches, events

    n_out = len(merge()[0])
    out = ctx.alloc(n_out, len(schema), 0)
    matches, events = merge(out.id)
    ctx.trace.add(
        RawSeg(
            np.array([e[0] for e in events], np.uint32),
            np.array([e[1] for e in events], np.uint64),
            np.array([e[2] for e in events], np.uint8),
        )
    )
    for k, (mi, mj) in enumerate(matches):
        for col, a in enumerate(schema):
            src, idx = (rs, mi) if a in rs.schema else (ss, mj)
            out.vals[k, col] = src.data.vals[idx, src.col(a)]
        out.dummy[k] = False
    return Relation(schema, out)
