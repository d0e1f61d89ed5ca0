"""Deterministic data-oblivious building blocks.

All primitives route storage through traced arrays and emit access
patterns that are fixed functions of input lengths (plus the public bound
tau, where one applies).  Dummy tuples sort after every real tuple under
every key, and output lengths are documented functions of input lengths
only.

Implementation note: array contents are computed with vectorized mirrors
of the per-element register-machine scans described in each primitive,
and the sorting network's final state is obtained by running the
comparator network on the key ranks (order-isomorphic to running it on
the keys directly).  Trace segments always describe the exact element
access sequence; tests check the vectorized contents against naive
per-element references.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import bitonic_pass
from .errors import (
    BudgetExceededError,
    InvalidArgumentError,
    PreconditionError,
)
from .memory import (
    DUMMY_CODE,
    OP_READ,
    OP_WRITE,
    BitonicSeg,
    EngineContext,
    ScanSeg,
    TracedArray,
    Tuple,
)

INF_POS = np.int64(1) << np.int64(62)

# annotation slot layout: up to 4 auxiliary words per tuple
MAX_ANN = 4
VALUE_SLOT = 0  # key/value lists produced by reduce_by_key keep the value here

TAG_S = 0  # union arrays: side that wins ties (sorts first)
TAG_R = 1


@dataclass
class Relation:
    """A schema plus a traced array of tuples.

    ``schema[i]`` names column ``i`` of the backing array; the declared
    logical size is the array length (dummies included).
    """

    schema: tuple[str, ...]
    data: TracedArray

    @property
    def n(self) -> int:
        return self.data.n

    @property
    def ctx(self) -> EngineContext:
        return self.data.ctx

    def col(self, attr: str) -> int:
        try:
            return self.schema.index(attr)
        except ValueError:
            raise InvalidArgumentError(
                f"attribute {attr!r} not in schema {self.schema}"
            ) from None

    def real_rows(self) -> np.ndarray:
        """Untraced debug/test accessor: value rows of the non-dummy slots."""
        return self.data.vals[~self.data.dummy]

    def real_tuples(self) -> list[tuple[int, ...]]:
        return [tuple(int(v) for v in row) for row in self.real_rows()]


def preload_relation(ctx, schema, rows, n_slots=None, ann_k=0, ann_rows=None) -> Relation:
    """Materialize input data already resident in untrusted memory.

    Loading inputs emits no events: the model starts with the database
    stored in untrusted memory.
    """
    schema = tuple(schema)
    arity = len(schema)
    rows = np.asarray(rows, np.int64).reshape(-1, arity) if len(rows) else np.empty((0, arity), np.int64)
    n = len(rows) if n_slots is None else int(n_slots)
    if n < len(rows):
        raise InvalidArgumentError("n_slots smaller than row count")
    arr = ctx.alloc(n, arity, ann_k)
    if len(rows):
        arr.vals[: len(rows)] = rows
        arr.dummy[: len(rows)] = False
        if ann_rows is not None:
            ann_rows = np.asarray(ann_rows, np.int64)
            arr.ann[: len(rows), : ann_rows.shape[1]] = ann_rows
    return Relation(schema, arr)


def _next_pow2(n: int) -> int:
    return 1 if n <= 1 else 1 << (n - 1).bit_length()


def _copy_rows(dst: TracedArray, dst_sel, src: TracedArray, src_sel):
    """Content move without events (events are the caller's segments)."""
    k = min(src.arity, dst.arity)
    dst.vals[dst_sel, :k] = src.vals[src_sel, :k]
    dst.dummy[dst_sel] = src.dummy[src_sel]
    dst.tag[dst_sel] = src.tag[src_sel]
    ka = min(src.ann_k, dst.ann_k)
    if ka:
        dst.ann[dst_sel, :ka] = src.ann[src_sel, :ka]


def _network_sort(work: TracedArray, key_cols):
    """Run the bitonic network in place on ``work`` (length a power of
    two), ordering by the given key columns with slot position as the
    final tie-break (which also makes the sort stable).

    Emits the network's access pattern and applies the resulting
    permutation to the array contents.
    """
    n = work.n
    assert n >= 1 and (n & (n - 1)) == 0
    work.ctx.trace.add(BitonicSeg(work.id, n))
    if n == 1:
        return
    order = np.lexsort(tuple(reversed([np.asarray(c) for c in key_cols])))
    ranks = np.empty(n, np.int64)
    ranks[order] = np.arange(n, dtype=np.int64)
    packed = ranks * np.int64(n) + np.arange(n, dtype=np.int64)
    bitonic_pass(packed)
    perm = packed % np.int64(n)
    work.vals = work.vals[perm]
    work.dummy = work.dummy[perm]
    work.tag = work.tag[perm]
    if work.ann_k:
        work.ann = work.ann[perm]


def _sort_array(ctx, src: TracedArray, key_builder, keep=None, extra_cols=0) -> TracedArray:
    """Pad to a power of two, run the network, truncate back.

    ``key_builder(work)`` builds the key columns on the padded working
    array.  ``extra_cols`` widens the working value block (scratch columns
    such as expansion stamps); truncation drops them again.
    """
    n = src.n
    keep = n if keep is None else int(keep)
    if keep > n:
        raise InvalidArgumentError(f"keep={keep} exceeds length {n}")
    out = ctx.alloc(keep, src.arity, src.ann_k)
    if n == 0:
        return out
    npad = _next_pow2(n)
    work = ctx.alloc(npad, src.arity + extra_cols, src.ann_k)
    ctx.trace.add(ScanSeg([(src.id, OP_READ, 0), (work.id, OP_WRITE, 0)], n))
    _copy_rows(work, slice(0, n), src, slice(0, n))
    if npad > n:
        ctx.trace.add(ScanSeg([(work.id, OP_WRITE, n)], npad - n))
        work.vals[n:, src.arity :] = INF_POS
    _network_sort(work, key_builder(work))
    ctx.trace.add(ScanSeg([(work.id, OP_READ, 0), (out.id, OP_WRITE, 0)], keep))
    _copy_rows(out, slice(0, keep), work, slice(0, keep))
    return out


def _dummies_last_key(work: TracedArray, front_cols):
    """Dummy flag first (so dummies land last), then the declared key
    columns.  Ties keep their prior order: the network's position
    tie-break makes every sort stable."""
    return [work.dummy.astype(np.int64)] + list(front_cols)


def oblivious_sort(rel: Relation, key_attrs) -> Relation:
    """Stable order by the named attributes, dummies last."""
    idxs = [rel.col(a) for a in key_attrs]
    arr = _sort_array(
        rel.ctx, rel.data, lambda w: _dummies_last_key(w, [w.vals[:, j] for j in idxs])
    )
    return Relation(rel.schema, arr)


def sort_by_slots(rel: Relation, key_attrs, ann_slots) -> Relation:
    """Stable order by named attributes then annotation slots (dummies
    last)."""
    idxs = [rel.col(a) for a in key_attrs]
    arr = _sort_array(
        rel.ctx,
        rel.data,
        lambda w: _dummies_last_key(
            w, [w.vals[:, j] for j in idxs] + [w.ann[:, s] for s in ann_slots]
        ),
    )
    return Relation(rel.schema, arr)


def oblivious_compact(rel: Relation, keep: int) -> Relation:
    """Move reals to the front, preserving their order, and truncate.

    Realized as a stable oblivious sort on the dummy flag (the network's
    position tie-break provides the stability).
    """
    if keep > rel.n:
        raise InvalidArgumentError(f"keep={keep} exceeds relation length {rel.n}")
    arr = _sort_array(
        rel.ctx, rel.data, lambda w: [w.dummy.astype(np.int64)], keep=keep
    )
    return Relation(rel.schema, arr)


def _last_true_index(mask: np.ndarray) -> np.ndarray:
    """For each position, index of the most recent True at or before it
    (-1 when none): the vectorized form of a tracking register."""
    idx = np.where(mask, np.arange(len(mask), dtype=np.int64), np.int64(-1))
    return np.maximum.accumulate(idx)


def _key_matches(work: TracedArray, key_idx, rows, src_rows) -> np.ndarray:
    """rows i whose key columns equal those at src_rows[i] (>= 0)."""
    ok = src_rows >= 0
    for j in key_idx:
        col = work.vals[:, j]
        ok = ok & (col == col[np.maximum(src_rows, 0)])
    return rows & ok


def _union(ctx, r: Relation, s: Relation, key_attrs, ann_k=None):
    """Build the R u S working array used by the merge-scan primitives.

    Layout: key columns first, then r payload, then s payload; tag is
    TAG_S for s rows so they sort before r rows on equal keys.
    """
    key = tuple(key_attrs)
    for a in key:
        if a not in r.schema or a not in s.schema:
            raise InvalidArgumentError(f"join attribute {a!r} missing from a schema")
    r_payload = [a for a in r.schema if a not in key]
    s_payload = [a for a in s.schema if a not in key]
    schema = key + tuple(r_payload) + tuple(s_payload)
    if ann_k is None:
        ann_k = max(r.data.ann_k, s.data.ann_k)
    nr, ns = r.n, s.n
    u = ctx.alloc(nr + ns, len(schema), ann_k)
    ctx.trace.add(ScanSeg([(r.data.id, OP_READ, 0), (u.id, OP_WRITE, 0)], nr))
    ctx.trace.add(ScanSeg([(s.data.id, OP_READ, 0), (u.id, OP_WRITE, nr)], ns))
    u.dummy[:nr] = r.data.dummy
    u.dummy[nr:] = s.data.dummy
    u.tag[:nr] = TAG_R
    u.tag[nr:] = TAG_S
    for col, a in enumerate(schema):
        if a in r.schema:
            u.vals[:nr, col] = r.data.vals[:, r.col(a)]
        if a in s.schema:
            u.vals[nr:, col] = s.data.vals[:, s.col(a)]
    if r.data.ann_k:
        u.ann[:nr, : r.data.ann_k] = r.data.ann
    if s.data.ann_k:
        u.ann[nr:, : s.data.ann_k] = s.data.ann
    u.vals[:nr][r.data.dummy] = DUMMY_CODE
    u.vals[nr:][s.data.dummy] = DUMMY_CODE
    return u, schema, len(key)


def _sort_union(ctx, u: TracedArray, nkey: int) -> TracedArray:
    """Sort a union array by (key, s-before-r, content), dummies last."""
    return _sort_array(
        ctx,
        u,
        lambda w: _dummies_last_key(w, [w.vals[:, j] for j in range(nkey)] + [w.tag]),
    )


def _merge_scan(ctx, k: TracedArray, out: TracedArray):
    """Emit the read-k / write-out scan of a merge pass."""
    ctx.trace.add(ScanSeg([(k.id, OP_READ, 0), (out.id, OP_WRITE, 0)], k.n))


def semi_join(r: Relation, s: Relation, key_attrs) -> Relation:
    """Keep each r-tuple iff some real s-tuple matches it on the key.

    Output has exactly |r| slots; filtered tuples become dummies.  An
    empty key means every real s-tuple matches.
    """
    ctx = r.ctx
    u, schema, nkey = _union(ctx, r, s, key_attrs)
    k = _sort_union(ctx, u, nkey)
    # scan register: last real s key seen so far
    is_s = (~k.dummy) & (k.tag == TAG_S)
    is_r = (~k.dummy) & (k.tag == TAG_R)
    keep = _key_matches(k, range(nkey), is_r, _last_true_index(is_s))
    out = ctx.alloc(k.n, len(r.schema), r.data.ann_k)
    _merge_scan(ctx, k, out)
    sel = np.nonzero(keep)[0]
    for col, a in enumerate(r.schema):
        out.vals[sel, col] = k.vals[sel, schema.index(a)]
    out.dummy[sel] = False
    if r.data.ann_k:
        out.ann[sel, : r.data.ann_k] = k.ann[sel, : r.data.ann_k]
    return oblivious_compact(Relation(r.schema, out), r.n)


def reduce_by_key(rel: Relation, key_attrs, weights=None, combine=np.add) -> Relation:
    """One (key, aggregate) pair per distinct real key, dummy-padded to |r|.

    The default weight of 1 per tuple with addition yields key
    multiplicities (degree information).  The scan writes a group's
    aggregate when the next group starts, plus one trailing write, so the
    staging array has |r|+1 slots before compaction.  The aggregate lands
    in annotation slot 0 of the output pairs.
    """
    ctx = rel.ctx
    key = tuple(key_attrs)
    key_idx = [rel.col(a) for a in key]
    k = _sort_array(
        ctx, rel.data, lambda w: _dummies_last_key(w, [w.vals[:, j] for j in key_idx])
    )
    n = k.n
    out = ctx.alloc(n + 1, len(key), max(1, rel.data.ann_k))
    ctx.trace.add(ScanSeg([(k.id, OP_READ, 0), (out.id, OP_WRITE, 0)], n))
    ctx.trace.add(ScanSeg([(out.id, OP_WRITE, n)], 1))
    real = ~k.dummy
    if np.any(real):
        w = (
            np.ones(n, np.int64)
            if weights is None
            else np.asarray(weights(k.vals), np.int64)
        )
        w = np.where(real, w, 0)
        prev_same = np.zeros(n, bool)
        prev_same[1:] = real[1:] & real[:-1]
        for j in key_idx:
            prev_same[1:] &= k.vals[1:, j] == k.vals[:-1, j]
        starts = np.nonzero(real & ~prev_same)[0]
        aggs = combine.reduceat(w, starts) if len(starts) else np.empty(0, np.int64)
        # group g's pair lands where group g+1 starts; the last lands at n
        dest = np.concatenate([starts[1:], [n]])
        out.dummy[dest] = False
        for col, j in enumerate(key_idx):
            out.vals[dest, col] = k.vals[starts, j]
        out.ann[dest, VALUE_SLOT] = aggs
    return oblivious_compact(Relation(key, out), rel.n)


def annotate(
    rel: Relation,
    pairs: Relation,
    key_attrs,
    out_slot: int = VALUE_SLOT,
    absent_as_zero: bool = False,
) -> Relation:
    """Attach to each real r-tuple the value of the pair matching its key.

    In the default mode unmatched tuples become dummies; in
    ``absent_as_zero`` mode they stay real with annotation 0 (degree
    semantics, used by augmentation).
    """
    ctx = rel.ctx
    key = tuple(key_attrs)
    if not 0 <= out_slot < MAX_ANN:
        raise InvalidArgumentError(f"annotation slot cap is {MAX_ANN}")
    if ctx.debug:
        preal = ~pairs.data.dummy
        keys = pairs.data.vals[preal][:, [pairs.col(a) for a in key]]
        if len(keys) != len(np.unique(keys, axis=0)):
            raise PreconditionError("annotate requires distinct real keys in pairs")
    ann_k = max(rel.data.ann_k, pairs.data.ann_k, out_slot + 1)
    u, schema, nkey = _union(ctx, rel, pairs, key, ann_k=ann_k)
    k = _sort_union(ctx, u, nkey)
    is_s = (~k.dummy) & (k.tag == TAG_S)
    is_r = (~k.dummy) & (k.tag == TAG_R)
    last_s = _last_true_index(is_s)
    matched = _key_matches(k, range(nkey), is_r, last_s)
    out = ctx.alloc(k.n, len(rel.schema), ann_k)
    _merge_scan(ctx, k, out)
    kept = is_r if absent_as_zero else matched
    sel = np.nonzero(kept)[0]
    for col, a in enumerate(rel.schema):
        out.vals[sel, col] = k.vals[sel, schema.index(a)]
    out.dummy[sel] = False
    if rel.data.ann_k:
        out.ann[sel, : rel.data.ann_k] = k.ann[sel, : rel.data.ann_k]
    out.ann[sel, out_slot] = 0
    msel = np.nonzero(matched)[0]
    out.ann[msel, out_slot] = k.ann[last_s[msel], VALUE_SLOT]
    return oblivious_compact(Relation(rel.schema, out), rel.n)


def multi_number(rel: Relation, key_attrs, out_slot: int = VALUE_SLOT) -> Relation:
    """Sort by key and number each key group's tuples 1, 2, 3, ...."""
    ctx = rel.ctx
    if not 0 <= out_slot < MAX_ANN:
        raise InvalidArgumentError(f"annotation slot cap is {MAX_ANN}")
    key_idx = [rel.col(a) for a in key_attrs]
    srt = _sort_array(
        ctx, rel.data, lambda w: _dummies_last_key(w, [w.vals[:, j] for j in key_idx])
    )
    n = srt.n
    out = ctx.alloc(n, len(rel.schema), max(rel.data.ann_k, out_slot + 1))
    _merge_scan(ctx, srt, out)
    _copy_rows(out, slice(0, n), srt, slice(0, n))
    if n:
        real = ~srt.dummy
        prev_same = np.zeros(n, bool)
        prev_same[1:] = real[1:] & real[:-1]
        for j in key_idx:
            prev_same[1:] &= srt.vals[1:, j] == srt.vals[:-1, j]
        pos = np.arange(n, dtype=np.int64)
        group_start = np.maximum.accumulate(np.where(~prev_same, pos, -1))
        out.ann[:, out_slot] = pos - group_start + 1
    return Relation(rel.schema, out)


def project(rel: Relation, attrs) -> Relation:
    """Distinct projection: sort grouping equal projections, blank
    repeats, compact.  Output has |r| slots over the projected schema."""
    ctx = rel.ctx
    attrs = tuple(attrs)
    key_idx = [rel.col(a) for a in attrs]
    srt = _sort_array(
        ctx, rel.data, lambda w: _dummies_last_key(w, [w.vals[:, j] for j in key_idx])
    )
    n = srt.n
    out = ctx.alloc(n, len(attrs), 0)
    _merge_scan(ctx, srt, out)
    if n:
        real = ~srt.dummy
        prev_same = np.zeros(n, bool)
        prev_same[1:] = real[1:] & real[:-1]
        for j in key_idx:
            prev_same[1:] &= srt.vals[1:, j] == srt.vals[:-1, j]
        sel = np.nonzero(real & ~prev_same)[0]
        for col, j in enumerate(key_idx):
            out.vals[sel, col] = srt.vals[sel, j]
        out.dummy[sel] = False
    return oblivious_compact(Relation(attrs, out), rel.n)


def intersect(r: Relation, s: Relation) -> Relation:
    """Common elements of two duplicate-free relations over one schema.

    Output has min(|r|, |s|) slots.
    """
    ctx = r.ctx
    if r.schema != s.schema:
        raise InvalidArgumentError(f"schema mismatch: {r.schema} vs {s.schema}")
    if ctx.debug:
        for side in (r, s):
            rows = side.real_rows()
            if len(rows) != len(np.unique(rows, axis=0)):
                raise PreconditionError("intersect inputs must be duplicate-free")
    u, _schema, nkey = _union(ctx, r, s, r.schema)
    k = _sort_union(ctx, u, nkey)
    n = k.n
    out = ctx.alloc(n, len(r.schema), 0)
    _merge_scan(ctx, k, out)
    if n > 1:
        real = ~k.dummy
        same = np.zeros(n, bool)
        same[1:] = real[1:] & real[:-1]
        for j in range(nkey):
            same[1:] &= k.vals[1:, j] == k.vals[:-1, j]
        # distinct inputs: an element of both sides appears exactly twice
        sel = np.nonzero(same)[0]
        out.vals[sel, : len(r.schema)] = k.vals[sel, :nkey][:, : len(r.schema)]
        out.dummy[sel] = False
    return oblivious_compact(Relation(r.schema, out), min(r.n, s.n))


def augment(rel: Relation, s_list, key_attrs, start_slot: int = 0) -> Relation:
    """Attach per-tuple join degrees against each relation in ``s_list``.

    Degree of t in S = number of real S-tuples matching t on the key;
    tuples matching nothing stay real with degree 0.  Slot start_slot + i
    receives the degree against s_list[i].
    """
    s_list = list(s_list)
    if start_slot + len(s_list) > MAX_ANN:
        raise InvalidArgumentError(
            f"augment needs {start_slot + len(s_list)} annotation slots, cap is {MAX_ANN}"
        )
    out = rel
    for i, s in enumerate(s_list):
        counts = reduce_by_key(s, key_attrs)
        out = annotate(
            out, counts, key_attrs, out_slot=start_slot + i, absent_as_zero=True
        )
    return out


def expand(
    rel: Relation, tau: int, weight_slot: int = VALUE_SLOT, site: str = "expand"
) -> Relation:
    """Replicate each real tuple by its annotated weight into exactly tau
    slots: copies contiguous, input order preserved, remainder dummy.

    Raises the AGM-violation alarm when the weights sum past tau.  Stamped
    positions are doubled so the half-integer pad positions of the
    construction stay integral: reals sit at even stamps, pads at odd
    ones, zero-weight entries at the infinite stamp.
    """
    ctx = rel.ctx
    if tau < 0:
        raise InvalidArgumentError("tau must be >= 0")
    n = rel.n
    src = rel.data
    real = ~src.dummy
    w = np.where(real, src.ann[:, weight_slot] if src.ann_k else 0, 0).astype(np.int64)
    if np.any(w < 0):
        raise InvalidArgumentError("negative expansion weight")
    total = int(w.sum())
    ctx.log_budget(site, total, tau)
    if total > tau:
        raise BudgetExceededError(
            f"{site}: expansion weight {total} exceeds the public bound tau={tau}"
        )
    ann_k = max(1, src.ann_k)
    npad = _next_pow2(n + tau)
    stamp_col = src.arity
    work = ctx.alloc(npad, src.arity + 1, ann_k)
    # phase 1: stamp each input pair with its start position
    ctx.trace.add(ScanSeg([(src.id, OP_READ, 0), (work.id, OP_WRITE, 0)], n))
    _copy_rows(work, slice(0, n), src, slice(0, n))
    prefix = np.cumsum(w) - w
    work.vals[:n, stamp_col] = np.where(real & (w > 0), 2 * (1 + prefix), INF_POS)
    work.tag[:n] = TAG_R
    # phase 2: tau pads at the half-integer stamps
    ctx.trace.add(ScanSeg([(work.id, OP_WRITE, n)], npad - n))
    work.vals[n : n + tau, stamp_col] = 2 * np.arange(1, tau + 1, dtype=np.int64) + 1
    work.tag[n : n + tau] = TAG_S
    work.vals[n + tau :, stamp_col] = INF_POS
    # phase 3: order by stamp
    _network_sort(work, [work.vals[:, stamp_col]])
    # phase 4: fill-forward scan; a pad inside the stamped range copies the
    # last real tuple read
    out = ctx.alloc(npad, src.arity, ann_k)
    _merge_scan(ctx, work, out)
    stamp = work.vals[:, stamp_col]
    is_hdr = (work.tag == TAG_R) & (stamp < INF_POS) & (~work.dummy)
    last_hdr = _last_true_index(is_hdr)
    fill = (
        (work.tag == TAG_S)
        & (stamp < INF_POS)
        & (last_hdr >= 0)
        & (stamp <= 2 * total + 1)
    )
    sel = np.nonzero(fill)[0]
    out.vals[sel] = work.vals[last_hdr[sel], : src.arity]
    out.dummy[sel] = False
    out.tag[sel] = 0
    if ann_k:
        out.ann[sel] = work.ann[last_hdr[sel]]
    return oblivious_compact(Relation(rel.schema, out), tau)
