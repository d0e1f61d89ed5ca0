"""Trusted/untrusted memory abstraction.

Untrusted memory is a set of traced arrays; every element access lands in
the engine context's access trace.  A trace is stored as a sequence of
*segments* — either raw event records or parametric patterns (scans,
sorting networks, blocked nested loops) whose expansion to the exact event
stream is a fixed function of their parameters.  Pattern segments are what
make worst-case-size runs affordable: the engine emits a handful of
descriptors instead of billions of records, and the event stream can still
be expanded on demand for replay or export.

The trace digest is a SHA-256 over the canonical segment serialization.
The engine always produces the same segmentation for the same (query,
size profile, engine version), so digest equality certifies event-stream
equality for engine-produced traces; comparisons across representations
(e.g. a re-imported event file) fall back to exact event comparison.

Scalar working state inside primitives lives in `Registers`, a namespace
capped at 64 live names, which is the debug-mode stand-in for the O(1)
trusted registers the model allows.  Array contents are computed with
vectorized mirrors of the per-element scan semantics; the scans' event
patterns are emitted independently of how the contents are computed.
"""

from __future__ import annotations

import hashlib
import os
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._kernels import LruState, bitonic_pass, nested_loop_order
from .errors import BudgetOverflowError, InvalidArgumentError, QueryFormatError

OP_READ = 0
OP_WRITE = 1

DUMMY_CODE = np.int64(1) << np.int64(62)
DEFAULT_SLOT_CAP = 1 << 27
_EXPAND_CHUNK = 1 << 20

_RECORD_DTYPE = np.dtype([("id", "<u4"), ("idx", "<u8"), ("op", "u1")])


@dataclass(frozen=True)
class AccessEvent:
    array_id: int
    index: int
    op: int

    def __str__(self):
        kind = "R" if self.op == OP_READ else "W"
        return f"{kind} a{self.array_id}[{self.index}]"


@dataclass(frozen=True)
class CacheParams:
    """Ideal-cache geometry: capacity M and block size B, in elements."""

    m: int
    b: int

    def __post_init__(self):
        if self.b < 1:
            raise InvalidArgumentError("block size B must be >= 1")
        if self.m < self.b:
            raise InvalidArgumentError("cache must hold at least one block (M >= B)")
        if self.m < 2 * self.b:
            warnings.warn(
                f"M={self.m} < 2B={2 * self.b}: below the tall-cache direction",
                stacklevel=2,
            )

    @property
    def n_blocks(self) -> int:
        return self.m // self.b


def _pack_u32(x):
    return struct.pack("<I", x)


def _pack_u64(x):
    return struct.pack("<Q", x)


class ScanSeg:
    """Interleaved linear scans: for i in [length): one event per channel.

    A channel is (array_id, op, base): event index is base + i.  This
    covers read scans, write scans, copies and zip merges.
    """

    __slots__ = ("channels", "length")
    kind = 1

    def __init__(self, channels, length):
        self.channels = tuple(channels)
        self.length = int(length)

    @property
    def n_events(self):
        return self.length * len(self.channels)

    def serialize(self):
        out = [b"\x01", _pack_u64(self.length), bytes([len(self.channels)])]
        for aid, op, base in self.channels:
            out += [_pack_u32(aid), bytes([op]), _pack_u64(base)]
        return b"".join(out)

    def expand(self, chunk=_EXPAND_CHUNK):
        c = len(self.channels)
        if c == 0 or self.length == 0:
            return
        aids = np.array([ch[0] for ch in self.channels], np.uint32)
        ops = np.array([ch[1] for ch in self.channels], np.uint8)
        bases = np.array([ch[2] for ch in self.channels], np.uint64)
        step = max(1, chunk // c)
        for lo in range(0, self.length, step):
            hi = min(self.length, lo + step)
            idx = np.arange(lo, hi, dtype=np.uint64)
            block = idx[:, None] + bases[None, :]
            yield (
                np.tile(aids, hi - lo),
                block.reshape(-1),
                np.tile(ops, hi - lo),
            )


class BitonicSeg:
    """The comparator-exchange pattern of a bitonic network on n slots
    (n a power of two): per comparator, read lo, read hi, write lo,
    write hi; stages in (k asc, j desc) order, comparators by ascending
    low index."""

    __slots__ = ("array_id", "n")
    kind = 2

    def __init__(self, array_id, n):
        assert n >= 1 and (n & (n - 1)) == 0
        self.array_id = int(array_id)
        self.n = int(n)

    @staticmethod
    def comparator_count(n):
        if n <= 1:
            return 0
        k = n.bit_length() - 1
        return (n // 2) * (k * (k + 1) // 2)

    @property
    def n_events(self):
        return 4 * self.comparator_count(self.n)

    def serialize(self):
        return b"\x02" + _pack_u32(self.array_id) + _pack_u64(self.n)

    def expand(self, chunk=_EXPAND_CHUNK):
        n = self.n
        if n <= 1:
            return
        base = np.arange(n, dtype=np.uint64)
        aid = np.uint32(self.array_id)
        k = 2
        while k <= n:
            j = k >> 1
            while j > 0:
                lows = base[(base & j) == 0]
                highs = lows | np.uint64(j)
                m = len(lows)
                idx = np.empty(4 * m, np.uint64)
                idx[0::4] = lows
                idx[1::4] = highs
                idx[2::4] = lows
                idx[3::4] = highs
                ops = np.empty(4 * m, np.uint8)
                ops[0::4] = OP_READ
                ops[1::4] = OP_READ
                ops[2::4] = OP_WRITE
                ops[3::4] = OP_WRITE
                yield np.full(4 * m, aid, np.uint32), idx, ops
                j >>= 1
            k <<= 1


class NestedLoopSeg:
    """Blocked-recursive pair enumeration: per visited pair, read r, read
    s, write the next output slot."""

    __slots__ = ("r_id", "s_id", "out_id", "nr", "ns")
    kind = 3

    def __init__(self, r_id, s_id, out_id, nr, ns):
        self.r_id = int(r_id)
        self.s_id = int(s_id)
        self.out_id = int(out_id)
        self.nr = int(nr)
        self.ns = int(ns)

    @property
    def n_events(self):
        return 3 * self.nr * self.ns

    def serialize(self):
        return (
            b"\x03"
            + _pack_u32(self.r_id)
            + _pack_u32(self.s_id)
            + _pack_u32(self.out_id)
            + _pack_u64(self.nr)
            + _pack_u64(self.ns)
        )

    def expand(self, chunk=_EXPAND_CHUNK):
        if self.nr == 0 or self.ns == 0:
            return
        ri, si = nested_loop_order(self.nr, self.ns)
        total = len(ri)
        aids = np.array([self.r_id, self.s_id, self.out_id], np.uint32)
        step = max(1, chunk // 3)
        for lo in range(0, total, step):
            hi = min(total, lo + step)
            m = hi - lo
            idx = np.empty(3 * m, np.uint64)
            idx[0::3] = ri[lo:hi].astype(np.uint64)
            idx[1::3] = si[lo:hi].astype(np.uint64)
            idx[2::3] = np.arange(lo, hi, dtype=np.uint64)
            ops = np.empty(3 * m, np.uint8)
            ops[0::3] = OP_READ
            ops[1::3] = OP_READ
            ops[2::3] = OP_WRITE
            yield np.repeat(aids[None, :], m, axis=0).reshape(-1), idx, ops


class RawSeg:
    """Explicit event records (used by data-dependent baselines and for
    re-imported trace files)."""

    __slots__ = ("ids", "idxs", "ops")
    kind = 4

    def __init__(self, ids, idxs, ops):
        self.ids = np.asarray(ids, np.uint32)
        self.idxs = np.asarray(idxs, np.uint64)
        self.ops = np.asarray(ops, np.uint8)

    @property
    def n_events(self):
        return len(self.ids)

    def serialize(self):
        rec = np.empty(len(self.ids), _RECORD_DTYPE)
        rec["id"] = self.ids
        rec["idx"] = self.idxs
        rec["op"] = self.ops
        return b"\x04" + _pack_u64(len(self.ids)) + rec.tobytes()

    def expand(self, chunk=_EXPAND_CHUNK):
        for lo in range(0, len(self.ids), chunk):
            hi = min(len(self.ids), lo + chunk)
            yield self.ids[lo:hi], self.idxs[lo:hi], self.ops[lo:hi]


class AccessTrace:
    """Ordered untrusted-memory access sequence, stored as segments."""

    def __init__(self, segments=None):
        self.segments = list(segments or [])

    def add(self, seg):
        self.segments.append(seg)

    @property
    def n_events(self) -> int:
        return sum(s.n_events for s in self.segments)

    @property
    def digest(self) -> str:
        h = hashlib.sha256(b"OJOIN-TRACE-v1")
        for seg in self.segments:
            h.update(seg.serialize())
        return h.hexdigest()

    def iter_chunks(self, chunk=_EXPAND_CHUNK):
        for seg in self.segments:
            yield from seg.expand(chunk)

    def events(self):
        """Materialize all events (tests / small traces only)."""
        out = []
        for ids, idxs, ops in self.iter_chunks():
            out.extend(
                AccessEvent(int(a), int(i), int(o))
                for a, i, o in zip(ids, idxs, ops)
            )
        return out

    def export(self, path, max_events=DEFAULT_SLOT_CAP):
        """Write the binary record stream plus a digest sidecar."""
        total = self.n_events
        if total > max_events:
            raise BudgetOverflowError(
                f"trace has {total} events, above the export cap {max_events}"
            )
        with open(path, "wb") as f:
            for ids, idxs, ops in self.iter_chunks():
                rec = np.empty(len(ids), _RECORD_DTYPE)
                rec["id"] = ids
                rec["idx"] = idxs
                rec["op"] = ops
                f.write(rec.tobytes())
        with open(str(path) + ".digest", "w") as f:
            f.write(f"digest={self.digest}\n")

    @staticmethod
    def load(path):
        raw = np.fromfile(path, dtype=_RECORD_DTYPE)
        if raw.size == 0 and os.path.getsize(path) % _RECORD_DTYPE.itemsize != 0:
            raise QueryFormatError(f"{path}: not a valid trace file")
        return AccessTrace(
            [RawSeg(raw["id"].copy(), raw["idx"].copy(), raw["op"].copy())]
        )


@dataclass(frozen=True)
class Divergence:
    position: int
    left: AccessEvent | None
    right: AccessEvent | None

    def __str__(self):
        return (
            f"first divergence at event {self.position}: "
            f"{self.left or '<end>'} vs {self.right or '<end>'}"
        )


def _first_event_at(trace, position):
    seen = 0
    for ids, idxs, ops in trace.iter_chunks():
        if position < seen + len(ids):
            k = position - seen
            return AccessEvent(int(ids[k]), int(idxs[k]), int(ops[k]))
        seen += len(ids)
    return None


def traces_equal(t1: AccessTrace, t2: AccessTrace):
    """Exact event-sequence equality plus a first-divergence report.

    Returns (equal, divergence-or-None).  Equal canonical segmentations
    short-circuit; anything else is compared event by event.
    """
    if [s.serialize() for s in t1.segments] == [s.serialize() for s in t2.segments]:
        return True, None

    def stream(t):
        for ids, idxs, ops in t.iter_chunks():
            rec = np.empty(len(ids), _RECORD_DTYPE)
            rec["id"] = ids
            rec["idx"] = idxs
            rec["op"] = ops
            yield rec

    empty = np.empty(0, _RECORD_DTYPE)
    pos = 0
    buf1, buf2 = empty, empty
    it1, it2 = stream(t1), stream(t2)
    exhausted1 = exhausted2 = False
    while True:
        while len(buf1) == 0 and not exhausted1:
            nxt = next(it1, None)
            if nxt is None:
                exhausted1 = True
            else:
                buf1 = nxt
        while len(buf2) == 0 and not exhausted2:
            nxt = next(it2, None)
            if nxt is None:
                exhausted2 = True
            else:
                buf2 = nxt
        if len(buf1) == 0 or len(buf2) == 0:
            if len(buf1) == 0 and len(buf2) == 0:
                return True, None
            return False, Divergence(
                pos, _first_event_at(t1, pos), _first_event_at(t2, pos)
            )
        m = min(len(buf1), len(buf2))
        a, b = buf1[:m], buf2[:m]
        neq = np.nonzero(a != b)[0]
        if len(neq):
            p = pos + int(neq[0])
            return False, Divergence(p, _first_event_at(t1, p), _first_event_at(t2, p))
        pos += m
        buf1, buf2 = buf1[m:], buf2[m:]


def simulate_cache(trace: AccessTrace, params: CacheParams) -> int:
    """Replay a trace through a fully-associative LRU ideal cache.

    Block addresses are (array-id, index // B); every array starts a new
    block.  Returns the number of misses, i.e. block transfers.
    """
    lru = LruState(params.n_blocks)
    b = np.uint64(params.b)
    for ids, idxs, _ops in trace.iter_chunks():
        keys = (ids.astype(np.int64) << np.int64(34)) | (idxs // b).astype(np.int64)
        lru.feed(keys)
    return lru.misses


@dataclass(frozen=True)
class Tuple:
    """Scalar view of one array slot: fixed-arity domain codes, the dummy
    marker, auxiliary annotation slots and a free tag word."""

    values: tuple[int, ...]
    dummy: bool = False
    ann: tuple[int, ...] = ()
    tag: int = 0


class Registers:
    """Debug-mode counter for trusted-memory locals.

    Primitives keep their scalar state as attributes here; exceeding the
    cap means the O(1)-registers discipline was broken.
    """

    _LIMIT = 64

    def __init__(self):
        object.__setattr__(self, "_names", set())

    def __setattr__(self, name, value):
        names = object.__getattribute__(self, "_names")
        names.add(name)
        if len(names) > self._LIMIT:
            raise RuntimeError(f"more than {self._LIMIT} live trusted registers")
        object.__setattr__(self, name, value)


@dataclass
class BudgetRecord:
    """One expansion's public bound vs the true size it had to hold."""

    site: str
    true_size: int
    tau: int

    @property
    def slack(self) -> int:
        return self.tau - self.true_size


class TracedArray:
    """Fixed-length array of tuple slots in untrusted memory.

    Element accesses through read()/write() emit one event each.  Bulk
    primitives access the columns directly and record their access
    patterns as trace segments; contents of freshly allocated arrays are
    all-dummy.
    """

    def __init__(self, ctx, array_id, length, arity, ann_k=0):
        self.ctx = ctx
        self.id = array_id
        self.n = int(length)
        self.arity = int(arity)
        self.ann_k = int(ann_k)
        self.vals = np.full((self.n, self.arity), DUMMY_CODE, np.int64)
        self.dummy = np.ones(self.n, bool)
        self.tag = np.zeros(self.n, np.int64)
        self.ann = np.zeros((self.n, self.ann_k), np.int64)

    def _event(self, index, op):
        if not 0 <= index < self.n:
            raise IndexError(f"array {self.id}: index {index} out of range [0,{self.n})")
        self.ctx.trace.add(
            RawSeg(
                np.array([self.id], np.uint32),
                np.array([index], np.uint64),
                np.array([op], np.uint8),
            )
        )

    def read(self, index: int) -> Tuple:
        self._event(index, OP_READ)
        return Tuple(
            values=tuple(int(v) for v in self.vals[index]),
            dummy=bool(self.dummy[index]),
            ann=tuple(int(v) for v in self.ann[index]),
            tag=int(self.tag[index]),
        )

    def write(self, index: int, t: Tuple):
        self._event(index, OP_WRITE)
        if len(t.values) != self.arity:
            raise InvalidArgumentError(
                f"arity mismatch: slot holds {self.arity}, tuple has {len(t.values)}"
            )
        self.vals[index] = t.values
        self.dummy[index] = t.dummy
        self.tag[index] = t.tag
        ann = list(t.ann)[: self.ann_k]
        self.ann[index, : len(ann)] = ann


class EngineContext:
    """Allocator plus active trace; strictly single-threaded.

    Independent contexts share nothing and may run concurrently.
    """

    def __init__(self, debug=True, slot_cap=None):
        if slot_cap is None:
            slot_cap = int(os.environ.get("OJOIN_SLOT_CAP", DEFAULT_SLOT_CAP))
        self.debug = debug
        self.slot_cap = slot_cap
        self.trace = AccessTrace()
        self.budget_log: list[BudgetRecord] = []
        self._next_id = 0
        self.slots_allocated = 0

    def alloc(self, length, arity, ann_k=0) -> TracedArray:
        if length < 0:
            raise InvalidArgumentError("length must be >= 0")
        self.slots_allocated += int(length)
        if self.slots_allocated > self.slot_cap:
            raise BudgetOverflowError(
                f"slot cap exceeded: {self.slots_allocated} > {self.slot_cap} "
                "(raise OJOIN_SLOT_CAP to allow larger runs)"
            )
        arr = TracedArray(self, self._next_id, length, arity, ann_k)
        self._next_id += 1
        return arr

    def registers(self) -> Registers:
        return Registers()

    def log_budget(self, site: str, true_size: int, tau: int):
        self.budget_log.append(BudgetRecord(site, int(true_size), int(tau)))
