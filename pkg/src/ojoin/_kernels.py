"""Hot loops: bitonic comparator network and LRU cache replay.

Numba-jitted when available; plain-Python fallbacks keep the package
importable without a working JIT (slow, but correct).
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit
    from numba.typed import Dict as NumbaDict
    from numba.core import types as _nbtypes

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


@njit(cache=True)
def bitonic_pass(a):
    """Run the full bitonic network in place on int64 keys.

    Comparator visit order is (k ascending, j descending, low index
    ascending), identical to the order in which trace events are emitted
    for the matching sort segment.  Low indices i of stage (k, j) are
    exactly those with (i & j) == 0, i.e. blocks of j starting at
    multiples of 2j.
    """
    n = a.shape[0]
    k = 2
    while k <= n:
        j = k >> 1
        while j > 0:
            base = 0
            while base < n:
                if (base & k) == 0:  # ascending region
                    for i in range(base, base + j):
                        x = a[i]
                        y = a[i + j]
                        if x > y:
                            a[i] = y
                            a[i + j] = x
                else:
                    for i in range(base, base + j):
                        x = a[i]
                        y = a[i + j]
                        if x < y:
                            a[i] = y
                            a[i + j] = x
                base += j << 1
            j >>= 1
        k <<= 1


@njit(cache=True)
def nested_loop_order(nr, ns):
    """Visit order of the cache-agnostic blocked nested loop.

    Recursively halves the larger side (ties split the first side); the
    1x1 base case emits one (r, s) pair.  Returns the r- and s-indices
    of the pairs in visit order.
    """
    total = nr * ns
    ri = np.empty(total, np.int64)
    si = np.empty(total, np.int64)
    # DFS over (r0, r1, s0, s1); depth <= log2(nr) + log2(ns) + 2
    stack = np.empty((160, 4), np.int64)
    stack[0, 0] = 0
    stack[0, 1] = nr
    stack[0, 2] = 0
    stack[0, 3] = ns
    top = 0
    out = 0
    while top >= 0:
        r0 = stack[top, 0]
        r1 = stack[top, 1]
        s0 = stack[top, 2]
        s1 = stack[top, 3]
        top -= 1
        nr_ = r1 - r0
        ns_ = s1 - s0
        if nr_ == 0 or ns_ == 0:
            continue
        if nr_ == 1 and ns_ == 1:
            ri[out] = r0
            si[out] = s0
            out += 1
            continue
        if nr_ >= ns_:
            mid = r0 + nr_ // 2
            top += 1
            stack[top, 0] = mid
            stack[top, 1] = r1
            stack[top, 2] = s0
            stack[top, 3] = s1
            top += 1
            stack[top, 0] = r0
            stack[top, 1] = mid
            stack[top, 2] = s0
            stack[top, 3] = s1
        else:
            mid = s0 + ns_ // 2
            top += 1
            stack[top, 0] = r0
            stack[top, 1] = r1
            stack[top, 2] = mid
            stack[top, 3] = s1
            top += 1
            stack[top, 0] = r0
            stack[top, 1] = r1
            stack[top, 2] = s0
            stack[top, 3] = mid
    return ri, si


if HAVE_NUMBA:

    @njit(cache=True)
    def _lru_chunk(keys, table, order_key, order_prev, order_next, state):
        """Replay one chunk of block keys through a fully-associative LRU.

        ``table`` maps block key -> slot.  Slots [0, cap) hold blocks;
        slot cap is the head sentinel, cap+1 the tail sentinel.  ``state``
        is (n_resident, misses, cap).
        """
        cap = state[2]
        head = cap
        tail = cap + 1
        for key in keys:
            if key in table:
                slot = table[key]
                # unlink
                order_next[order_prev[slot]] = order_next[slot]
                order_prev[order_next[slot]] = order_prev[slot]
            else:
                state[1] += 1
                if state[0] == cap:
                    victim = order_prev[tail]
                    order_next[order_prev[victim]] = tail
                    order_prev[tail] = order_prev[victim]
                    del table[order_key[victim]]
                    slot = victim
                else:
                    slot = state[0]
                    state[0] += 1
                table[key] = slot
                order_key[slot] = key
            # link at head (most recent)
            first = order_next[head]
            order_next[head] = slot
            order_prev[slot] = head
            order_next[slot] = first
            order_prev[first] = slot

    class LruState:
        """Fully-associative LRU cache replayer (numba-backed)."""

        def __init__(self, capacity_blocks: int):
            cap = int(capacity_blocks)
            self.table = NumbaDict.empty(_nbtypes.int64, _nbtypes.int64)
            self.order_key = np.zeros(cap + 2, np.int64)
            self.order_prev = np.zeros(cap + 2, np.int64)
            self.order_next = np.zeros(cap + 2, np.int64)
            # head sentinel at cap, tail at cap+1
            self.order_next[cap] = cap + 1
            self.order_prev[cap + 1] = cap
            self.state = np.array([0, 0, cap], np.int64)

        def feed(self, keys: np.ndarray):
            if len(keys):
                _lru_chunk(
                    keys.astype(np.int64, copy=False),
                    self.table,
                    self.order_key,
                    self.order_prev,
                    self.order_next,
                    self.state,
                )

        @property
        def misses(self) -> int:
            return int(self.state[1])

else:  # pragma: no cover

    from collections import OrderedDict

    class LruState:
        def __init__(self, capacity_blocks: int):
            self.cap = int(capacity_blocks)
            self.resident = OrderedDict()
            self._misses = 0

        def feed(self, keys: np.ndarray):
            resident = self.resident
            for key in keys.tolist():
                if key in resident:
                    resident.move_to_end(key)
                else:
                    self._misses += 1
                    if len(resident) == self.cap:
                        resident.popitem(last=False)
                    resident[key] = True

        @property
        def misses(self) -> int:
            return self._misses
