"""Ground truth: definitional join evaluation, instance generators, and
budget-telemetry reporting.

Everything here is strategy-free — it depends only on the definition of
the natural join — so every engine strategy is validated against it
rather than against another strategy.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import InvalidArgumentError, SizeLimitError
from .hypergraph import JoinQuery, _iroot, fractional_vertex_packing

INTERMEDIATE_CAP = 10**8


@dataclass
class Instance:
    """Concrete tables for a query: one (n, arity) int64 code array per
    edge.  Relations are sets; duplicates are dropped with a warning at
    construction."""

    query: JoinQuery
    tables: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for eid, attrs in self.query.edges:
            if eid not in self.tables:
                raise InvalidArgumentError(f"instance missing relation {eid!r}")
            rows = np.asarray(self.tables[eid], np.int64)
            if rows.ndim != 2 or rows.shape[1] != len(attrs):
                raise InvalidArgumentError(
                    f"relation {eid!r}: expected arity {len(attrs)}, got shape {rows.shape}"
                )
            if np.any(rows < 0):
                raise InvalidArgumentError(f"relation {eid!r}: negative domain code")
            if len(rows):
                uniq = np.unique(rows, axis=0)
                if len(uniq) != len(rows):
                    warnings.warn(
                        f"relation {eid!r}: dropped {len(rows) - len(uniq)} duplicate tuples",
                        stacklevel=2,
                    )
                rows = uniq
            clean[eid] = rows
        self.tables = clean

    @property
    def total_size(self) -> int:
        return sum(len(t) for t in self.tables.values())

    def size_profile(self) -> dict[str, int]:
        return {eid: len(t) for eid, t in self.tables.items()}


def brute_force_join(query: JoinQuery, inst: Instance, cap=INTERMEDIATE_CAP):
    """All consistent tuple combinations, as a set of full-width tuples in
    canonical attribute order.

    Folds one relation at a time, keeping only consistent assignments; a
    run materializing more than ``cap`` partial assignments aborts.
    """
    attrs = query.attributes
    pos = {a: i for i, a in enumerate(attrs)}
    partials = [tuple([None] * len(attrs))]
    bound: set[str] = set()
    for eid, eattrs in query.edges:
        rows = inst.tables[eid]
        shared = [a for a in eattrs if a in bound]
        new = [a for a in eattrs if a not in bound]
        index: dict[tuple, list] = {}
        for row in rows:
            key = tuple(int(row[eattrs.index(a)]) for a in shared)
            index.setdefault(key, []).append(
                tuple(int(row[eattrs.index(a)]) for a in new)
            )
        next_partials = []
        for p in partials:
            key = tuple(p[pos[a]] for a in shared)
            for ext in index.get(key, ()):
                q = list(p)
                for a, v in zip(new, ext):
                    q[pos[a]] = v
                next_partials.append(tuple(q))
                if len(next_partials) > cap:
                    raise SizeLimitError(
                        f"intermediate assignment count exceeded {cap}"
                    )
        partials = next_partials
        bound.update(eattrs)
    return set(partials)


def _distinct_rows(rng, n, domains):
    """n distinct tuples with column j drawn from [0, domains[j])."""
    space = 1
    for d in domains:
        space *= int(d)
    n = min(n, space)
    seen = set()
    out = []
    attempts = 0
    while len(out) < n and attempts < 200:
        draw = np.column_stack(
            [rng.integers(0, d, size=n * 2) for d in domains]
        )
        for row in map(tuple, draw.tolist()):
            if row not in seen:
                seen.add(row)
                out.append(row)
                if len(out) == n:
                    break
        attempts += 1
    return np.array(out[:n], np.int64).reshape(-1, len(domains))


def _zipf_weights(domain, alpha):
    w = 1.0 / np.arange(1, domain + 1, dtype=float) ** alpha
    return w / w.sum()


def gen_instance(
    query: JoinQuery, profile: str, sizes, seed: int = 0, alpha: float = 1.1
) -> Instance:
    """Deterministic instance generator.

    Profiles:
      uniform      — per-attribute domains sized for moderate join rates.
      skewed       — join-key popularity follows a Zipf(alpha) law.
      heavy-hitter — the degree-leakage pair shape: even seeds give all
                     distinct join keys, odd seeds put every tuple on one
                     join key; size profiles are identical across seeds.
      agm-extremal — full product construction with per-attribute domain
                     sizes m**v(x) (v an optimal fractional vertex
                     packing), realizing the worst-case output bound.
    """
    if isinstance(sizes, int):
        sizes = {eid: sizes for eid in query.edge_ids}
    missing = set(query.edge_ids) - set(sizes)
    if missing:
        raise InvalidArgumentError(f"sizes missing for edges {sorted(missing)}")
    if any(v <= 0 for v in sizes.values()):
        raise InvalidArgumentError("sizes must be positive")
    rng = np.random.default_rng(seed)
    tables: dict[str, np.ndarray] = {}

    if profile == "agm-extremal":
        packing = fractional_vertex_packing(query)
        m = max(sizes.values())
        dom = {}
        for x in query.attributes:
            v = Fraction(packing[x])
            dom[x] = max(1, _iroot(m**v.numerator, v.denominator))
        for eid, eattrs in query.edges:
            grids = np.meshgrid(*[np.arange(dom[a]) for a in eattrs], indexing="ij")
            tables[eid] = np.column_stack([g.reshape(-1) for g in grids]).astype(
                np.int64
            )
        return Instance(query, tables)

    counts: dict[str, int] = {}
    for _eid, eattrs in query.edges:
        for a in eattrs:
            counts[a] = counts.get(a, 0) + 1
    shared = {a for a, c in counts.items() if c > 1}

    if profile == "heavy-hitter":
        flat = seed % 2 == 0
        for eid, eattrs in query.edges:
            m = sizes[eid]
            cols = []
            for a in eattrs:
                if a in shared and not flat:
                    cols.append(np.zeros(m, np.int64))
                else:
                    cols.append(np.arange(m, dtype=np.int64))
            tables[eid] = np.column_stack(cols)
        return Instance(query, tables)

    dom = {}
    for x in query.attributes:
        best = 2
        for eid, eattrs in query.edges:
            if x in eattrs:
                best = max(best, int(np.ceil(sizes[eid] ** (1.0 / len(eattrs)))))
        dom[x] = best
    for eid, eattrs in query.edges:
        m = sizes[eid]
        domains = [dom[a] for a in eattrs]
        if profile == "uniform":
            tables[eid] = _distinct_rows(rng, m, domains)
        elif profile == "skewed":
            seen = set()
            rows = []
            for _ in range(40 * m):
                row = tuple(
                    int(rng.choice(d, p=_zipf_weights(d, alpha))) for d in domains
                )
                if row not in seen:
                    seen.add(row)
                    rows.append(row)
                    if len(rows) == m:
                        break
            tables[eid] = np.array(rows, np.int64).reshape(-1, len(domains))
        else:
            raise InvalidArgumentError(f"unknown profile {profile!r}")
    return Instance(query, tables)


@dataclass
class BudgetReport:
    rows: list
    violations: int
    max_ratio: float  # max true_size / tau over the run (0 when no calls)

    def __str__(self):
        lines = [f"{'site':40s} {'true':>10s} {'tau':>10s} {'slack':>10s}"]
        for rec in self.rows:
            lines.append(
                f"{rec.site:40s} {rec.true_size:10d} {rec.tau:10d} {rec.slack:10d}"
            )
        lines.append(
            f"violations={self.violations} max_true/tau={self.max_ratio:.4f}"
        )
        return "\n".join(lines)


def check_budget_report(budget_log) -> BudgetReport:
    """Summarize expansion telemetry: every recorded bound must dominate
    the true size it covered."""
    violations = sum(1 for rec in budget_log if rec.true_size > rec.tau)
    ratios = [rec.true_size / rec.tau for rec in budget_log if rec.tau > 0]
    return BudgetReport(
        rows=list(budget_log),
        violations=violations,
        max_ratio=max(ratios, default=0.0),
    )
