"""Planning-layer tests: restriction, covers, budgets, decompositions.

Expected values here are either worked by hand from the definitions or
recomputed by tiny independent oracles kept local to this file.
"""

import itertools
import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ojoin.errors import (
    BudgetOverflowError,
    GhdInvalidError,
    InvalidArgumentError,
    SizeLimitError,
)
from ojoin.hypergraph import (
    GHD,
    JoinQuery,
    edges_containing,
    fractional_edge_cover,
    fractional_vertex_packing,
    integral_edge_cover,
    power_budget,
    restrict_query,
    search_ghd,
    validate_ghd,
)
from ojoin.queries import (
    boat_query,
    chain_query,
    cycle_query,
    loomis_whitney_query,
    star_query,
    triangle_query,
)


def brute_min_cover_total(query, fractional):
    """LP oracle: grid-search over k/2 weights (enough for the small test
    queries, whose optimal covers are half-integral)."""
    ids = query.edge_ids
    values = [Fraction(0), Fraction(1, 2), Fraction(1)] if fractional else [0, 1]
    best = None
    for combo in itertools.product(values, repeat=len(ids)):
        w = dict(zip(ids, combo))
        ok = all(
            sum(w[e] for e in edges_containing(query, x)) >= 1 for x in query.attributes
        )
        if ok:
            total = sum(combo)
            best = total if best is None else min(best, total)
    return best


class TestRestrict:
    def test_triangle_pair_subset(self):
        q = triangle_query()
        r = restrict_query(q, {"x1", "x2"})
        got = {eid: set(attrs) for eid, attrs in r.edges}
        assert got == {"R1": {"x2"}, "R2": {"x1"}, "R3": {"x1", "x2"}}

    def test_identity(self):
        q = triangle_query()
        assert restrict_query(q, q.attributes) == q

    def test_chain_shared_attr(self):
        q = JoinQuery(("x1", "x2", "x3"), (("R", ("x1", "x2")), ("S", ("x2", "x3"))))
        r = restrict_query(q, {"x2"})
        assert [set(a) for _, a in r.edges] == [{"x2"}, {"x2"}]

    def test_empty_subset_rejected(self):
        with pytest.raises(InvalidArgumentError):
            restrict_query(triangle_query(), set())

    def test_idempotent(self):
        q = boat_query(2)
        s = {"x1", "x2"}
        once = restrict_query(q, s)
        assert restrict_query(once, s) == once


class TestEdgesContaining:
    def test_triangle_x1(self):
        assert edges_containing(triangle_query(), "x1") == ("R2", "R3")

    def test_single_edge(self):
        q = JoinQuery(("a",), (("E", ("a",)),))
        assert edges_containing(q, "a") == ("E",)

    def test_loomis_whitney_4(self):
        q = loomis_whitney_query(4)
        hits = edges_containing(q, "x1")
        assert len(hits) == 3
        # the only edge missing x1 is the complement of {x1}
        (missing,) = set(q.edge_ids) - set(hits)
        assert set(q.edge_attrs(missing)) == {"x2", "x3", "x4"}

    def test_unknown_attribute(self):
        with pytest.raises(InvalidArgumentError):
            edges_containing(triangle_query(), "zz")


class TestCovers:
    def test_triangle_fractional(self):
        cover = fractional_edge_cover(triangle_query())
        assert cover.total == Fraction(3, 2)
        assert all(w == Fraction(1, 2) for w in cover.weights.values())

    def test_triangle_integral(self):
        assert integral_edge_cover(triangle_query()).total == 2

    def test_single_edge_total_one(self):
        q = JoinQuery(("a", "b"), (("E", ("a", "b")),))
        assert fractional_edge_cover(q).total == 1
        assert integral_edge_cover(q).total == 1

    @pytest.mark.parametrize("k", [4, 6])
    def test_even_cycle(self, k):
        assert fractional_edge_cover(cycle_query(k)).total == Fraction(k, 2)

    def test_boat(self):
        q = boat_query(2)
        assert fractional_edge_cover(q).total == 2
        assert integral_edge_cover(q).total == 2

    def test_two_edge_chain_integral(self):
        q = JoinQuery(("x1", "x2", "x3"), (("R", ("x1", "x2")), ("S", ("x2", "x3"))))
        assert integral_edge_cover(q).total == 2

    @pytest.mark.parametrize(
        "query",
        [
            triangle_query(),
            cycle_query(4),
            cycle_query(5),
            loomis_whitney_query(3),
            loomis_whitney_query(4),
            chain_query(3),
            boat_query(2),
            star_query(3),
        ],
        ids=lambda q: "|".join(q.edge_ids),
    )
    def test_cover_verifies_and_dominates(self, query):
        frac = fractional_edge_cover(query)
        integ = integral_edge_cover(query)
        assert frac.verify(query)
        assert integ.verify(query)
        assert frac.total <= integ.total
        oracle = brute_min_cover_total(query, fractional=True)
        assert frac.total <= oracle

    def test_lp_matches_grid_oracle(self):
        for query in [triangle_query(), cycle_query(4), chain_query(3), star_query(3)]:
            assert fractional_edge_cover(query).total == brute_min_cover_total(
                query, fractional=True
            )
            assert integral_edge_cover(query).total == brute_min_cover_total(
                query, fractional=False
            )

    def test_vertex_packing_duality(self):
        for query in [triangle_query(), cycle_query(4), loomis_whitney_query(3)]:
            packing = fractional_vertex_packing(query)
            assert sum(packing.values()) == fractional_edge_cover(query).total


class TestPowerBudget:
    def test_exact_power(self):
        assert power_budget(16, Fraction(3, 2)) == 64

    def test_ceiling(self):
        # ceil(10 * sqrt(10)) via the integer-root oracle
        assert math.isqrt(1000) ** 2 < 1000
        assert power_budget(10, Fraction(3, 2)) == 32

    def test_zero_exponent(self):
        for n in (1, 7, 10**9):
            assert power_budget(n, Fraction(0)) == 1

    def test_overflow(self):
        with pytest.raises(BudgetOverflowError):
            power_budget(2**40, Fraction(2))

    @given(
        n=st.integers(min_value=1, max_value=5000),
        p=st.integers(min_value=0, max_value=7),
        q=st.integers(min_value=1, max_value=4),
    )
    @settings(max_examples=200, deadline=None)
    def test_ceiling_property(self, n, p, q):
        exp = Fraction(p, q)
        try:
            got = power_budget(n, exp)
        except BudgetOverflowError:
            return
        # got = ceil(n^(p/q)): got >= n^(p/q) with margin < 1, exactly
        assert got**q >= n**p
        if p > 0:
            assert (got - 1) ** q < n**p

    def test_monotone(self):
        exps = [Fraction(1), Fraction(3, 2), Fraction(5, 2)]
        for e in exps:
            vals = [power_budget(n, e) for n in range(1, 40)]
            assert vals == sorted(vals)
        for n in (3, 17, 100):
            vals = [power_budget(n, e) for e in exps]
            assert vals == sorted(vals)


class TestGhd:
    def test_triangle_single_bag(self):
        q = triangle_query()
        d = GHD(("u",), {"u": None}, {"u": ("x1", "x2", "x3")}, "u")
        assert validate_ghd(q, d) == Fraction(3, 2)

    def test_chain_per_edge_bags(self):
        q = chain_query(3)
        d = GHD(
            ("u1", "u2", "u3"),
            {"u1": None, "u2": "u1", "u3": "u2"},
            {"u1": ("x1", "x2"), "u2": ("x2", "x3"), "u3": ("x3", "x4")},
            "u1",
        )
        assert validate_ghd(q, d) == 1

    def test_missing_edge_rejected(self):
        q = triangle_query()
        d = GHD(("u",), {"u": None}, {"u": ("x1", "x2")}, "u")
        with pytest.raises(GhdInvalidError):
            validate_ghd(q, d)

    def test_disconnected_attribute_rejected(self):
        q = chain_query(3)
        d = GHD(
            ("u1", "u2", "u3"),
            {"u1": None, "u2": "u1", "u3": "u2"},
            # x2 occurs in u1 and u3 but not the middle node
            {"u1": ("x1", "x2"), "u2": ("x3",), "u3": ("x2", "x3", "x4")},
            "u1",
        )
        with pytest.raises(GhdInvalidError):
            validate_ghd(q, d)

    def test_search_chain(self):
        q = chain_query(3)
        d = search_ghd(q)
        assert validate_ghd(q, d) == 1

    def test_search_triangle(self):
        q = triangle_query()
        d = search_ghd(q)
        assert validate_ghd(q, d) == Fraction(3, 2)
        assert any(set(d.bags[u]) == {"x1", "x2", "x3"} for u in d.nodes)

    def test_search_single_edge(self):
        q = JoinQuery(("a", "b"), (("E", ("a", "b")),))
        d = search_ghd(q)
        assert len(d.nodes) == 1
        assert validate_ghd(q, d) == 1

    def test_search_cap(self):
        attrs = tuple(f"x{i}" for i in range(9))
        edges = tuple((f"E{i}", (attrs[i], attrs[(i + 1) % 9])) for i in range(9))
        with pytest.raises(SizeLimitError):
            search_ghd(JoinQuery(attrs, edges))

    @pytest.mark.parametrize("k", [4, 5])
    def test_search_cycles(self, k):
        q = cycle_query(k)
        d = search_ghd(q)
        # cycles decompose into width-max(1, rho* of a 3-bag) trees; both
        # 4- and 5-cycles have fhtw 2 via the standard triangulation
        assert validate_ghd(q, d) == 2


class TestQueryValidation:
    def test_size_cap(self):
        attrs = tuple(f"x{i}" for i in range(17))
        edges = (("E", attrs),)
        with pytest.raises(InvalidArgumentError):
            JoinQuery(attrs, edges)

    def test_uncovered_attribute(self):
        with pytest.raises(InvalidArgumentError):
            JoinQuery(("a", "b"), (("E", ("a",)),))

    def test_canonical_edge_order(self):
        q = JoinQuery(("a", "b"), (("E", ("b", "a")),))
        assert q.edges[0][1] == ("a", "b")
