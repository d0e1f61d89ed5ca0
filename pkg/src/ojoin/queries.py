"""Catalogue of standard join-query shapes used in experiments and tests."""

from __future__ import annotations

from .hypergraph import JoinQuery


def triangle_query() -> JoinQuery:
    """R1(x2,x3) |><| R2(x1,x3) |><| R3(x1,x2)."""
    return JoinQuery(
        ("x1", "x2", "x3"),
        (("R1", ("x2", "x3")), ("R2", ("x1", "x3")), ("R3", ("x1", "x2"))),
    )


def cycle_query(k: int) -> JoinQuery:
    """Length-k cycle R1(x1,x2) ... Rk(xk,x1)."""
    if k < 3:
        raise ValueError("cycle needs k >= 3")
    attrs = tuple(f"x{i}" for i in range(1, k + 1))
    edges = tuple(
        (f"R{i}", (attrs[i - 1], attrs[i % k])) for i in range(1, k + 1)
    )
    return JoinQuery(attrs, edges)


def chain_query(k: int) -> JoinQuery:
    """k-edge path R1(x1,x2) ... Rk(xk,x(k+1))."""
    if k < 1:
        raise ValueError("chain needs k >= 1")
    attrs = tuple(f"x{i}" for i in range(1, k + 2))
    edges = tuple((f"R{i}", (attrs[i - 1], attrs[i])) for i in range(1, k + 1))
    return JoinQuery(attrs, edges)


def loomis_whitney_query(k: int) -> JoinQuery:
    """k attributes, edges are all (k-1)-subsets; Li omits xi."""
    if k < 3:
        raise ValueError("loomis-whitney needs k >= 3")
    attrs = tuple(f"x{i}" for i in range(1, k + 1))
    edges = tuple(
        (f"L{i}", tuple(a for a in attrs if a != f"x{i}")) for i in range(1, k + 1)
    )
    return JoinQuery(attrs, edges)


def boat_query(k: int) -> JoinQuery:
    """Ri(xi,yi) for i in [k], plus Rx(x1..xk) and Ry(y1..yk)."""
    if k < 1:
        raise ValueError("boat needs k >= 1")
    xs = tuple(f"x{i}" for i in range(1, k + 1))
    ys = tuple(f"y{i}" for i in range(1, k + 1))
    edges = tuple((f"R{i}", (xs[i - 1], ys[i - 1])) for i in range(1, k + 1))
    edges += (("Rx", xs), ("Ry", ys))
    return JoinQuery(xs + ys, edges)


def star_query(k: int) -> JoinQuery:
    """Center x0 joined with k leaves: Ei(x0, xi)."""
    if k < 1:
        raise ValueError("star needs k >= 1")
    attrs = ("x0",) + tuple(f"x{i}" for i in range(1, k + 1))
    edges = tuple((f"E{i}", ("x0", f"x{i}")) for i in range(1, k + 1))
    return JoinQuery(attrs, edges)


CATALOGUE = {
    "triangle": triangle_query,
    "cycle4": lambda: cycle_query(4),
    "cycle5": lambda: cycle_query(5),
    "lw3": lambda: loomis_whitney_query(3),
    "lw4": lambda: loomis_whitney_query(4),
    "chain3": lambda: chain_query(3),
    "boat2": lambda: boat_query(2),
    "star3": lambda: star_query(3),
    "chain2": lambda: chain_query(2),
}
