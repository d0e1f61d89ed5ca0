"""File formats: query JSON, relation CSVs, value dictionaries, results.

A query file is a JSON document:

    {
      "attributes": ["x1", "x2", "x3"],
      "relations": [
        {"name": "R1", "attrs": ["x2", "x3"], "file": "r1.csv"},
        ...
      ],
      "ghd": {                       # optional
        "bags": {"u1": ["x1", "x2"], "u2": ["x2", "x3"]},
        "edges": [["u1", "u2"]],
        "root": "u1"
      }
    }

The attribute order in the file is the canonical order.  Relation files
are CSV: a header line of attribute names, then one row per tuple.
Values are arbitrary strings (no quoting; commas are separators) and are
dictionary-encoded to 64-bit codes at ingestion; the dictionary is
persisted next to outputs for decoding.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import QueryFormatError
from .hypergraph import GHD, JoinQuery
from .oracle import Instance


@dataclass
class Dictionary:
    """Order-of-first-appearance string-to-code mapping."""

    values: list[str] = field(default_factory=list)
    codes: dict[str, int] = field(default_factory=dict)

    def encode(self, value: str) -> int:
        code = self.codes.get(value)
        if code is None:
            code = len(self.values)
            self.codes[value] = code
            self.values.append(value)
        return code

    def decode(self, code: int) -> str:
        return self.values[code]

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.values, f)

    @staticmethod
    def load(path) -> "Dictionary":
        with open(path) as f:
            values = json.load(f)
        return Dictionary(values=values, codes={v: i for i, v in enumerate(values)})


def parse_ghd(obj, path="<ghd>") -> GHD:
    try:
        bags = {u: tuple(attrs) for u, attrs in obj["bags"].items()}
        edges = [tuple(e) for e in obj.get("edges", [])]
        root = obj["root"]
    except (KeyError, TypeError) as exc:
        raise QueryFormatError(f"{path}: ghd needs bags, edges, root ({exc})") from exc
    nodes = tuple(bags)
    adj = {u: set() for u in nodes}
    for e in edges:
        if len(e) != 2 or e[0] not in adj or e[1] not in adj:
            raise QueryFormatError(f"{path}: bad ghd edge {e}")
        adj[e[0]].add(e[1])
        adj[e[1]].add(e[0])
    parent = {root: None}
    queue = [root]
    while queue:
        u = queue.pop()
        for v in adj.get(u, ()):
            if v not in parent:
                parent[v] = u
                queue.append(v)
    if set(parent) != set(nodes):
        raise QueryFormatError(f"{path}: ghd edges do not connect all bags")
    return GHD(nodes=nodes, parent=parent, bags=bags, root=root)


@dataclass
class QueryFile:
    query: JoinQuery
    relation_files: dict[str, str]
    ghd: GHD | None


def load_query(path) -> QueryFile:
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as exc:
        raise QueryFormatError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise QueryFormatError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    try:
        attributes = tuple(doc["attributes"])
        relations = doc["relations"]
    except (KeyError, TypeError) as exc:
        raise QueryFormatError(f"{path}: needs attributes and relations ({exc})") from exc
    edges = []
    files = {}
    base = os.path.dirname(os.path.abspath(path))
    for i, entry in enumerate(relations):
        try:
            name = entry["name"]
            attrs = tuple(entry["attrs"])
        except (KeyError, TypeError) as exc:
            raise QueryFormatError(
                f"{path}: relation #{i} needs name and attrs ({exc})"
            ) from exc
        edges.append((name, attrs))
        if "file" in entry:
            files[name] = os.path.join(base, entry["file"])
    query = JoinQuery(attributes, tuple(edges))
    ghd = parse_ghd(doc["ghd"], path) if "ghd" in doc else None
    return QueryFile(query=query, relation_files=files, ghd=ghd)


def load_relation_csv(path, expected_attrs, dictionary: Dictionary) -> np.ndarray:
    """Read one relation file into a code matrix, checking the header and
    per-line arity; errors carry line numbers."""
    rows = []
    try:
        f = open(path)
    except OSError as exc:
        raise QueryFormatError(f"{path}: {exc}") from exc
    with f:
        header = f.readline()
        if not header:
            raise QueryFormatError(f"{path}:1: empty relation file")
        attrs = tuple(h.strip() for h in header.rstrip("\n").split(","))
        if attrs != tuple(expected_attrs):
            raise QueryFormatError(
                f"{path}:1: header {attrs} does not match schema {tuple(expected_attrs)}"
            )
        for lineno, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(attrs):
                raise QueryFormatError(
                    f"{path}:{lineno}: expected {len(attrs)} values, got {len(parts)}"
                )
            rows.append([dictionary.encode(p.strip()) for p in parts])
    return np.array(rows, np.int64).reshape(-1, len(expected_attrs))


def load_instance(qf: QueryFile):
    """Ingest all relation files of a query; returns (Instance, Dictionary)."""
    dictionary = Dictionary()
    tables = {}
    for eid, attrs in qf.query.edges:
        if eid not in qf.relation_files:
            raise QueryFormatError(f"relation {eid!r} has no file in the query json")
        tables[eid] = load_relation_csv(qf.relation_files[eid], attrs, dictionary)
    return Instance(qf.query, tables), dictionary


def write_relation_csv(path, attrs, string_rows):
    with open(path, "w") as f:
        f.write(",".join(attrs) + "\n")
        for row in string_rows:
            f.write(",".join(row) + "\n")


def write_instance(inst: Instance, outdir, query_name="query.json", ghd: GHD | None = None):
    """Persist a generated instance as relation CSVs plus a query file
    (codes rendered as decimal strings)."""
    os.makedirs(outdir, exist_ok=True)
    relations = []
    for eid, attrs in inst.query.edges:
        fname = f"{eid}.csv"
        write_relation_csv(
            os.path.join(outdir, fname),
            attrs,
            ([str(int(v)) for v in row] for row in inst.tables[eid]),
        )
        relations.append({"name": eid, "attrs": list(attrs), "file": fname})
    doc = {"attributes": list(inst.query.attributes), "relations": relations}
    if ghd is not None:
        doc["ghd"] = {
            "bags": {u: list(ghd.bags[u]) for u in ghd.nodes},
            "edges": [[u, p] for u, p in ghd.parent.items() if p is not None],
            "root": ghd.root,
        }
    qpath = os.path.join(outdir, query_name)
    with open(qpath, "w") as f:
        json.dump(doc, f, indent=2)
    return qpath


def write_results_csv(path, schema, code_rows, dictionary: Dictionary | None):
    """Write join results (reals only), decoded and sorted canonically;
    the dictionary is persisted alongside for decoding provenance."""
    decode = dictionary.decode if dictionary else str
    decoded = sorted(
        [tuple(decode(int(v)) for v in row) for row in code_rows]
    )
    with open(path, "w") as f:
        f.write(",".join(schema) + "\n")
        for row in decoded:
            f.write(",".join(row) + "\n")
    if dictionary is not None:
        dictionary.save(str(path) + ".dict.json")
