"""End-to-end CLI: file formats, subcommands, exit codes."""

import json
import os

import numpy as np
import pytest

from ojoin.cli import main
from ojoin.memory import CacheParams, simulate_cache
from ojoin.qio import Dictionary, load_instance, load_query


@pytest.fixture
def triangle_dir(tmp_path):
    """A small triangle instance on disk, with string-valued tuples."""
    d = tmp_path / "tri"
    d.mkdir()
    values = {
        "R1": [("b1", "c1"), ("b1", "c2"), ("b2", "c1")],
        "R2": [("a1", "c1"), ("a1", "c2"), ("a2", "c1")],
        "R3": [("a1", "b1"), ("a2", "b1"), ("a2", "b2")],
    }
    attrs = {"R1": ("x2", "x3"), "R2": ("x1", "x3"), "R3": ("x1", "x2")}
    for name, rows in values.items():
        with open(d / f"{name.lower()}.csv", "w") as f:
            f.write(",".join(attrs[name]) + "\n")
            for row in rows:
                f.write(",".join(row) + "\n")
    doc = {
        "attributes": ["x1", "x2", "x3"],
        "relations": [
            {"name": n, "attrs": list(attrs[n]), "file": f"{n.lower()}.csv"}
            for n in ("R1", "R2", "R3")
        ],
    }
    qpath = d / "query.json"
    qpath.write_text(json.dumps(doc))
    return d, qpath


def expected_triangles():
    # brute force over the fixture by hand: R3 pairs joined with R2 and R1
    r1 = {("b1", "c1"), ("b1", "c2"), ("b2", "c1")}
    r2 = {("a1", "c1"), ("a1", "c2"), ("a2", "c1")}
    r3 = {("a1", "b1"), ("a2", "b1"), ("a2", "b2")}
    return sorted(
        (a, b, c)
        for a, b in r3
        for c in ("c1", "c2")
        if (b, c) in r1 and (a, c) in r2
    )


class TestQueryFiles:
    def test_load_round_trip(self, triangle_dir):
        _d, qpath = triangle_dir
        qf = load_query(qpath)
        assert qf.query.attributes == ("x1", "x2", "x3")
        inst, dictionary = load_instance(qf)
        assert inst.total_size == 9
        # shared attributes must decode consistently across relations
        code = dictionary.codes["a1"]
        assert code in set(inst.tables["R2"][:, 0]) and code in set(
            inst.tables["R3"][:, 0]
        )

    def test_malformed_row_has_line_number(self, triangle_dir, capsys):
        d, qpath = triangle_dir
        with open(d / "r1.csv", "a") as f:
            f.write("only-one-value\n")
        rc = main(["run", str(qpath), "--strategy", "generic"])
        assert rc == 2
        err = capsys.readouterr().err
        assert "r1.csv:5" in err

    def test_bad_json(self, tmp_path, capsys):
        p = tmp_path / "q.json"
        p.write_text("{not json")
        assert main(["run", str(p)]) == 2

    def test_dictionary_round_trip(self, tmp_path):
        d = Dictionary()
        codes = [d.encode(v) for v in ("x", "y", "x", "z")]
        assert codes == [0, 1, 0, 2]
        d.save(tmp_path / "dict.json")
        loaded = Dictionary.load(tmp_path / "dict.json")
        assert loaded.decode(2) == "z"


class TestRun:
    def test_run_writes_expected_results(self, triangle_dir, tmp_path, capsys):
        _d, qpath = triangle_dir
        out = tmp_path / "out.csv"
        rc = main(["run", str(qpath), "--strategy", "generic", "--output", str(out)])
        assert rc == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "x1,x2,x3"
        got = sorted(tuple(l.split(",")) for l in lines[1:])
        assert got == expected_triangles()
        assert os.path.exists(str(out) + ".dict.json")
        stdout = capsys.readouterr().out
        assert "OUT=" in stdout and "N=9" in stdout

    def test_strategies_agree_on_result_file(self, triangle_dir, tmp_path):
        _d, qpath = triangle_dir
        outs = []
        for strat in ("generic", "triangle-v2", "nested-loop"):
            out = tmp_path / f"{strat}.csv"
            assert main(["run", str(qpath), "--strategy", strat, "--output", str(out)]) == 0
            outs.append(out.read_text())
        assert outs[0] == outs[1] == outs[2]

    def test_mismatched_strategy(self, tmp_path, capsys):
        d = tmp_path
        with open(d / "r.csv", "w") as f:
            f.write("a,b\n1,2\n")
        doc = {
            "attributes": ["a", "b"],
            "relations": [{"name": "R", "attrs": ["a", "b"], "file": "r.csv"}],
        }
        qpath = d / "q.json"
        qpath.write_text(json.dumps(doc))
        assert main(["run", str(qpath), "--strategy", "triangle-v1"]) == 2


class TestVerifyOblivious:
    def test_equal_for_oblivious_strategy(self, triangle_dir, capsys):
        _d, qpath = triangle_dir
        rc = main([
            "verify-oblivious", str(qpath), "-k", "3", "--sizes", "8",
            "--strategy", "generic",
        ])
        assert rc == 0
        assert "EQUAL" in capsys.readouterr().out

    def test_unequal_for_leaky_baseline(self, tmp_path, capsys):
        with open(tmp_path / "r1.csv", "w") as f:
            f.write("x1,x2\n")
        with open(tmp_path / "r2.csv", "w") as f:
            f.write("x2,x3\n")
        doc = {
            "attributes": ["x1", "x2", "x3"],
            "relations": [
                {"name": "R1", "attrs": ["x1", "x2"], "file": "r1.csv"},
                {"name": "R2", "attrs": ["x2", "x3"], "file": "r2.csv"},
            ],
        }
        qpath = tmp_path / "q.json"
        qpath.write_text(json.dumps(doc))
        rc = main([
            "verify-oblivious", str(qpath), "-k", "2", "--sizes", "16",
            "--profile", "heavy-hitter", "--strategy", "insecure-sortmerge",
        ])
        assert rc == 4
        out = capsys.readouterr().out
        assert "UNEQUAL" in out and "divergence" in out

    def test_k_must_be_at_least_two(self, triangle_dir):
        _d, qpath = triangle_dir
        assert main(["verify-oblivious", str(qpath), "-k", "1"]) == 2


class TestTraceAndCacheSim:
    def test_trace_then_cache_sim(self, triangle_dir, tmp_path, capsys):
        _d, qpath = triangle_dir
        tr = tmp_path / "run.trace"
        assert main(["trace", str(qpath), "--strategy", "generic", "--out", str(tr)]) == 0
        assert tr.exists() and (tmp_path / "run.trace.digest").exists()
        capsys.readouterr()
        assert main(["cache-sim", str(tr), "--m", "256", "--b", "8"]) == 0
        out = capsys.readouterr().out
        assert "transfers=" in out

    def test_cache_sim_monotone_in_m(self, triangle_dir, tmp_path, capsys):
        _d, qpath = triangle_dir
        tr = tmp_path / "run.trace"
        main(["trace", str(qpath), "--strategy", "nested-loop", "--out", str(tr)])
        capsys.readouterr()
        transfers = []
        for m in (64, 256, 1024):
            main(["cache-sim", str(tr), "--m", str(m), "--b", "8"])
            out = capsys.readouterr().out
            transfers.append(int(out.split("transfers=")[1].split()[0]))
        assert transfers == sorted(transfers, reverse=True)


class TestGenAndBench:
    def test_gen_then_run(self, triangle_dir, tmp_path, capsys):
        _d, qpath = triangle_dir
        outdir = tmp_path / "gen"
        rc = main([
            "gen", str(qpath), "--profile", "uniform", "--sizes", "8",
            "--seed", "5", "--outdir", str(outdir),
        ])
        assert rc == 0
        gen_q = outdir / "query.json"
        assert main(["run", str(gen_q), "--strategy", "generic"]) == 0

    def test_bench_small_grid(self, triangle_dir, tmp_path, capsys):
        _d, qpath = triangle_dir
        out = tmp_path / "bench.csv"
        rc = main([
            "bench", str(qpath), "--grid", "12,24", "--strategy", "generic",
            "--output", str(out),
        ])
        assert rc == 0
        stdout = capsys.readouterr().out
        assert "slope=" in stdout
        assert out.read_text().startswith("n,events,transfers")

    def test_bench_single_point_slope_na(self, triangle_dir, capsys):
        _d, qpath = triangle_dir
        assert main(["bench", str(qpath), "--grid", "12", "--no-cache-sim"]) == 0
        assert "slope=n/a" in capsys.readouterr().out

    def test_bench_unsorted_grid_rejected(self, triangle_dir):
        _d, qpath = triangle_dir
        assert main(["bench", str(qpath), "--grid", "24,12"]) == 2


class TestBounds:
    def test_bounds_output(self, triangle_dir, capsys):
        _d, qpath = triangle_dir
        assert main(["bounds", str(qpath), "--n", "128"]) == 0
        out = capsys.readouterr().out
        assert "rho* = 3/2" in out
        assert "rho  = 2" in out
        assert "tau = N^rho* = 1449" in out  # ceil(128^1.5)
        assert "fhtw = 3/2" in out


class TestBudgetExit:
    def test_too_small_tau_exits_3(self, triangle_dir, capsys):
        _d, qpath = triangle_dir
        rc = main([
            "run", str(qpath), "--strategy", "ghd-relaxed", "--tau", "0",
        ])
        # the fixture join is non-empty, so tau=0 must trip the alarm...
        # unless the decomposition is a single bag (no tree edges); the
        # searched triangle GHD is a single bag, so force a two-bag query
        d = triangle_dir[0]
        doc = json.loads((d / "query.json").read_text())
        doc["ghd"] = {
            "bags": {"u1": ["x1", "x2", "x3"], "u2": ["x2", "x3"]},
            "edges": [["u1", "u2"]],
            "root": "u1",
        }
        q2 = d / "query2.json"
        q2.write_text(json.dumps(doc))
        rc = main(["run", str(q2), "--strategy", "ghd-relaxed", "--tau", "0"])
        assert rc == 3
        assert "budget exceeded" in capsys.readouterr().err
