import json

import pytest

from fluid_fcfs.main import build_parser, main
from fluid_fcfs.models.schemas import EXPORTED_SCHEMAS

DISJOINT = {
    "servers": ["s1", "s2"],
    "customers": [{"name": "c1", "alpha": 0.8}, {"name": "c2", "alpha": 0.2}],
    "edges": [["s1", "c1"], ["s2", "c2"]],
    "rates": {"mode": "SD", "per_server": {"s1": 0.4, "s2": 0.6}},
}

SMALL_TREE = {
    "servers": ["s1", "s2"],
    "customers": [{"name": "c1", "alpha": 0.4}, {"name": "c2", "alpha": 0.6}],
    "edges": [["s1", "c1"], ["s1", "c2"], ["s2", "c2"]],
    "rates": {"mode": "GENERAL", "per_edge": [["s1", "c1", 1.0], ["s1", "c2", 1.0], ["s2", "c2", 1.0]]},
}

COMPLETE = {
    "servers": ["s1", "s2"],
    "customers": [{"name": "c1", "alpha": 0.5}, {"name": "c2", "alpha": 0.5}],
    "edges": [["s1", "c1"], ["s1", "c2"], ["s2", "c1"], ["s2", "c2"]],
    "rates": {"mode": "SD", "per_server": {"s1": 1.0, "s2": 1.0}},
    "lambda": 1.0,
}


def _spec_file(tmp_path, name, document):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(document), encoding="utf-8")
    return str(path)


def _read(path):
    return json.loads(path.read_text(encoding="utf-8"))


def test_parser_lists_subcommands():
    parser = build_parser()
    args = parser.parse_args(["--spec", "system1", "analyze"])
    assert args.command == "analyze"
    assert args.format == "csv"


def test_missing_subcommand_is_usage_error():
    assert main([]) == 2


def test_analyze_pooled_system(tmp_path):
    out = tmp_path / "out"
    assert main(["-q", "--spec", "system1", "--out-dir", str(out), "analyze"]) == 0
    analysis = _read(out / "analysis.json")
    assert analysis["verdict"]["kind"] == "COMPLETE"
    assert analysis["max_throughput"] == pytest.approx(1.0)
    assert len(_read(out / "decomposition.json")["blocks"]) == 1
    manifest = _read(out / "manifest.json")
    assert manifest["command"] == "analyze"
    assert "analysis.json" in manifest["outputs"]


def test_analyze_violated_system(tmp_path):
    out = tmp_path / "out"
    spec = _spec_file(tmp_path, "disjoint", DISJOINT)
    assert main(["-q", "--spec", spec, "--out-dir", str(out), "analyze"]) == 11
    blocks = _read(out / "decomposition.json")["blocks"]
    assert [block["servers"] for block in blocks] == [["s1"], ["s2"]]


def test_analyze_reports_stability(tmp_path):
    out = tmp_path / "out"
    spec = _spec_file(tmp_path, "complete", COMPLETE)
    assert main(["-q", "--spec", spec, "--out-dir", str(out), "analyze"]) == 0
    stability = _read(out / "analysis.json")["stability"]
    assert stability["stable"] is True
    assert stability["pooled_rate"] == pytest.approx(2.0)


def test_malformed_spec_exits_2(tmp_path, capsys):
    assert main(["-q", "--spec", "{not json", "--out-dir", str(tmp_path), "analyze"]) == 2
    assert "error:" in capsys.readouterr().err


def test_invalid_spec_exits_2(tmp_path):
    broken = dict(DISJOINT, customers=[{"name": "c1", "alpha": 0.5}, {"name": "c2", "alpha": 0.2}])
    assert main(["-q", "--spec", _spec_file(tmp_path, "broken", broken), "--out-dir", str(tmp_path), "analyze"]) == 2


def test_lp_on_tree(tmp_path):
    out = tmp_path / "out"
    assert main(["-q", "--spec", _spec_file(tmp_path, "tree", SMALL_TREE), "--out-dir", str(out), "lp"]) == 0
    assert _read(out / "lp_solution.json")["mu_star"] == pytest.approx(2.0)
    pruned = _read(out / "pruned_spec.json")
    assert len(pruned["edges"]) == 3
    lines = (out / "design_edges.csv").read_bytes().split(b"\r\n")
    assert lines[0] == b"block,server,customer,matching_rate"


def test_trace_complete_graph(tmp_path):
    out = tmp_path / "out"
    spec = _spec_file(tmp_path, "complete", COMPLETE)
    assert main(["-q", "--spec", spec, "--out-dir", str(out), "trace", "--horizon", "3", "--resolution", "0.5"]) == 0
    trajectory = _read(out / "trajectory.json")
    assert trajectory["breakpoints"] == pytest.approx([0.0, 1.0])
    assert trajectory["events"][0]["kind"] == "frontier_contact"
    rows = (out / "trajectory.csv").read_text(encoding="utf-8").splitlines()
    assert rows[0] == "t,server_group,position"
    assert len(rows) == 1 + 7


def test_trace_bad_positions(tmp_path):
    out = tmp_path / "out"
    assert main(["-q", "--spec", "system1", "--out-dir", str(out), "trace", "--positions=-1,-1"]) == 2


def test_permutations_system1(tmp_path):
    out = tmp_path / "out"
    assert main(["-q", "--spec", "system1", "--out-dir", str(out), "permutations"]) == 0
    rows = {row["ordering"]: row["probability"] for row in _read(out / "permutation_table.json")["rows"]}
    assert rows == pytest.approx({"1-2-3": 0.1, "1-3-2": 0.2, "2-1-3": 0.2, "2-3-1": 0.2, "3-1-2": 0.2, "3-2-1": 0.1})


def test_permutations_rejects_violated_system(tmp_path):
    out = tmp_path / "out"
    assert main(["-q", "--spec", _spec_file(tmp_path, "disjoint", DISJOINT), "--out-dir", str(out), "permutations"]) == 2


SIMULATE = ["simulate", "--law", "exponential", "--warmup", "200", "--services", "3000", "--reps", "8",
            "--system-name", "system1"]


def test_simulate_then_ttest(tmp_path):
    out = tmp_path / "sim"
    assert main(["-q", "--spec", "system1", "--out-dir", str(out), "--seed", "12"] + SIMULATE) == 0
    for name in ("sim_estimate.json", "replication_vectors.json", "r_hat.csv", "span_histogram.csv", "permutations.csv"):
        assert (out / name).is_file()
    assert _read(out / "manifest.json")["seeds"] == [12]

    report_dir = tmp_path / "report"
    assert main(["-q", "--out-dir", str(report_dir), "ttest", "--vectors", str(out / "replication_vectors.json"),
                 "--fixture", "system1"]) == 0
    [report] = _read(report_dir / "test_report.json")["reports"]
    assert report["system"] == "system1"
    assert report["law"] == "exponential"
    assert report["df1"] == 5
    assert report["df2"] == 3
    header = (report_dir / "test_report.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header == "system,law,t2,f,d1,d2,p_value"

    orderings_dir = tmp_path / "orderings"
    assert main(["-q", "--spec", "system1", "--out-dir", str(orderings_dir), "ttest", "--vectors",
                 str(out / "replication_vectors.json"), "--from-product-form", "--target", "permutation"]) == 0
    assert _read(orderings_dir / "test_report.json")["reports"][0]["target"] == "permutation"


def test_ttest_rejects_other_graph(tmp_path):
    out = tmp_path / "sim"
    assert main(["-q", "--spec", "system1", "--out-dir", str(out)] + SIMULATE) == 0
    assert main(["-q", "--out-dir", str(tmp_path / "report"), "ttest", "--vectors", str(out / "replication_vectors.json"),
                 "--fixture", "system2"]) == 2


def test_manifest_replay_is_bitwise(tmp_path):
    first, second = tmp_path / "first", tmp_path / "second"
    assert main(["-q", "--spec", "system1", "--out-dir", str(first), "--seed", "31"] + SIMULATE) == 0
    assert main(["-q", "--out-dir", str(second), "simulate", "--from-manifest", str(first / "manifest.json")]) == 0
    for name in ("sim_estimate.json", "replication_vectors.json", "r_hat.csv", "permutations.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_json_format_skips_tables(tmp_path):
    out = tmp_path / "out"
    assert main(["-q", "--spec", "system1", "--out-dir", str(out), "--format", "json"] + SIMULATE) == 0
    assert (out / "sim_estimate.json").is_file()
    assert not (out / "r_hat.csv").exists()


def test_finite_simulation_below_capacity_is_rejected(tmp_path):
    spec = _spec_file(tmp_path, "complete", COMPLETE)
    assert main(["-q", "--spec", spec, "--out-dir", str(tmp_path / "out"), "simulate", "--finite",
                 "--reps", "2", "--services", "100"]) == 2


def test_schemas_exported(tmp_path):
    out = tmp_path / "out"
    assert main(["-q", "--out-dir", str(out), "schemas"]) == 0
    for name in EXPORTED_SCHEMAS:
        schema = _read(out / f"{name}.schema.json")
        assert schema["type"] == "object"
    assert "lambda" in _read(out / "spec.schema.json")["properties"]
