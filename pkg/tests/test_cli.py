"""
Tests for the command-line harness in app/cli.py.

Key scenarios:
  - subcommands print one JSON object and exit 0
  - unreadable inputs print {"error", "detail"} on stderr and exit 1
"""

import json

from app.cli import build_parser, main
from app.schemas.schemas import BenchReport
from app.services.benchmark import write_reports


def _stdout(capsys) -> dict:
    return json.loads(capsys.readouterr().out)


def _synth(tmp_path, capsys) -> str:
    code = main(["synth", "--d", "6", "--normals", "500", "--anomalies", "10", "--out", str(tmp_path)])
    assert code == 0
    return _stdout(capsys)["path"]


class TestSynthAndIngest:
    def test_synth_writes_csv(self, tmp_path, capsys):
        code = main(["synth", "--d", "6", "--normals", "500", "--anomalies", "10", "--out", str(tmp_path)])
        assert code == 0
        result = _stdout(capsys)
        assert result == {"dataset": "subspace_d6_s0", "path": str(tmp_path / "subspace_d6_s0.csv"),
                          "n": 510, "d": 6}

    def test_ingest_partitions(self, tmp_path, capsys):
        path = _synth(tmp_path, capsys)
        code = main(["ingest", path, "--window-size", "50", "--window-slide", "25", "--out", str(tmp_path)])
        assert code == 0
        result = _stdout(capsys)
        assert result["windows"] == 20
        assert result["train"][0] == 0
        assert result["test"][1] == 20
        assert (tmp_path / "subspace_d6_s0_stream.csv").exists()

    def test_missing_file(self, tmp_path, capsys):
        code = main(["ingest", str(tmp_path / "missing.csv")])
        assert code == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "FileNotFoundError"

    def test_missing_label_column(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n3,4\n")
        assert main(["ingest", str(path)]) == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "StreamError"
        assert "label column" in err["detail"]


class TestReport:
    def test_wins_from_saved_reports(self, tmp_path, capsys):
        rows = [
            BenchReport(detector="a", dataset="d1", map=0.9),
            BenchReport(detector="b", dataset="d1", map=0.5),
        ]
        write_reports(rows, tmp_path)
        code = main(["report", str(tmp_path), "--kind", "wins", "--out", str(tmp_path)])
        assert code == 0
        assert _stdout(capsys) == {"kind": "wins", "rows": 2, "path": str(tmp_path / "wins.csv")}

    def test_meta_without_table(self, tmp_path, capsys):
        write_reports([BenchReport(detector="a", dataset="d1", map=0.9)], tmp_path)
        assert main(["report", str(tmp_path), "--kind", "meta", "--out", str(tmp_path)]) == 1
        assert json.loads(capsys.readouterr().err)["error"] == "EvaluationError"


class TestParser:
    def test_explicit_flags_tracked(self):
        args = build_parser().parse_args(["run", "--config", "run.json", "--budget", "5"])
        assert args.budget == 5
        assert args.budget_set is True
        assert args.seed_set is False

    def test_robustness_defaults(self):
        args = build_parser().parse_args(["robustness"])
        assert args.dimensions == [20, 40, 60, 80, 100]
        assert args.detectors == ["mcod", "loda", "xstream"]
