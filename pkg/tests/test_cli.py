import csv
import json
from pathlib import Path

import pytest

from inclusion_capacity.cli import (
    EXIT_ASSUMPTION, EXIT_OK, EXIT_PARSE, EXIT_SPACE, EXIT_USAGE, main,
)

GEOM = Path(__file__).resolve().parents[1] / "geometries"
PATH = str(GEOM / "path.json")
THREE = str(GEOM / "three_site.json")


def run(tmp_path, *argv):
    return main([*argv, "--out", str(tmp_path)])


def test_analyze(tmp_path):
    assert run(tmp_path, "analyze", "--graph", PATH) == EXIT_OK
    data = json.loads((tmp_path / "hierarchy.json").read_text())
    assert data["s_star"] == ["x", "y"] and data["kappa3"] == 2
    assert data["contracted"]["inner"] == ["b"]
    manifest = (tmp_path / "manifest.jsonl").read_text().splitlines()
    assert json.loads(manifest[-1])["command"] == "analyze"


def test_kconstant(tmp_path):
    assert run(tmp_path, "kconstant", "--graph", PATH, "--lambda-grid", "0.72", "0.8", "0.9") == EXIT_OK
    data = json.loads((tmp_path / "kconstant.json").read_text())
    assert data["value"] == pytest.approx(1 / 12)
    assert data["lambda_spread"] <= 1e-10


def test_capacity_csv(tmp_path):
    assert run(tmp_path, "capacity", "--graph", PATH, "--n-list", "12", "16") == EXIT_OK
    with open(tmp_path / "sandwich.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["N"] for r in rows] == ["12", "16"]
    for r in rows:
        assert float(r["lower_scaled"]) <= float(r["exact_scaled"]) <= float(r["upper_scaled"])


def test_artifacts_are_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["capacity", "--graph", PATH, "--n-list", "12", "--out", str(out)]) == EXIT_OK
    assert (a / "sandwich.csv").read_bytes() == (b / "sandwich.csv").read_bytes()


def test_sweep_and_report(tmp_path):
    assert run(tmp_path, "sweep", "--graph", PATH, "--n-list", "10", "20", "--d-schedule", "0.1",
               "--no-capacity") == EXIT_OK
    assert run(tmp_path, "report", "--graph", PATH) == EXIT_OK
    text = (tmp_path / "report.md").read_text()
    assert "sweep.csv" in text


def test_verify(tmp_path):
    assert run(tmp_path, "verify-test-objects", "--graph", PATH, "--n", "16") == EXIT_OK
    data = json.loads((tmp_path / "verify.json").read_text())
    assert data["checks"]["F_at_xi_x"] == 1.0 and data["checks"]["F_at_xi_y"] == 0.0
    s = data["sandwich"]
    assert s["lower_scaled"] <= s["exact_scaled"] <= s["upper_scaled"]


def test_simulate(tmp_path):
    assert run(tmp_path, "simulate", "--graph", THREE, "--n", "4", "--d", "0.5", "--replicas", "200") == EXIT_OK
    data = json.loads((tmp_path / "simulate.json").read_text())
    assert data["passed"] and data["replicas"] == 200
    assert run(tmp_path, "simulate", "--graph", THREE, "--n", "4", "--d", "0.5", "--replicas", "20",
               "--alpha", "1.0") == EXIT_OK


def test_exit_codes(tmp_path):
    assert run(tmp_path, "analyze", "--graph", str(tmp_path / "missing.json")) == EXIT_PARSE
    assert run(tmp_path, "capacity", "--graph", THREE, "--n-list", "10") == EXIT_ASSUMPTION
    assert run(tmp_path, "sweep", "--graph", PATH, "--n-list", "5000", "--no-capacity") == EXIT_SPACE
    assert run(tmp_path, "capacity", "--graph", PATH, "--n-list", "20", "10") == EXIT_USAGE
    assert main(["nonsense"]) == EXIT_USAGE
    assert run(tmp_path, "analyze", "--graph", PATH, "--x", "q", "--y", "y") == EXIT_OK  # analyze ignores the pair
    assert run(tmp_path, "kconstant", "--graph", PATH, "--x", "q", "--y", "y") == EXIT_PARSE
    assert run(tmp_path, "kconstant", "--graph", PATH, "--lambda", "0.1") == EXIT_USAGE
