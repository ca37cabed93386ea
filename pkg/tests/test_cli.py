import csv
import json

import pytest

from fairprune import __version__
from fairprune.cli import main


def run(argv):
    return main([str(a) for a in argv])


@pytest.fixture
def workspace(tmp_path):
    data = tmp_path / "in" / "d.csv"
    assert run(["synth", "--n", 200, "--bias", 0.8, "--seed", 1, "--out", data]) == 0
    schema = data.with_suffix(".schema.json")
    model = tmp_path / "in" / "model.json"
    assert run(["train", "--data", data, "--schema", schema, "--m", 7, "--depth", 3, "--seed", 2, "--out", model]) == 0
    return tmp_path, data, schema, model


def test_synth_shape(workspace):
    _, data, schema, _ = workspace
    rows = list(csv.reader(data.open()))
    assert len(rows) == 201
    doc = json.loads(schema.read_text())
    assert doc["rows"] == 200 and doc["tool_version"] == __version__
    assert doc["config"]["seed"] == 1 and doc["config"]["bias"] == 0.8


def test_train_embeds_config(workspace):
    model = json.loads(workspace[3].read_text())
    assert model["tool_version"] == __version__
    assert model["meta"]["config"]["trainer"] == "bagging"
    assert len(model["members"]) == 7


@pytest.mark.parametrize("algo", ["poaf", "epaf-c", "epaf-d"])
def test_prune_deterministic(workspace, algo):
    tmp, data, schema, model = workspace
    outs = []
    out = tmp / "out" / f"{algo}.json"
    for _ in range(2):
        argv = ["prune", "--model", model, "--data", data, "--schema", schema, "--algo", algo, "--k", 3, "--lambda", 0.5, "--seed", 1, "--out", out]
        assert run(argv) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    doc = json.loads(outs[0])
    assert 1 <= doc["size"] <= 3 and doc["config"]["algo"] == algo and doc["tool_version"] == __version__


def test_audit_bounds(workspace):
    tmp, data, schema, model = workspace
    out = tmp / "out" / "audit.json"
    assert run(["audit-bounds", "--model", model, "--data", data, "--schema", schema, "--seed", 3, "--out", out]) == 0
    doc = json.loads(out.read_text())
    assert doc["oracle"]["first_order"] == 2 * doc["oracle"]["expected_member_dr"]
    assert set(doc["pac"]) == {"single", "finite_class", "mcallester"}
    for v in doc["pac"].values():
        assert v["bound"] >= doc["oracle"]["ensemble_dr"]


def test_run_missing_config(tmp_path, capsys):
    missing = tmp_path / "missing.json"
    assert run(["run", "--config", missing, "--seed", 1, "--out", tmp_path / "o"]) == 2
    assert str(missing) in capsys.readouterr().err


def test_run_and_ranks(tmp_path):
    cfg = tmp_path / "exp.json"
    cfg.write_text(
        json.dumps(
            {
                "dataset": {"synthetic": {"n": 150, "bias": 0.5, "seed": 0}},
                "ensemble": {"trainer": "bagging", "m": 5, "max_depth": 3},
                "pruners": [{"algorithm": "epaf-c", "k": 2, "lambda": 0.5}],
            }
        )
    )
    out = tmp_path / "res"
    assert run(["run", "--config", cfg, "--seed", 7, "--out", out]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["seed"] == 7 and summary["methods"] == ["ensemble", "EPAF-C"]

    scores = tmp_path / "scores.csv"
    scores.write_text("method,d1,d2\nA,0.3,0.1\nB,0.2,0.4\nC,0.5,0.1\n")
    ranks = tmp_path / "ranks.json"
    assert run(["ranks", "--scores", scores, "--out", ranks]) == 0
    assert json.loads(ranks.read_text())["ranks"] == {"A": 1.75, "B": 2.0, "C": 2.25}


def test_run_requires_seed(tmp_path):
    cfg = tmp_path / "exp.json"
    cfg.write_text(json.dumps({"dataset": {"synthetic": {"n": 60}}}))
    assert run(["run", "--config", cfg, "--out", tmp_path / "o"]) == 1


@pytest.mark.parametrize(
    "argv",
    [[], ["synth", "--n", "10"], ["bogus"], ["prune", "--algo", "kp"], ["synth", "--n", "50", "--bias", "0.5", "--out", "x.csv"]],
)
def test_usage_errors(argv, capsys):
    assert main(argv) == 1
    assert "usage" in capsys.readouterr().err


def test_data_errors(workspace, tmp_path):
    _, data, schema, _ = workspace
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(["train", "--data", tmp_path / "nope.csv", "--schema", schema, "--seed", 1, "--out", tmp_path / "m.json"]) == 2
    assert run(["prune", "--model", bad, "--data", data, "--schema", schema, "--algo", "poaf", "--k", 2, "--seed", 1, "--out", tmp_path / "p.json"]) == 2


def test_outputs_stay_inside_out(workspace):
    tmp, data, schema, model = workspace
    before = {p for p in tmp.rglob("*")}
    out = tmp / "only"
    assert run(["prune", "--model", model, "--data", data, "--schema", schema, "--algo", "epaf-d", "--k", 3, "--seed", 4, "--out", out / "p.json"]) == 0
    new = {p for p in tmp.rglob("*")} - before
    assert new and all(p == out or out in p.parents for p in new)
