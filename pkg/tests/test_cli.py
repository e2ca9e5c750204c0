import shutil
import subprocess
import sys

import pytest

from qwloss.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, main
from qwloss.io import read_records


@pytest.fixture
def path_graph(tmp_path):
    (tmp_path / "g.txt").write_text("a b\n")
    (tmp_path / "mu.txt").write_text("a 1\nb 0\n")
    (tmp_path / "gamma.txt").write_text("a 0\nb 1\n")
    return tmp_path


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", str(root / "data"), "--nodes", "60", "--classes", "3", "--intra", "0.3"]) == EXIT_OK
    return root


def write_cfg(root, name, **extra):
    lines = {"dataset": "data", "hidden": 8, "epochs": 15, "patience": 5, "runs": 2, "output": "runs.jsonl"}
    lines.update(extra)
    p = root / name
    p.write_text("".join(f"{k} = {v}\n" for k, v in lines.items()))
    return p


def test_ot_prints_cost(path_graph, capsys):
    d = path_graph
    assert main(["ot", "--graph", str(d / "g.txt"), "--mu", str(d / "mu.txt"), "--gamma", str(d / "gamma.txt")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "cost 1.0"
    assert out[1] == "a\tb\t-1.0"


def test_ot_partial_and_flow_file(path_graph, capsys):
    d = path_graph
    (d / "mask.txt").write_text("a\n")
    (d / "p.txt").write_text("a 1\n")
    (d / "q.txt").write_text("a 0\n")
    rc = main(["ot", "--graph", str(d / "g.txt"), "--mu", str(d / "p.txt"), "--gamma", str(d / "q.txt"),
               "--mask", str(d / "mask.txt"), "--flows", str(d / "flows.tsv")])
    assert rc == EXIT_OK
    assert capsys.readouterr().out == "cost 1.0\n"
    assert (d / "flows.tsv").read_text() == "a\tb\t-1.0\n"


def test_ot_unbalanced_fails(path_graph, capsys):
    d = path_graph
    (d / "big.txt").write_text("b 2\n")
    rc = main(["ot", "--graph", str(d / "g.txt"), "--mu", str(d / "mu.txt"), "--gamma", str(d / "big.txt")])
    assert rc == EXIT_FAIL
    assert capsys.readouterr().err.startswith("error:")


def test_ot_bad_weight(tmp_path, capsys):
    (tmp_path / "g.txt").write_text("a b -1\n")
    (tmp_path / "m.txt").write_text("a 1\n")
    rc = main(["ot", "--graph", str(tmp_path / "g.txt"), "--mu", str(tmp_path / "m.txt"),
               "--gamma", str(tmp_path / "m.txt")])
    assert rc == EXIT_USAGE
    assert "non-positive weight, line 1" in capsys.readouterr().err


def test_train_missing_dataset(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "run.cfg", dataset="nope")
    assert main(["train", str(cfg)]) == EXIT_USAGE
    assert "dataset not found" in capsys.readouterr().err
    assert not (tmp_path / "runs.jsonl").exists()


def test_usage_errors(tmp_path, capsys):
    assert main([]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
    (tmp_path / "bad.cfg").write_text("lamda = 3\n")
    assert main(["train", str(tmp_path / "bad.cfg")]) == EXIT_USAGE
    assert "unknown key" in capsys.readouterr().err
    assert main(["train", str(tmp_path / "absent.cfg")]) == EXIT_USAGE


def test_train_eval_inspect(synth, capsys):
    root = synth
    cfg = write_cfg(root, "qw.cfg", loss="qw-alg2", model_dir="models", figures="figs")
    assert main(["train", str(cfg)]) == EXIT_OK
    recs = read_records(root / "runs.jsonl")
    assert [r["seed"] for r in recs] == [0, 1]
    for key in ("config", "curves", "metrics", "primal_residual", "wall_time", "flow", "stop_reason"):
        assert key in recs[0]
    assert recs[0]["config"]["loss"] == "qw-alg2"
    model = recs[0]["model_path"]
    assert all((root / "figs" / f).exists() for f in ("qw-alg2_seed0_curves.png", "qw-alg2_seed0_flow.png"))
    capsys.readouterr()

    assert main(["eval", model, "--dataset", str(root / "data")]) == EXIT_OK
    out = capsys.readouterr().out
    acc = float(out.split("test: accuracy ")[1].split()[0])
    assert acc == pytest.approx(recs[0]["metrics"]["test"]["accuracy"], abs=5e-5)

    csv = root / "hist.csv"
    fig = root / "hist.png"
    assert main(["inspect-flow", model, "--out", str(csv), "--bins", "10", "--figure", str(fig)]) == EXIT_OK
    rows = csv.read_text().splitlines()
    assert rows[0] == "bin_left,bin_right,count" and len(rows) == 11
    assert fig.exists()


def test_train_appends_and_traditional_has_no_flow(synth, capsys):
    root = synth
    cfg = write_cfg(root, "base.cfg", loss="traditional", output="base.jsonl", runs=1, model_dir="models")
    assert main(["train", str(cfg)]) == EXIT_OK
    assert main(["train", str(cfg)]) == EXIT_OK
    recs = read_records(root / "base.jsonl")
    assert len(recs) == 2 and recs[0]["flow"] is None
    assert recs[0]["metrics"] == recs[1]["metrics"]
    capsys.readouterr()
    assert main(["inspect-flow", recs[0]["model_path"]]) == EXIT_USAGE


def test_parallel_matches_serial(synth):
    root = synth
    cfg = write_cfg(root, "par.cfg", loss="qw-alg1", output="par.jsonl", epochs=5)
    assert main(["train", str(cfg), "--parallel", "2"]) == EXIT_OK
    assert main(["train", str(cfg), "--output", str(root / "ser.jsonl")]) == EXIT_OK
    par, ser = read_records(root / "par.jsonl"), read_records(root / "ser.jsonl")
    assert [r["metrics"] for r in par] == [r["metrics"] for r in ser]


def test_check_exits_zero(capsys):
    assert main(["check"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("PASS") == 6 and "all checks passed" in out


@pytest.mark.skipif(shutil.which("qwloss") is None, reason="console script not installed")
def test_console_script(path_graph):
    d = path_graph
    r = subprocess.run(["qwloss", "ot", "--graph", str(d / "g.txt"), "--mu", str(d / "mu.txt"),
                        "--gamma", str(d / "gamma.txt")], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("cost 1.0")
    r = subprocess.run([sys.executable, "-m", "qwloss.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "inspect-flow" in r.stdout
