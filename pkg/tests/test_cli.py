import json
import subprocess
import sys

import pytest

from softplan.cli import main


@pytest.fixture(scope="module")
def traj(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    out = d / "t.jsonl"
    assert main(["simulate", "--mesh", "box", "--actions", "2", "--seed", "5",
                 "--no-obstacles", "--out", str(out)]) == 0
    return out


def test_simulate_is_byte_identical(traj, tmp_path):
    again = tmp_path / "again.jsonl"
    main(["simulate", "--mesh", "box", "--actions", "2", "--seed", "5", "--no-obstacles",
          "--out", str(again)])
    assert again.read_bytes() == traj.read_bytes()
    assert len(traj.read_text().splitlines()) == 2


def test_missing_file_exits_2(tmp_path, capsys):
    code = main(["train", "--mesh", "box", "--data", str(tmp_path / "nope.jsonl"),
                 "--out", str(tmp_path / "m.json")])
    assert code == 2
    assert "file not found" in capsys.readouterr().err


def test_unknown_mesh_exits_2(tmp_path, capsys):
    code = main(["simulate", "--mesh", "teapot", "--actions", "1", "--out", str(tmp_path / "x")])
    assert code == 2 and "teapot" in capsys.readouterr().err


def test_schema_error_names_field(traj, tmp_path, capsys):
    rec = json.loads(traj.read_text().splitlines()[0])
    del rec["flow"]
    bad = tmp_path / "bad.jsonl"
    bad.write_text(json.dumps(rec) + "\n")
    code = main(["train", "--mesh", "box", "--data", str(bad), "--out", str(tmp_path / "m.json")])
    err = capsys.readouterr().err
    assert code == 2
    assert f"{bad}:1" in err and "flow" in err


def test_trajectory_for_other_mesh_exits_2(traj, tmp_path):
    code = main(["train", "--mesh", "lshape", "--data", str(traj), "--out", str(tmp_path / "m.json")])
    assert code == 2


def test_bad_config_key_exits_2(traj, tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"learning_rate": 1}')
    code = main(["train", "--mesh", "box", "--data", str(traj), "--config", str(cfg),
                 "--out", str(tmp_path / "m.json")])
    assert code == 2 and "learning_rate" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_diverged_training_exits_3(traj, tmp_path):
    out = tmp_path / "m.json"
    code = main(["train", "--mesh", "box", "--data", str(traj), "--steps", "100", "--lr", "1e6",
                 "--out", str(out)])
    assert code == 3
    assert out.exists()   # best parameters are still written


def test_train_evaluate_report(traj, tmp_path):
    ck, log = tmp_path / "m.json", tmp_path / "log.csv"
    assert main(["train", "--mesh", "box", "--data", str(traj), "--steps", "5",
                 "--out", str(ck), "--log", str(log)]) == 0
    assert len(log.read_text().splitlines()) == 6
    mdir = tmp_path / "metrics"
    mdir.mkdir()
    assert main(["evaluate", "--mesh", "box", "--checkpoint", str(ck), "--data", str(traj),
                 "--miou-samples", "500", "--rank-k", "2", "--out", str(mdir / "e.csv")]) == 0
    header, row = (mdir / "e.csv").read_text().splitlines()
    assert header.split(",")[:2] == ["trajectory", "records"]
    assert row.split(",")[1] == "2"
    summary = tmp_path / "s.csv"
    assert main(["report", "--metrics-dir", str(mdir), "--out", str(summary)]) == 0
    assert summary.read_text().strip()


def test_report_on_empty_dir_warns(tmp_path, capsys):
    assert main(["report", "--metrics-dir", str(tmp_path)]) == 0
    assert "warning" in capsys.readouterr().err
    assert main(["report", "--metrics-dir", str(tmp_path / "missing")]) == 2


def test_plan_writes_report(tmp_path):
    out, csv = tmp_path / "p.json", tmp_path / "p.csv"
    assert main(["plan", "--mesh", "box", "--start-seed", "1", "--target-seed", "2", "--k", "2",
                 "--horizon", "1", "--no-obstacles", "--miou-samples", "500", "--rank-all",
                 "--out", str(out), "--csv", str(csv)]) == 0
    rep = json.loads(out.read_text())
    assert rep["kendall_tau"] == 1.0 or rep["kendall_tau"] is None
    assert len(rep["candidates"]) == 2 and csv.exists()
    assert main(["plan", "--mesh", "box", "--start-seed", "1", "--target-seed", "2",
                 "--dynamics", "learned", "--out", str(out)]) == 2


def test_console_help():
    res = subprocess.run([sys.executable, "-m", "softplan.cli", "--help"],
                         capture_output=True, text=True, check=True)
    for cmd in ("simulate", "train", "evaluate", "plan", "report"):
        assert cmd in res.stdout
