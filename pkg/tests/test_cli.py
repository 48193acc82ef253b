import json
import subprocess
import sys

import pytest

from builders import chain, tm_from
from queuenet import cli
from queuenet import dataset as ds
from queuenet import gnn
from queuenet.netgraph import Link, save_scenario
from queuenet.traffic import save_tm


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    assert run_cli("datagen", "--topology", "random:5", "--count", 10, "--seed", 7,
                   "--ti-min", 400, "--ti-max", 400, "--out", root / "data") == 0
    assert run_cli("train", "--data", root / "data" / "dataset.qnds", "--out", root / "model",
                   "--steps", 20, "--batch-size", 4, "--hidden", 6, "--iterations", 2,
                   "--l2", 1e-4, "--seed", 3, "--target-power", 0.25) == 0
    return root


def test_train_records_target_power(pipeline):
    model, _ = gnn.Model.load(pipeline / "model" / "model.ckpt")
    assert model.config.target.power == 0.25


def test_datagen_outputs(pipeline):
    d = ds.read(pipeline / "data" / "dataset.qnds")
    assert len(d) == 10
    assert sum(s.loss for s in d) / len(d) < 1e-3
    manifest = json.loads((pipeline / "data" / "run-datagen.json").read_text())
    assert manifest["command"] == "datagen" and manifest["config"]["seed"] == 7
    assert set(manifest["outputs"]) == {"dataset.qnds", "dataset.qnds.json"}


def test_replay_reproduces_digests(pipeline, tmp_path, capsys):
    assert run_cli("replay", pipeline / "data" / "run-datagen.json", "--out", tmp_path / "d2") == 0
    assert run_cli("replay", pipeline / "model" / "run-train.json", "--out", tmp_path / "m2") == 0
    assert "identical" in capsys.readouterr().out


def test_train_outputs_and_trace(pipeline):
    lines = (pipeline / "model" / "loss.txt").read_text().splitlines()
    assert [int(l.split()[0]) for l in lines] == list(range(20))
    assert (pipeline / "model" / "loss.png").stat().st_size > 0


def test_resume_continues_step_counter(pipeline, tmp_path):
    out = tmp_path / "m"
    data = pipeline / "data" / "dataset.qnds"
    common = ["--data", data, "--out", out, "--batch-size", 4, "--hidden", 6, "--iterations", 2,
              "--l2", 1e-4, "--seed", 3, "--target-power", 0.25]
    assert run_cli("train", *common, "--steps", 10) == 0
    assert run_cli("train", *common, "--steps", 10, "--resume", out / "model.ckpt") == 0
    lines = (out / "loss.txt").read_text().splitlines()
    assert [int(l.split()[0]) for l in lines] == list(range(20))
    # identical to one uninterrupted run
    assert (out / "loss.txt").read_text() == (pipeline / "model" / "loss.txt").read_text()


def test_eval_report(pipeline, tmp_path, capsys):
    assert run_cli("eval", "--model", pipeline / "model" / "model.ckpt",
                   "--data", pipeline / "data" / "dataset.qnds", "--out", tmp_path) == 0
    out = capsys.readouterr().out
    assert "MRE" in out and "R2" in out and "random5" in out
    report = json.loads((tmp_path / "metrics.json").read_text())
    assert {"mre", "r2"} <= set(report["all"])


def test_eval_empty_dataset_fails(pipeline, tmp_path):
    ds.write(ds.Dataset([], {}), tmp_path / "empty.qnds")
    assert run_cli("eval", "--model", pipeline / "model" / "model.ckpt",
                   "--data", tmp_path / "empty.qnds") == 1


def test_missing_files_fail(tmp_path):
    assert run_cli("eval", "--model", tmp_path / "none.ckpt", "--data", tmp_path / "none.qnds") == 1
    assert run_cli("train", "--data", tmp_path / "none.qnds", "--out", tmp_path) == 1


def test_usage_errors_exit_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run_cli("datagen", "--topology", "random:5", "--count", 1)
    assert exc.value.code == 2
    assert run_cli("datagen", "--topology", "random:5", "--count", 1, "--ti-min", 900,
                   "--ti-max", 500, "--out", tmp_path) == 2


def test_simulate_two_nodes(tmp_path, capsys):
    sc = chain(2, capacity=1000.0)
    save_scenario(tmp_path / "sc.json", sc)
    save_tm(tmp_path / "tm.txt", tm_from({(0, 1): 10.0, (1, 0): 10.0}, 2), sc.tos, seed=1)
    assert run_cli("simulate", "--scenario", tmp_path / "sc.json", "--tm", tmp_path / "tm.txt",
                   "--seed", 1, "--out", tmp_path / "o") == 0
    rows = [l.split() for l in capsys.readouterr().out.splitlines()[1:] if not l.startswith("#")]
    # 10 bit/s on a 1000 bit/s link: delay close to mean transmission time 2720 / 1000
    for row in rows:
        assert float(row[3]) == pytest.approx(2.72, rel=0.1)
    first = (tmp_path / "o" / "simulation.txt").read_text()
    run_cli("simulate", "--scenario", tmp_path / "sc.json", "--tm", tmp_path / "tm.txt", "--seed", 1,
            "--out", tmp_path / "o")
    assert (tmp_path / "o" / "simulation.txt").read_text() == first
    run_cli("simulate", "--scenario", tmp_path / "sc.json", "--tm", tmp_path / "tm.txt", "--seed", 2,
            "--out", tmp_path / "o")
    assert (tmp_path / "o" / "simulation.txt").read_text() != first


def test_simulate_lists_violations(tmp_path, capsys):
    sc = chain(3)
    topo = sc.topology
    broken = type(topo)(topo.n_nodes, topo.links + (Link(0, 2, -5.0),), topo.ports)
    save_scenario(tmp_path / "bad.json", type(sc)(broken, sc.next_hop, sc.tos))
    assert run_cli("simulate", "--scenario", tmp_path / "bad.json", "--ti", 400) == 1
    assert "invalid" in capsys.readouterr().err


def test_entry_point_module():
    proc = subprocess.run([sys.executable, "-m", "queuenet.cli", "train"], capture_output=True, text=True)
    assert proc.returncode == 2 and "usage" in proc.stderr
