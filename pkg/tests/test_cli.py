import subprocess
import sys

import pytest

from loadcast import cli
from loadcast import language as L


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert cli.main(["gen", "--catalog", "toy", "--class", "T", "--n", "300", "--seed", "3", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def model(tmp_path_factory, data):
    out = tmp_path_factory.mktemp("model")
    args = ["train", "--catalog", "toy", "--data", str(data), "--out", str(out), "--embed", "8", "--hidden", "12", "--epochs", "3", "--patience", "5"]
    assert cli.main(args) == 0
    return out


def test_gen_split_counts_default_catalog(tmp_path, capsys):
    # a small node budget keeps the rare hard default-catalog instance from dominating the run
    argv = ["gen", "--class", "A", "--n", "1000", "--seed", "7", "--node-budget", "5000", "--out", str(tmp_path)]
    assert cli.main(argv) == 0
    for split, n in (("train", 640), ("valid", 160), ("test", 200)):
        assert len((tmp_path / f"A.{split}.src").read_text().splitlines()) == n
        assert len((tmp_path / f"A.{split}.tgt").read_text().splitlines()) == n
    assert "A.train: 640" in capsys.readouterr().out


def test_gen_rerun_identical(tmp_path, data):
    assert cli.main(["gen", "--catalog", "toy", "--class", "T", "--n", "300", "--seed", "3", "--out", str(tmp_path)]) == 0
    for f in data.iterdir():
        assert (tmp_path / f.name).read_bytes() == f.read_bytes(), f.name


def test_missing_catalog_is_data_error(tmp_path, capsys):
    assert cli.main(["gen", "--catalog", str(tmp_path / "none.cfg"), "--n", "3", "--out", str(tmp_path)]) == 2
    assert "not found" in capsys.readouterr().err


def test_budget_exceeded(tmp_path):
    args = ["gen", "--catalog", "toy", "--class", "T", "--n", "40", "--node-budget", "1", "--out", str(tmp_path)]
    assert cli.main(args + ["--strict"]) == 3
    assert cli.main(args) == 0


def test_usage_errors(tmp_path, capsys):
    assert cli.main([]) == 1
    assert cli.main(["frobnicate"]) == 1
    assert cli.main(["gen", "--n", "x", "--out", str(tmp_path)]) == 1
    bad = tmp_path / "c.yaml"
    bad.write_text("no_such_option: 3\n")
    assert cli.main(["eval", "--config", str(bad), "--pred", "a", "--gold", "b"]) == 1
    assert "no_such_option" in capsys.readouterr().err


def test_train_outputs_and_resume(tmp_path, data, model):
    history = (model / "history.log").read_text().splitlines()
    assert len(history) == 3 and history[0].startswith("epoch=1 ")
    assert (model / "model.ckpt").exists() and (model / "train_state.npz").exists()
    part = tmp_path / "part"
    base = ["train", "--catalog", "toy", "--data", str(data), "--out", str(part), "--embed", "8", "--hidden", "12", "--patience", "5"]
    assert cli.main(base + ["--epochs", "1"]) == 0
    assert cli.main(base + ["--epochs", "3", "--resume"]) == 0
    strip = lambda lines: [ln.rsplit(" seconds=", 1)[0] for ln in lines]
    assert strip((part / "history.log").read_text().splitlines()) == strip(history)
    assert (part / "model.ckpt").read_bytes() == (model / "model.ckpt").read_bytes()


def test_config_file_overridden_by_flags(tmp_path, data):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("embed: 8\nhidden: 12\nepochs: 5\npatience: 9\n")
    out = tmp_path / "m"
    assert cli.main(["train", "--catalog", "toy", "--config", str(cfg), "--data", str(data), "--out", str(out), "--epochs", "1"]) == 0
    assert len((out / "history.log").read_text().splitlines()) == 1
    import json

    conf = json.loads((out / "config.json").read_text())
    assert (conf["embed"], conf["hidden"], conf["patience"]) == (8, 12, 9)


def test_train_baseline(tmp_path, data):
    out = tmp_path / "b"
    assert cli.main(["train", "--catalog", "toy", "--data", str(data), "--out", str(out), "--model", "baseline", "--layers", "16", "--epochs", "2"]) == 0
    pred = tmp_path / "p.tgt"
    assert cli.main(["predict", "--catalog", "toy", "--model", str(out / "model.ckpt"), "--src", str(data / "T.test.src"), "--out", str(pred)]) == 0
    assert len(pred.read_text().splitlines()) == 60


def test_dataset_catalog_mismatch(tmp_path, data):
    assert cli.main(["train", "--catalog", "default10", "--data", str(data), "--out", str(tmp_path)]) == 2


def test_predict_parses_and_is_idempotent(tmp_path, toy, data, model):
    args = ["predict", "--catalog", "toy", "--model", str(model / "model.ckpt"), "--src", str(data / "T.test.src")]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b"), "--width", "5"]) == 0
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    tv = L.target_vocab(toy)
    lines = (tmp_path / "a").read_text().splitlines()
    assert len(lines) == len((data / "T.test.src").read_text().splitlines())
    for line in lines:
        L.decode_output(tv.from_line(line), toy)
    assert cli.build_parser().parse_args(args + ["--out", "x"]).width == 5


def test_predict_empty_input(tmp_path, model):
    (tmp_path / "e.src").write_text("")
    assert cli.main(["predict", "--catalog", "toy", "--model", str(model / "model.ckpt"), "--src", str(tmp_path / "e.src"), "--out", str(tmp_path / "e.tgt")]) == 0
    assert (tmp_path / "e.tgt").read_text() == ""


def test_predict_wrong_catalog(tmp_path, data, model):
    args = ["predict", "--catalog", "default10", "--model", str(model / "model.ckpt"), "--src", str(data / "T.test.src"), "--out", str(tmp_path / "x")]
    assert cli.main(args) == 2


def test_eval(tmp_path, data, capsys):
    gold = str(data / "T.test.tgt")
    assert cli.main(["eval", "--catalog", "toy", "--pred", gold, "--gold", gold, "--out", str(tmp_path / "r")]) == 0
    out = capsys.readouterr().out
    assert "D: 0\n" in out and "D_se:" in out and "ratio_se:" in out
    assert "D_se" in (tmp_path / "r.csv").read_text().splitlines()[0]
    short = tmp_path / "short.tgt"
    short.write_text("\n".join((data / "T.test.tgt").read_text().splitlines()[:5]) + "\n")
    assert cli.main(["eval", "--catalog", "toy", "--pred", str(short), "--gold", gold]) == 2


def test_saa_and_bench(tmp_path, data, model, capsys):
    args = ["saa", "--catalog", "toy", "--src", str(data / "T.test.src"), "--gold", str(data / "T.test.tgt"), "--limit", "8", "--seed", "4", "--scenarios", "2,4"]
    assert cli.main(args + ["--out", str(tmp_path / "s1.csv")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "s2.csv")]) == 0
    strip = lambda p: [ln.split(",")[:4] for ln in p.read_text().splitlines()]
    assert strip(tmp_path / "s1.csv") == strip(tmp_path / "s2.csv")
    assert [r[0] for r in strip(tmp_path / "s1.csv")] == ["n_scenarios", "2", "4"]
    assert cli.build_parser().parse_args(args[:7]).scenarios == (5, 10, 25, 50, 99)
    capsys.readouterr()
    assert cli.main(["bench", "--catalog", "toy", "--model", str(model / "model.ckpt"), "--src", str(data / "T.test.src"), "--limit", "10"]) == 0
    head, row = capsys.readouterr().out.splitlines()
    assert head == "n,time_mean,time_std,time_stderr"
    assert row.startswith("10,") and float(row.split(",")[1]) > 0


def test_jobs_env_fallback(monkeypatch):
    monkeypatch.setenv("LOADCAST_THREADS", "3")
    assert cli._jobs(None) == 3
    assert cli._jobs(2) == 2
    monkeypatch.delenv("LOADCAST_THREADS")
    assert cli._jobs(None) == 1


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "loadcast.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "gen" in r.stdout
    r = subprocess.run([sys.executable, "-m", "loadcast.cli", "nope"], capture_output=True, text=True)
    assert r.returncode == 1
