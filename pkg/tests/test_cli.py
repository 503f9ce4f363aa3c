import json

import pytest

from bitsnn.cli import REPORT_HEADER, run


@pytest.fixture
def cfg_file(tmp_path, digits_paths):
    train_p, test_p = digits_paths

    def write(extra=""):
        p = tmp_path / "c.toml"
        p.write_text(f'[data]\ntrain_path = "{train_p}"\ntest_path = "{test_p}"\n[train]\nepochs = 1\n{extra}')
        return p

    return write


def test_help_lists_config_keys(capsys):
    assert run(["train", "--help"]) == 0
    out = capsys.readouterr().out
    for key in ("B_w_tar", "lambda3", "epochs", "train_path", "mode"):
        assert key in out


def test_usage_errors_exit_1(capsys):
    assert run(["train", "--config", "x.toml", "--bogus"]) == 1
    assert run(["nope"]) == 1
    assert run([]) == 1


def test_missing_file_exit_2(tmp_path, capsys):
    assert run(["train", "--config", str(tmp_path / "missing.toml")]) == 2
    assert run(["eval", "--ckpt", str(tmp_path / "none"), "--data", "x"]) == 2
    assert "not found" in capsys.readouterr().err


def test_bad_config_value_exit_1(cfg_file, tmp_path):
    assert run(["train", "--config", str(cfg_file()), "--epochs", "0", "--out", str(tmp_path / "o")]) == 1
    assert run(["train", "--config", str(cfg_file("momentum = \"fast\"\n")), "--out", str(tmp_path / "o")]) == 1


def test_train_eval_report(cfg_file, digits_paths, tmp_path, capsys):
    out = tmp_path / "run"
    assert run(["train", "--config", str(cfg_file()), "--out", str(out), "--seed", "2"]) == 0
    for name in ("log.csv", "renewal.csv", "alloc.csv", "run.json", "checkpoint/manifest.json"):
        assert (out / name).exists()
    rec = json.loads((out / "run.json").read_text())
    assert rec["seed"] == 2 and rec["config_hash"] and rec["command"] == "train"
    assert len((out / "log.csv").read_text().splitlines()) == 3

    ev = tmp_path / "ev"
    assert run(["eval", "--ckpt", str(out / "checkpoint"), "--data", str(digits_paths[1]), "--out", str(ev)]) == 0
    cost = json.loads((ev / "cost_report.json").read_text())
    assert {"per_layer", "totals", "exp_act"} <= set(cost)
    assert (ev / "cost_report.csv").read_text().splitlines()[-1].startswith("total")

    capsys.readouterr()
    assert run(["report", "--ckpt", str(out / "checkpoint"), "--data", str(digits_paths[1])]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == ",".join(REPORT_HEADER)
    assert len(lines[1].split(",")) == len(REPORT_HEADER)


def test_report_uquant_budget(cfg_file, tmp_path, capsys):
    extra = ("[bit_allocation]\ninit_W = 4\ninit_S = 4\ninit_T = 1\nlearn_bits = false\n"
             "lambda1 = 0.0\nlambda2 = 0.0\nlambda3 = 0.0\n[step_renewal]\nmode = \"off\"\n")
    out = tmp_path / "u"
    assert run(["train", "--config", str(cfg_file(extra)), "--out", str(out)]) == 0
    capsys.readouterr()
    assert run(["report", "--ckpt", str(out / "checkpoint")]) == 0
    row = capsys.readouterr().out.strip().splitlines()[1].split(",")
    assert row[0] == "4/4/1" and float(row[1]) == 16


def test_verify_theory_writes_csv(tmp_path, capsys):
    code = run(["verify-theory", "--out", str(tmp_path), "--n", "20000"])
    text = (tmp_path / "theory.csv").read_text()
    assert text.splitlines()[0] == "claim,analytic,empirical,tolerance,result"
    # the mismatch bound disagrees with simulation, so some rows fail
    assert code == (1 if ",FAIL" in text else 0)
    assert run(["verify-theory", "--out", str(tmp_path), "--n", "0"]) == 1


def test_make_dataset(tmp_path, capsys):
    assert run(["make-dataset", "--out", str(tmp_path)]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == [
        "digits-test-images-idx3-ubyte", "digits-test-labels-idx1-ubyte",
        "digits-train-images-idx3-ubyte", "digits-train-labels-idx1-ubyte"]


def test_default_out_from_env(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("BITSNN_OUT", str(tmp_path / "envout"))
    assert run(["make-dataset"]) == 0
    assert (tmp_path / "envout").is_dir()
