import csv
import json
import subprocess
import sys

import pytest

from smartcrop.cli import REPORT_COLUMNS, main

TINY = """
seed = 0
d_model = 8
n_layers = 1
n_heads = 2
max_positions = 192
train_examples = 24
epochs = 1
batch_size = 8
warmup_steps = 1
eval_examples = 4
taus = 0.5, 0.9
resamples = 200
deltas = -0.5, 0.0, 0.5
donor_tasks = arith
donor_examples = 4
control_repetitions = 2
l_new_grid = 32, 64
bins_tau = 0.9
"""


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.cfg"
    cfg.write_text(TINY + f"output_dir = {root / 'out'}\nweights = {root / 'out' / 'model.bin'}\n")
    assert main(["train", str(cfg)]) == 0
    return root, cfg


def test_train_outputs(trained):
    root, _ = trained
    out = root / "out"
    assert (out / "model.bin").read_bytes()[:8] == b"SCDLMW\x00\x00"
    rows = list(csv.reader((out / "loss.csv").open()))
    assert rows[0] == ["step", "loss"] and len(rows) == 1 + 3
    manifest = json.loads((out / "manifest-train.json").read_text())
    assert manifest["config"]["seed"] == 0
    assert set(manifest["artifacts"]) == {"model.bin", "loss.csv"}


def test_eval_and_report(trained, capsys):
    root, cfg = trained
    out = root / "out"
    code = main(["eval", str(cfg), "--workers", "2"])
    assert code == 0
    summary = list(csv.DictReader((out / "summary.csv").open()))
    assert [r["method"] for r in summary] == ["FC", "SC-0.5", "SC-0.9"]
    assert len((out / "instances.jsonl").read_text().splitlines()) == 3 * 4
    assert not (out / "failures.txt").exists()
    assert main(["report", str(cfg)]) == 0
    rows = list(csv.reader((out / "report.csv").open(encoding="utf-8")))
    assert rows[0] == REPORT_COLUMNS
    assert rows[1][0] == "FC" and rows[1][4] == "" and rows[1][5] == ""
    assert (out / "bins.csv").exists()


def test_eval_is_byte_reproducible(trained, tmp_path):
    root, cfg = trained
    outs = []
    for name in ("a", "b"):
        c = tmp_path / f"{name}.cfg"
        c.write_text(cfg.read_text() + f"output_dir = {tmp_path / name}\n")
        assert main(["eval", str(c)]) == 0
        outs.append(((tmp_path / name / "summary.csv").read_bytes(),
                     (tmp_path / name / "instances.jsonl").read_bytes()))
    assert outs[0] == outs[1]


def test_sweep_control_invariance(trained):
    root, cfg = trained
    out = root / "out"
    assert main(["sweep", str(cfg)]) == 0
    rows = list(csv.DictReader((out / "sweep.csv").open()))
    assert [float(r["delta"]) for r in rows] == [-0.5, 0.0, 0.5]
    assert set(rows[0]) == {"delta", "mean", "ci_low", "ci_high", "control_mean", "fc_mean"}
    assert main(["control", str(cfg)]) == 0
    assert (out / "control.csv").exists()
    assert main(["invariance", str(cfg)]) == 0
    inv = list(csv.DictReader((out / "invariance.csv").open()))
    assert [int(r["L_new"]) for r in inv] == [32, 64]
    assert all(float(r["max"]) <= int(r["L_new"]) for r in inv)


def test_decode_modes(trained, tmp_path):
    root, _ = trained
    weights = str(root / "out" / "model.bin")
    base = ["decode", "--weights", weights, "--prompt", "<copy> w03 0 4 <sep>", "--l-new", "24"]
    assert main(base + ["--trace", str(tmp_path / "fc.jsonl")]) == 0
    fc = json.loads((tmp_path / "fc.jsonl").read_text())
    assert fc["mode"] == "full-context" and "tau" not in fc
    for name in ("a", "b"):
        assert main(base + ["--mode", "sc", "--tau", "0.9", "--trace", str(tmp_path / f"{name}.jsonl")]) == 0
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    sc = json.loads((tmp_path / "a.jsonl").read_text())
    assert sc["tau"] == 0.9 and sc["L_hat"] is not None


@pytest.mark.parametrize("extra", [["--mode", "fc", "--tau", "0.9"], ["--mode", "sc", "--tau", "1.5"]])
def test_decode_usage_errors(trained, extra, tmp_path):
    root, _ = trained
    argv = ["decode", "--weights", str(root / "out" / "model.bin"), "--prompt", "<copy> w03 0 4 <sep>",
            "--trace", str(tmp_path / "t.jsonl")] + extra
    assert main(argv) == 2


def test_missing_config_and_weights(tmp_path, capsys):
    assert main(["eval", str(tmp_path / "absent.cfg")]) == 2
    assert "absent.cfg" in capsys.readouterr().err
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"output_dir = {tmp_path / 'o'}\nweights = {tmp_path / 'none.bin'}\n")
    assert main(["eval", str(cfg)]) == 2
    assert "none.bin" in capsys.readouterr().err


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "smartcrop", "defaults"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "taus = " in res.stdout
