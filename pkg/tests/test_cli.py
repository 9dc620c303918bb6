import json
import os
import subprocess
import sys

import pytest

from scrubsim import cli


def run_cli(args):
    return cli.main(args)


def dir_bytes(path):
    out = {}
    for name in sorted(os.listdir(path)):
        with open(os.path.join(path, name), "rb") as f:
            out[name] = f.read()
    return out


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    path = str(tmp_path_factory.mktemp("data") / "ds")
    assert run_cli(["gen-data", "--n", "3", "--seed", "5",
                    "--out", path]) == 0
    return path


def test_gen_data_writes_dataset_and_vocab(tiny_dataset):
    names = os.listdir(tiny_dataset)
    assert "manifest.yaml" in names and "vocabulary.txt" in names
    assert sum(n.endswith(".bin") for n in names) == 3


def test_gen_data_is_byte_identical_across_runs(tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert run_cli(["gen-data", "--n", "2", "--seed", "6", "--out", a]) == 0
    assert run_cli(["gen-data", "--n", "2", "--seed", "6", "--out", b]) == 0
    assert dir_bytes(a) == dir_bytes(b)


def test_train_writes_checkpoint_and_log(tiny_dataset, tmp_path):
    ckpt = str(tmp_path / "w.ckpt")
    log = str(tmp_path / "train.log")
    assert run_cli(["train", "--dataset", tiny_dataset, "--steps", "3",
                    "--checkpoint", ckpt, "--log", log]) == 0
    assert os.path.exists(ckpt)
    lines = [json.loads(l) for l in open(log)]
    assert len(lines) == 3
    assert {"step", "loss", "seconds"} <= set(lines[0])


def test_eval_expert_writes_report(tmp_path, capsys):
    report = str(tmp_path / "report.json")
    assert run_cli(["eval", "--suite", "on_table", "--trials", "2",
                    "--seeds", "300", "--report", report]) == 0
    out = capsys.readouterr().out
    assert "on_table" in out
    doc = json.load(open(report))
    assert doc["tasks"]["on_table"]["trials"] == 2
    assert doc["tasks"]["on_table"]["rate"] == 1.0


def test_eval_rejects_unknown_task():
    assert run_cli(["eval", "--suite", "bogus_task", "--trials", "1"]) == 2


def test_replay_reproduces_recorded_outcome(tiny_dataset, capsys):
    assert run_cli(["replay", "--dataset", tiny_dataset,
                    "--episode", "0"]) == 0
    assert "success" in capsys.readouterr().out


def test_replay_quantized(tiny_dataset):
    assert run_cli(["replay", "--dataset", tiny_dataset, "--episode", "1",
                    "--quantize"]) == 0


def test_replay_bad_index(tiny_dataset):
    assert run_cli(["replay", "--dataset", tiny_dataset,
                    "--episode", "99"]) == 2


def test_console_script_entry_point():
    out = subprocess.run([sys.executable, "-m", "scrubsim.cli", "--help"],
                         capture_output=True, text=True)
    assert out.returncode == 0
    for sub in ("gen-data", "train", "eval", "serve", "replay"):
        assert sub in out.stdout
