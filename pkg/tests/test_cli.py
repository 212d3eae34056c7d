import hashlib
import json

import numpy as np
import pytest

from conftest import write_config
from ctadapt.cli import main
from ctadapt.dann import LambdaSchedule, schedule_value
from ctadapt.dataset import content_digest, read_npz
from ctadapt.metrics import confusion, macro_scores


def tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file()}


def test_help_and_usage_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    assert main(["experiment", "--id", "4", "--config", "x.json"]) == 1
    assert main([]) == 1
    assert "usage error" in capsys.readouterr().err


def test_generate_is_deterministic(small_data, tmp_path):
    raw = small_data / "raw.npz"
    for out in ("a", "b"):
        assert main(["generate", "--input", str(raw), "--out", str(tmp_path / out),
                     "--seed", "7"]) == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")
    assert tree_bytes(tmp_path / "a") == tree_bytes(small_data / "copies")
    manifest = json.loads((tmp_path / "a" / "identity.manifest.json").read_text())
    assert manifest["digest"] == content_digest(read_npz(raw))


def test_generate_subset_and_seed(small_data, tmp_path):
    raw = str(small_data / "raw.npz")
    assert main(["generate", "--input", raw, "--out", str(tmp_path / "s"), "--seed", "7",
                 "--subset", "10"]) == 0
    splits = read_npz(tmp_path / "s" / "ring_artifact.npz")
    assert [len(splits[s]) for s in ("train", "val", "test")] == [10, 10, 10]
    assert main(["generate", "--input", raw, "--out", str(tmp_path / "o"), "--seed", "8",
                 "--subset", "10"]) == 0
    a = read_npz(tmp_path / "s" / "uniform_noise.npz")["train"].images
    b = read_npz(tmp_path / "o" / "uniform_noise.npz")["train"].images
    assert not np.array_equal(a, b)


def test_generate_io_and_format_errors(tmp_path):
    assert main(["generate", "--input", str(tmp_path / "nope.npz"), "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.npz"
    bad.write_bytes(b"not a zip")
    assert main(["generate", "--input", str(bad), "--out", str(tmp_path)]) == 4


def test_config_errors(small_data, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"data_dir": "x",\n "train": {"epochs": }}')
    assert main(["experiment", "--id", "1", "--config", str(bad)]) == 3
    assert "line 2" in capsys.readouterr().err
    bad.write_text(json.dumps({"train": {"epochs": 0}}))
    assert main(["experiment", "--id", "1", "--config", str(bad)]) == 3
    assert "train/epochs" in capsys.readouterr().err
    bad.write_text(json.dumps({"bogus": 1}))
    assert main(["experiment", "--id", "1", "--config", str(bad)]) == 3
    assert main(["experiment", "--id", "1", "--config", str(tmp_path / "none.json")]) == 2


def test_experiment_missing_data(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", tmp_path / "empty", tmp_path / "out")
    assert main(["experiment", "--id", "1", "--config", str(cfg), "--jobs", "1"]) == 2
    assert "generate" in capsys.readouterr().err


def test_experiment_byte_identical(small_data, tmp_path):
    for out in ("a", "b"):
        cfg = write_config(tmp_path / f"{out}.json", small_data / "copies", tmp_path / out)
        assert main(["experiment", "--id", "3", "--config", str(cfg), "--jobs", "1"]) == 0
    a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
    assert a == b and "exp3/accuracy.csv" in a


def test_train_then_eval(small_data, tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", small_data / "copies", tmp_path / "out")
    assert main(["train", "--config", str(cfg), "--regime", "dann:ring", "--fold", "1"]) == 0
    first = json.loads(capsys.readouterr().out)
    ckpt = tmp_path / "out" / "checkpoints" / "dann-ring_1.json"
    assert hashlib.sha256(ckpt.read_bytes()).hexdigest() == first["sha256"]
    assert main(["train", "--config", str(cfg), "--regime", "dann:ring", "--fold", "1"]) == 0
    assert json.loads(capsys.readouterr().out)["sha256"] == first["sha256"]

    ring = small_data / "copies" / "ring_artifact.npz"
    assert main(["eval", "--checkpoint", str(ckpt), "--test", str(ring), "--predictions",
                 "--out", str(tmp_path / "eval.json")]) == 0
    capsys.readouterr()
    res = json.loads((tmp_path / "eval.json").read_text())["results"]["ring_artifact"]
    labels = read_npz(ring)["test"].labels
    expected = macro_scores(confusion(labels, res.pop("predictions"), 11))
    assert res == pytest.approx(expected, abs=1e-12)
    assert res["accuracy"] == pytest.approx(first["scores"]["ring"]["accuracy"], abs=1e-12)

    assert main(["eval", "--checkpoint", str(ckpt), "--test", str(small_data / "copies")]) == 0
    assert set(json.loads(capsys.readouterr().out)["results"]) == {"none", "noise", "rot90",
                                                                     "ring"}


def test_train_errors(small_data, tmp_path):
    cfg = write_config(tmp_path / "c.json", small_data / "copies", tmp_path / "out")
    assert main(["train", "--config", str(cfg), "--regime", "nope"]) == 3
    assert main(["train", "--config", str(cfg), "--regime", "none", "--fold", "5"]) == 3


def test_eval_errors(small_data, tmp_path):
    ring = str(small_data / "copies" / "ring_artifact.npz")
    assert main(["eval", "--checkpoint", str(tmp_path / "x.json"), "--test", ring]) == 2
    junk = tmp_path / "junk.json"
    junk.write_text("{}")
    assert main(["eval", "--checkpoint", str(junk), "--test", ring]) == 4
    junk.write_text("[1,")
    assert main(["eval", "--checkpoint", str(junk), "--test", ring]) == 4


def test_schedules_table(capsys):
    assert main(["schedules", "--epochs", "5"]) == 0
    lines = capsys.readouterr().out.splitlines()
    header = lines[0].split(",")
    assert header[:2] == ["epoch", "p"] and len(lines) == 6
    last = dict(zip(header, lines[-1].split(",")))
    assert float(last["p"]) == 1.0
    assert float(last["logistic"]) == pytest.approx(
        schedule_value(LambdaSchedule("logistic"), 1.0), abs=1e-6)
    assert main(["schedules", "--epochs", "0"]) == 3


def test_check_catches_flipped_reversal(capsys):
    assert main(["check"]) == 0
    assert "FAIL" not in capsys.readouterr().out
    assert main(["check", "--flip-grl"]) == 1
    out = capsys.readouterr().out
    assert "FAIL  adversarial-gradient" in out
