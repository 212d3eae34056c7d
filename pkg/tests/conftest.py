import json

import pytest

from ctadapt.cli import main


@pytest.fixture(scope="session")
def small_data(tmp_path_factory):
    """A synthetic archive and its four distorted copies, small enough for unit tests."""
    root = tmp_path_factory.mktemp("data")
    raw = root / "raw.npz"
    assert main(["synth", "--out", str(raw), "--seed", "7",
                 "--train", "120", "--val", "40", "--test", "80"]) == 0
    assert main(["generate", "--input", str(raw), "--out", str(root / "copies"),
                 "--seed", "7"]) == 0
    return root


def write_config(path, data_dir, out_dir, **train):
    cfg = {"data_dir": str(data_dir), "out_dir": str(out_dir), "master_seed": 3,
           "experiment": {"folds": 2},
           "train": {"epochs": 2, "hidden": 16, "features": 8, "batch_size": 32, **train}}
    path.write_text(json.dumps(cfg))
    return path


# filled by tests/test_acceptance.py, printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
