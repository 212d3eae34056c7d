"""The three experimental designs: single-distortion training, union training and DANN.

A data directory holds one archive per distortion (``{kind}.npz``, written by
``ctadapt generate``) whose train/val/test splits are aligned image by image.
Each experiment pools train+val, splits the pool into k folds, trains one
model per (regime, fold) on the other folds and evaluates it on all four
test sets.
"""
from __future__ import annotations

import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dann import DannModel, EpochLog, TrainConfig, evaluate, train
from .dataset import (
    NUM_CLASSES, LabeledDataset, UnlabeledView, concat, derive_seed, read_npz, split_folds,
)
from .metrics import METRICS, ResultMatrix, confusion, macro_scores

# short names used in result tables, keyed by distortion kind
DOMAINS = {"identity": "none", "uniform_noise": "noise", "rotate90": "rot90",
           "ring_artifact": "ring"}
KINDS = {v: k for k, v in DOMAINS.items()}
TEST_ORDER = ("none", "noise", "rot90", "ring")


@dataclass(frozen=True)
class Regime:
    name: str
    sources: tuple[str, ...]     # labelled training domains
    target: str | None = None    # unlabelled domain for DANN


REGIMES = {
    1: (Regime("none", ("none",)), Regime("noise", ("noise",)),
        Regime("rot90", ("rot90",)), Regime("ring", ("ring",))),
    2: (Regime("none+noise+rot90", ("none", "noise", "rot90")),
        Regime("none+noise+ring", ("none", "noise", "ring"))),
    3: (Regime("dann:ring", ("none",), "ring"), Regime("dann:rot90", ("none",), "rot90")),
}


class DataMissingError(FileNotFoundError):
    pass


@dataclass(frozen=True)
class ExperimentPlan:
    exp_id: int
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=15))
    folds: int = 2
    master_seed: int = 0
    n_train: int | None = 2000
    n_val: int | None = 500
    n_test: int | None = 1000
    regimes: tuple[str, ...] | None = None  # subset of the experiment's regimes

    def __post_init__(self):
        if self.exp_id not in REGIMES:
            raise ValueError(f"experiment id must be one of {sorted(REGIMES)}, got {self.exp_id}")
        if self.regimes is not None:
            known = {r.name for r in REGIMES[self.exp_id]}
            unknown = set(self.regimes) - known
            if unknown:
                raise ValueError(f"unknown regimes {sorted(unknown)} for experiment "
                                 f"{self.exp_id}; choose from {sorted(known)}")

    def selected(self) -> tuple[Regime, ...]:
        return tuple(r for r in REGIMES[self.exp_id]
                     if self.regimes is None or r.name in self.regimes)


def archive_path(data_dir, domain: str) -> Path:
    return Path(data_dir) / f"{KINDS[domain]}.npz"


def _head(ds: LabeledDataset, n: int | None) -> LabeledDataset:
    return ds if n is None or n >= len(ds) else ds.subset(np.arange(n), ds.name)


def load_domains(data_dir, plan: ExperimentPlan) -> dict[str, dict[str, LabeledDataset]]:
    """``{domain: {"pool": train+val, "test": test}}`` for every domain the plan touches."""
    out = {}
    for domain in TEST_ORDER:
        path = archive_path(data_dir, domain)
        if not path.exists():
            raise DataMissingError(
                f"missing distorted copy {path}; create it with "
                f"`ctadapt generate --input ARCHIVE --out {data_dir}`")
        splits = read_npz(path)
        pool = concat([_head(splits["train"], plan.n_train), _head(splits["val"], plan.n_val)],
                      domain)
        out[domain] = {"pool": pool, "test": _head(splits["test"], plan.n_test)}
    sizes = {len(d["pool"]) for d in out.values()}
    if len(sizes) != 1:
        raise ValueError(f"distorted copies are not aligned: pool sizes {sorted(sizes)}")
    return out


def _run_seed(plan: ExperimentPlan, fold: int) -> int:
    return int(derive_seed(plan.master_seed, 100, fold).generate_state(1)[0])


def run_one(plan: ExperimentPlan, regime: Regime, fold: int, domains) -> dict:
    """Train and evaluate one (regime, fold) cell group."""
    folds = split_folds(len(domains["none"]["pool"]), plan.folds, plan.master_seed)
    train_idx, val_idx = folds.fold(fold)
    seed = _run_seed(plan, fold)
    cfg = replace(plan.train, seed=seed, dann_enabled=regime.target is not None)

    source = concat([domains[d]["pool"].subset(train_idx) for d in regime.sources], "source")
    val = concat([domains[d]["pool"].subset(val_idx) for d in regime.sources], "val")
    target = val_target = None
    if regime.target is not None:
        target = UnlabeledView(domains[regime.target]["pool"].subset(train_idx, regime.target))
        val_target = domains[regime.target]["pool"].subset(val_idx)

    side = source.images.shape[1] * source.images.shape[2]
    model = DannModel(side, NUM_CLASSES, cfg.hidden, cfg.features, cfg.dropout, seed)
    log = train(model, source, target, cfg, val=val, val_target=val_target)

    scores = {}
    for test in TEST_ORDER:
        ds = domains[test]["test"]
        cm = confusion(ds.labels, evaluate(model, ds), NUM_CLASSES)
        scores[test] = macro_scores(cm)
    return {"regime": regime.name, "fold": fold, "scores": scores, "log": log,
            "target_label_reads": 0 if target is None else target.label_reads, "model": model}


def _worker(args):
    plan, regime, fold, data_dir = args
    res = run_one(plan, regime, fold, load_domains(data_dir, plan))
    del res["model"]
    return res


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _log_lines(log: list[EpochLog]) -> str:
    return "".join(json.dumps(vars(e), sort_keys=True) + "\n" for e in log)


def run_experiment(plan: ExperimentPlan, data_dir, out_dir, jobs: int = 1) -> ResultMatrix:
    """Run every (regime, fold) of ``plan`` and write matrices, logs and a summary.

    Outputs land in ``out_dir/exp{N}``. Results do not depend on ``jobs``.
    """
    domains = load_domains(data_dir, plan)
    regimes = plan.selected()
    tasks = [(r, f) for r in regimes for f in range(plan.folds)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_worker, [(plan, r, f, data_dir) for r, f in tasks]))
    else:
        results = [run_one(plan, r, f, domains) for r, f in tasks]

    dest = Path(out_dir) / f"exp{plan.exp_id}"
    scores = {(r.name, t): [None] * plan.folds for r in regimes for t in TEST_ORDER}
    reads = {}
    for res in results:
        for test, s in res["scores"].items():
            scores[(res["regime"], test)][res["fold"]] = s
        reads[f"{res['regime']}/{res['fold']}"] = res["target_label_reads"]
        name = res["regime"].replace(":", "-")
        atomic_write(dest / "logs" / f"{name}_{res['fold']}.jsonl", _log_lines(res["log"]))

    matrix = ResultMatrix([r.name for r in regimes], list(TEST_ORDER), scores)
    for metric in METRICS:
        atomic_write(dest / f"{metric}.csv", matrix.to_csv(metric))
        atomic_write(dest / f"{metric}.json", matrix.to_json(metric))
    summary = {"experiment": plan.exp_id, "folds": plan.folds, "master_seed": plan.master_seed,
               "train": plan.train.to_dict(), "regimes": [r.name for r in regimes],
               "tests": list(TEST_ORDER), "target_label_reads": reads}
    atomic_write(dest / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return matrix
