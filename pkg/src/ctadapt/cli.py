"""``ctadapt`` command-line entry point.

Exit codes: 0 ok, 1 other failure (including usage errors), 2 I/O,
3 configuration, 4 incompatible data or checkpoint.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import zipfile
from pathlib import Path

import jsonschema
import numpy as np

from .dann import SCHEDULES, DannModel, LambdaSchedule, TrainConfig, evaluate, progress, \
    schedule_value
from .dataset import (
    NUM_CLASSES, SPLITS, ArchiveError, LabeledDataset, read_npz, write_distorted_archives,
    write_npz,
)
from .distortion import DEFAULT_DISTORTIONS, spec_from_dict
from .experiments import (
    REGIMES, TEST_ORDER, DataMissingError, ExperimentPlan, archive_path, atomic_write,
    load_domains, run_one,
)
from .metrics import confusion, macro_scores

EXIT_OK, EXIT_OTHER, EXIT_IO, EXIT_CONFIG, EXIT_COMPAT = 0, 1, 2, 3, 4
CHECKPOINT_FORMAT = "ctadapt-checkpoint/1"

_OPT_INT = {"type": ["integer", "null"], "minimum": 1}
CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "data_dir": {"type": "string"},
        "out_dir": {"type": "string"},
        "master_seed": {"type": "integer", "minimum": 0},
        "distortions": {
            "type": "array", "minItems": 1,
            "items": {"type": "object", "required": ["kind"],
                      "properties": {"kind": {"enum": ["identity", "uniform_noise", "rotate90",
                                                       "ring_artifact"]}}},
        },
        "experiment": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "folds": {"type": "integer", "minimum": 2},
                "n_train": _OPT_INT, "n_val": _OPT_INT, "n_test": _OPT_INT,
                "regimes": {"type": "array", "items": {"type": "string"}},
            },
        },
        "train": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "lr0": {"type": "number", "exclusiveMinimum": 0},
                "epochs": {"type": "integer", "minimum": 1},
                "weight_decay": {"type": "number", "minimum": 0},
                "batch_size": {"type": "integer", "minimum": 2},
                "reduction": {"enum": ["sum", "mean"]},
                "hidden": {"type": "integer", "minimum": 1},
                "features": {"type": "integer", "minimum": 1},
                "dropout": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "schedule": {
                    "type": "object", "additionalProperties": False, "required": ["kind"],
                    "properties": {"kind": {"enum": list(SCHEDULES)},
                                   "gamma": {"type": "number"},
                                   "value": {"type": "number", "minimum": 0, "maximum": 1}},
                },
            },
        },
    },
}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(EXIT_OTHER, f"usage error: {message}")


# -- config -------------------------------------------------------------------

def load_config(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read config {path}: {exc.strerror}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}")
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise CliError(EXIT_CONFIG, f"{path}: field '{where}': {exc.message}") from None
    try:
        _specs(cfg)
        train_config(cfg)
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"{path}: {exc}") from None
    return cfg


def _specs(cfg: dict):
    if "distortions" not in cfg:
        return DEFAULT_DISTORTIONS
    return tuple(spec_from_dict(d) for d in cfg["distortions"])


def train_config(cfg: dict) -> TrainConfig:
    t = dict(cfg.get("train", {}))
    t.setdefault("epochs", 15)
    if "schedule" in t:
        t["schedule"] = LambdaSchedule(**t["schedule"])
    return TrainConfig(**t)


def plan_for(cfg: dict, exp_id: int, regimes=None) -> ExperimentPlan:
    e = cfg.get("experiment", {})
    defaults = ExperimentPlan(1)
    if regimes is None and "regimes" in e:
        regimes = e["regimes"]
    try:
        return ExperimentPlan(
            exp_id, train_config(cfg), folds=e.get("folds", defaults.folds),
            master_seed=cfg.get("master_seed", 0),
            n_train=e.get("n_train", defaults.n_train), n_val=e.get("n_val", defaults.n_val),
            n_test=e.get("n_test", defaults.n_test),
            regimes=None if regimes is None else tuple(regimes))
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None


def _require(cfg: dict, key: str, flag_value=None) -> str:
    value = flag_value or cfg.get(key)
    if not value:
        raise CliError(EXIT_CONFIG, f"config field '{key}' is required for this command")
    return value


# -- checkpoints --------------------------------------------------------------

def checkpoint_doc(model: DannModel, meta: dict) -> dict:
    params = {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()}
              for k, v in model.state().items()}
    return {"format": CHECKPOINT_FORMAT, "in_features": model.in_features,
            "num_classes": model.num_classes, "hidden": model.hidden,
            "features": model.features, "dropout": model.dropout, **meta, "params": params}


def dump_checkpoint(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def load_checkpoint(path) -> tuple[DannModel, dict]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read checkpoint {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_COMPAT, f"{path} is not a checkpoint: {exc.msg}") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CliError(EXIT_COMPAT, f"{path}: unknown checkpoint format")
    try:
        model = DannModel(doc["in_features"], doc["num_classes"], doc["hidden"],
                          doc["features"], doc["dropout"])
        model.load_state({k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"])
                          for k, v in doc["params"].items()})
    except (KeyError, ValueError, TypeError) as exc:
        raise CliError(EXIT_COMPAT, f"{path}: malformed checkpoint ({exc})") from exc
    return model, doc


def _read_archive(path) -> dict[str, LabeledDataset]:
    try:
        return read_npz(path)
    except FileNotFoundError as exc:
        raise CliError(EXIT_IO, f"no such archive: {path}") from exc
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc}") from exc
    except (ArchiveError, ValueError, zipfile.BadZipFile) as exc:
        raise CliError(EXIT_COMPAT, f"{path}: {exc}") from exc


# -- commands -----------------------------------------------------------------

def cmd_synth(args) -> int:
    from .phantoms import organ_dataset
    sizes = {"train": args.train, "val": args.val, "test": args.test}
    splits = {}
    for k, split in enumerate(SPLITS):
        images, labels = organ_dataset(sizes[split], seed=args.seed * 3 + k)
        splits[split] = LabeledDataset(images, labels, split)
    try:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        write_npz(splits, args.out)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {args.out}: {exc}") from exc
    print(f"wrote {args.out}: " + ", ".join(f"{s} {sizes[s]}" for s in SPLITS))
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = load_config(args.config) if args.config else {}
    splits = _read_archive(args.input)
    try:
        manifests = write_distorted_archives(splits, _specs(cfg), args.seed, args.out,
                                             args.subset)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write to {args.out}: {exc}") from exc
    for m in manifests:
        print(f"{m['spec']['kind']:>14}  {m['digest'][:16]}  " +
              " ".join(f"{s}={n}" for s, n in m["counts"].items()))
    return EXIT_OK


def _find_regime(name: str):
    for exp_id, regimes in REGIMES.items():
        for r in regimes:
            if r.name == name:
                return exp_id, r
    known = sorted(r.name for rs in REGIMES.values() for r in rs)
    raise CliError(EXIT_CONFIG, f"unknown regime {name!r}; choose from {known}")


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    exp_id, regime = _find_regime(args.regime)
    plan = plan_for(cfg, exp_id, regimes=(regime.name,))
    if not 0 <= args.fold < plan.folds:
        raise CliError(EXIT_CONFIG, f"fold {args.fold} out of range for {plan.folds} folds")
    data_dir = _require(cfg, "data_dir", args.data)
    out_dir = Path(_require(cfg, "out_dir", args.out))
    try:
        domains = load_domains(data_dir, plan)
    except DataMissingError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc
    res = run_one(plan, regime, args.fold, domains)
    model = res.pop("model")
    stem = f"{regime.name.replace(':', '-')}_{args.fold}"
    meta = {"regime": regime.name, "fold": args.fold, "master_seed": plan.master_seed,
            "train": plan.train.to_dict()}
    text = dump_checkpoint(checkpoint_doc(model, meta))
    log = "".join(json.dumps(vars(e), sort_keys=True) + "\n" for e in res["log"])
    try:
        atomic_write(out_dir / "checkpoints" / f"{stem}.json", text)
        atomic_write(out_dir / "logs" / f"{stem}.jsonl", log)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write to {out_dir}: {exc}") from exc
    digest = hashlib.sha256(text.encode()).hexdigest()
    print(json.dumps({"checkpoint": str(out_dir / "checkpoints" / f"{stem}.json"),
                      "sha256": digest, "scores": res["scores"]}, indent=2, sort_keys=True))
    return EXIT_OK


def _test_sets(path) -> dict[str, LabeledDataset]:
    path = Path(path)
    if path.is_dir():
        out = {}
        for domain in TEST_ORDER:
            p = archive_path(path, domain)
            if p.exists():
                out[domain] = _read_archive(p)["test"]
        if not out:
            raise CliError(EXIT_IO, f"no distorted archives in {path}")
        return out
    return {path.stem: _read_archive(path)["test"]}


def cmd_eval(args) -> int:
    model, doc = load_checkpoint(args.checkpoint)
    results = {}
    for name, ds in _test_sets(args.test).items():
        pixels = int(np.prod(ds.images.shape[1:]))
        if pixels != model.in_features:
            raise CliError(EXIT_COMPAT, f"{name}: images of shape {ds.images.shape[1:]} do not "
                                        f"fit a checkpoint with {model.in_features} inputs")
        if len(ds) and int(ds.labels.max()) >= model.num_classes:
            raise CliError(EXIT_COMPAT, f"{name}: label {int(ds.labels.max())} outside the "
                                        f"checkpoint's {model.num_classes} classes")
        if len(ds) == 0:
            raise CliError(EXIT_COMPAT, f"{name}: empty test split")
        preds = evaluate(model, ds)
        results[name] = macro_scores(confusion(ds.labels, preds, model.num_classes))
        if args.predictions:
            results[name]["predictions"] = preds.tolist()
    text = json.dumps({"checkpoint": str(args.checkpoint), "results": results},
                      indent=2, sort_keys=True) + "\n"
    if args.out:
        try:
            atomic_write(args.out, text)
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot write {args.out}: {exc}") from exc
    sys.stdout.write(text)
    return EXIT_OK


def cmd_experiment(args) -> int:
    from .experiments import run_experiment
    cfg = load_config(args.config)
    plan = plan_for(cfg, args.id)
    data_dir = _require(cfg, "data_dir", args.data)
    out_dir = _require(cfg, "out_dir", args.out)
    try:
        matrix = run_experiment(plan, data_dir, out_dir, jobs=args.jobs)
    except DataMissingError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc
    except OSError as exc:
        raise CliError(EXIT_IO, f"I/O failure: {exc}") from exc
    sys.stdout.write(matrix.to_csv("accuracy"))
    return EXIT_OK


def cmd_schedules(args) -> int:
    if args.epochs < 1:
        raise CliError(EXIT_CONFIG, "--epochs must be >= 1")
    lines = [",".join(("epoch", "p") + SCHEDULES)]
    for e in range(args.epochs):
        p = progress(e, args.epochs)
        vals = [schedule_value(LambdaSchedule(k), p) for k in SCHEDULES]
        lines.append(",".join([str(e), f"{p:.6f}"] + [f"{v:.6f}" for v in vals]))
    print("\n".join(lines))
    return EXIT_OK


def cmd_check(args) -> int:
    from .selfcheck import run_checks
    failed = 0
    for name, ok, detail in run_checks(flip_grl=args.flip_grl):
        print(f"{'PASS' if ok else 'FAIL'}  {name:<22} {detail}")
        failed += not ok
    return EXIT_OK if failed == 0 else EXIT_OTHER


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ctadapt", description="CT artifact simulation and domain adaptation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic OrganAMNIST-like archive")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--train", type=int, default=2000)
    s.add_argument("--val", type=int, default=500)
    s.add_argument("--test", type=int, default=1000)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("generate", help="write the four distorted copies of an archive")
    s.add_argument("--input", required=True, help="MedMNIST-style .npz archive")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, default=0, help="master seed")
    s.add_argument("--subset", type=int, help="keep the first N images of each split")
    s.add_argument("--config", help="JSON config (only 'distortions' is used)")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("train", help="train one regime on one fold")
    s.add_argument("--config", required=True)
    s.add_argument("--regime", required=True)
    s.add_argument("--fold", type=int, default=0)
    s.add_argument("--data", help="overrides config data_dir")
    s.add_argument("--out", help="overrides config out_dir")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="score a checkpoint on test data")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--test", required=True, help="archive or directory of distorted archives")
    s.add_argument("--out", help="also write the metrics JSON here")
    s.add_argument("--predictions", action="store_true", help="include predicted classes")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("experiment", help="run experiment 1, 2 or 3")
    s.add_argument("--id", type=int, required=True, choices=sorted(REGIMES))
    s.add_argument("--config", required=True)
    s.add_argument("--data", help="overrides config data_dir")
    s.add_argument("--out", help="overrides config out_dir")
    s.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("schedules", help="print lambda for every schedule at each epoch (CSV)")
    s.add_argument("--epochs", type=int, default=50)
    s.set_defaults(func=cmd_schedules)

    s = sub.add_parser("check", help="run the built-in invariant checks")
    s.add_argument("--flip-grl", action="store_true",
                   help="mutation test: use a reversal layer with the wrong sign")
    s.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"ctadapt: {exc}", file=sys.stderr)
        return exc.code
    except KeyboardInterrupt:
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
