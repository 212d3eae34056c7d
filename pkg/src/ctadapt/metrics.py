"""Confusion matrices, macro-averaged scores and fold aggregation."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

METRICS = ("accuracy", "precision", "recall", "f1")


def confusion(y_true, y_pred, num_classes: int) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    t = np.asarray(y_true, dtype=np.int64).reshape(-1)
    p = np.asarray(y_pred, dtype=np.int64).reshape(-1)
    if t.shape != p.shape:
        raise ValueError("y_true and y_pred differ in length")
    for arr in (t, p):
        if np.any((arr < 0) | (arr >= num_classes)):
            raise ValueError(f"class index outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def _ratio(num, den):
    den = np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(den), where=den != 0)


def per_class_scores(cm) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-class precision, recall and F1 with 0/0 taken as 0."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    precision = _ratio(tp, cm.sum(axis=0))
    recall = _ratio(tp, cm.sum(axis=1))
    f1 = _ratio(2 * precision * recall, precision + recall)
    return precision, recall, f1


def macro_scores(cm) -> dict[str, float]:
    """Accuracy plus unweighted means over all classes of precision, recall and F1."""
    cm = np.asarray(cm)
    total = cm.sum()
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or total == 0:
        raise ValueError("need a square confusion matrix with at least one count")
    precision, recall, f1 = per_class_scores(cm)
    return {
        "accuracy": float(np.trace(cm) / total),
        "precision": float(precision.mean()),
        "recall": float(recall.mean()),
        "f1": float(f1.mean()),
    }


def aggregate_folds(values, sample_std: bool = False) -> tuple[float, float]:
    """Mean and population std (sample std with ``sample_std``; a single value has std 0)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("no values to aggregate")
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1 if sample_std else 0))


@dataclass
class ResultMatrix:
    """Per-fold scores for each (training regime, test distortion) cell."""

    regimes: list[str]
    tests: list[str]
    scores: dict  # (regime, test) -> list of macro_scores dicts, one per fold

    def cell(self, regime: str, test: str, metric: str) -> tuple[float, float]:
        return aggregate_folds([s[metric] for s in self.scores[(regime, test)]])

    def to_csv(self, metric: str) -> str:
        """Rows = test distortions, columns = training regimes, cells ``mean±std``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["test"] + self.regimes)
        for test in self.tests:
            row = [test]
            for regime in self.regimes:
                mean, std = self.cell(regime, test, metric)
                row.append(f"{mean:.3f}±{std:.3f}")
            w.writerow(row)
        return buf.getvalue()

    def to_json(self, metric: str) -> str:
        cells = []
        for regime in self.regimes:
            for test in self.tests:
                mean, std = self.cell(regime, test, metric)
                cells.append({"regime": regime, "test": test, "mean": mean, "std": std,
                              "folds": [s[metric] for s in self.scores[(regime, test)]]})
        doc = {"metric": metric, "regimes": self.regimes, "tests": self.tests, "cells": cells}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
