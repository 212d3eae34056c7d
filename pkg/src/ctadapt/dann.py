"""Domain-adversarial classifier, its loss, adaptation-rate schedules and SGD training."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .dataset import LabeledDataset, make_batches, to_unit

# inputs in [0, 1] are centred to [-1, 1] before the first layer
INPUT_MEAN = 0.5
INPUT_STD = 0.5

SCHEDULES = ("logistic", "linear_inc", "linear_dec", "parabolic_inc", "parabolic_dec",
             "constant")


@dataclass(frozen=True)
class LambdaSchedule:
    kind: str = "parabolic_inc"
    gamma: float = 10.0
    value: float = 1.0

    def __post_init__(self):
        if self.kind not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.kind!r}; expected one of {SCHEDULES}")


def schedule_value(schedule: LambdaSchedule, p: float) -> float:
    """Adaptation rate at training progress ``p`` (clamped to [0, 1])."""
    p = min(max(float(p), 0.0), 1.0)
    kind = schedule.kind
    if kind == "logistic":
        return 2.0 / (1.0 + math.exp(-schedule.gamma * p)) - 1.0
    if kind == "linear_inc":
        return p
    if kind == "linear_dec":
        return 1.0 - p
    if kind == "parabolic_inc":
        return p * p
    if kind == "parabolic_dec":
        return (1.0 - p) ** 2
    return schedule.value


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.1
    epochs: int = 50
    weight_decay: float = 1e-4
    batch_size: int = 64
    seed: int = 0
    schedule: LambdaSchedule = field(default_factory=LambdaSchedule)
    dann_enabled: bool = False
    reduction: str = "mean"
    hidden: int = 256
    features: int = 64
    dropout: float = 0.5

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.reduction not in ("sum", "mean"):
            raise ValueError("reduction must be 'sum' or 'mean'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        if isinstance(data.get("schedule"), dict):
            data["schedule"] = LambdaSchedule(**data["schedule"])
        return cls(**data)


def learning_rate(epoch: int, cfg: TrainConfig) -> float:
    return cfg.lr0 * (1.0 - epoch / cfg.epochs)


def progress(epoch: int, epochs: int) -> float:
    """Fraction of training elapsed, reaching both 0 and 1; a single epoch counts as 1."""
    return 1.0 if epochs == 1 else epoch / (epochs - 1)


class DannModel:
    """MLP feature extractor with a label head and a gradient-reversed domain head.

    ``G_f``: flatten -> linear(in, hidden) -> ReLU -> linear(hidden, features)
    -> ReLU -> dropout. ``G_y``: linear(features, C). ``G_d``: reversal ->
    linear(features, 1). Heads return logits; softmax / sigmoid live in the
    losses and in :meth:`predict_proba`.
    """

    PARAM_NAMES = ("W1", "b1", "W2", "b2", "Wy", "by", "Wd", "bd")

    def __init__(self, in_features: int, num_classes: int, hidden: int = 256,
                 features: int = 64, dropout: float = 0.5, seed: int = 0):
        self.in_features = in_features
        self.num_classes = num_classes
        self.hidden = hidden
        self.features = features
        self.dropout = dropout
        self.lam = 0.0
        rng = np.random.default_rng(seed)
        shapes = {"W1": (in_features, hidden), "W2": (hidden, features),
                  "Wy": (features, num_classes), "Wd": (features, 1)}
        self.params = {}
        for w, b in (("W1", "b1"), ("W2", "b2"), ("Wy", "by"), ("Wd", "bd")):
            fan_in, fan_out = shapes[w]
            bound = math.sqrt(6.0 / fan_in)
            self.params[w] = ad.Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), True)
            self.params[b] = ad.Tensor(np.zeros(fan_out), True)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def features_of(self, x, training: bool = False, rng=None) -> ad.Tensor:
        p = self.params
        x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
        x = ad.Tensor((x - INPUT_MEAN) / INPUT_STD)
        h = ad.relu(ad.linear(x, p["W1"], p["b1"]))
        f = ad.relu(ad.linear(h, p["W2"], p["b2"]))
        return ad.dropout(f, self.dropout, rng, training)

    def forward(self, x, training: bool = False, rng=None, lam: float | None = None):
        """Return ``(class_logits, domain_logits)`` for a batch of images."""
        p = self.params
        f = self.features_of(x, training, rng)
        y_logits = ad.linear(f, p["Wy"], p["by"])
        reversed_f = ad.gradient_reversal(f, self.lam if lam is None else lam)
        d_logits = ad.linear(reversed_f, p["Wd"], p["bd"])
        return y_logits, _column(d_logits)

    def predict_proba(self, x) -> tuple[np.ndarray, np.ndarray]:
        y_logits, d_logits = self.forward(x)
        return ad.softmax(y_logits.data), ad.sigmoid(d_logits.data)

    def state(self) -> dict:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict):
        for k in self.PARAM_NAMES:
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != self.params[k].shape:
                raise ValueError(f"parameter {k}: shape {arr.shape} != {self.params[k].shape}")
            self.params[k].data = arr.copy()


def _column(t: ad.Tensor) -> ad.Tensor:
    """(B, 1) -> (B,) as a graph op."""
    return ad._node(t.data[:, 0], (t,), lambda g: (g[:, None],))


def dann_loss(y_logits: ad.Tensor, labels, d_logits: ad.Tensor, domains,
              reduction: str = "sum", domain_term: bool = True) -> ad.Tensor:
    """``sum_i (1 - d_i) CE_i + sum_i BCE_i``, optionally divided by the batch size."""
    d = np.asarray(domains, dtype=np.float64)
    if not np.all((d == 0) | (d == 1)):
        raise ValueError("domain flags must be 0 or 1")
    _, loss = ad.softmax_cross_entropy(y_logits, labels, 1.0 - d)
    if domain_term:
        loss = loss + ad.sigmoid_bce(d_logits, d).sum()
    if reduction == "mean":
        loss = loss * (1.0 / len(d))
    elif reduction != "sum":
        raise ValueError("reduction must be 'sum' or 'mean'")
    return loss


def sgd_step(params: dict, epoch: int, cfg: TrainConfig) -> float:
    """In-place ``theta -= lr * (grad + weight_decay * theta)``; biases skip the decay."""
    lr = learning_rate(epoch, cfg)
    for name, p in params.items():
        if p.grad is None:
            continue
        step = p.grad + cfg.weight_decay * p.data if name.startswith("W") else p.grad
        p.data = p.data - lr * step
    return lr


@dataclass
class EpochLog:
    epoch: int
    lam: float
    lr: float
    train_loss: float
    val_accuracy: float | None = None
    val_accuracy_source: float | None = None
    val_accuracy_target: float | None = None


def train(model: DannModel, source: LabeledDataset, target: LabeledDataset | None,
          cfg: TrainConfig, val: LabeledDataset | None = None,
          val_target: LabeledDataset | None = None,
          on_epoch: Callable[[EpochLog], None] | None = None) -> list[EpochLog]:
    """Train in place and return one :class:`EpochLog` per epoch.

    With ``cfg.dann_enabled`` the target set contributes only images and
    domain flags; its labels are never read.
    """
    if len(source) == 0:
        raise ValueError("source dataset is empty")
    if target is not None and not cfg.dann_enabled:
        raise ValueError("a target domain was given but dann_enabled is false")
    if cfg.dann_enabled and (target is None or len(target) == 0):
        raise ValueError("dann_enabled needs a nonempty target dataset")
    drop_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1,)))
    log = []
    for epoch in range(cfg.epochs):
        model.lam = schedule_value(cfg.schedule, progress(epoch, cfg.epochs))
        losses, count = [], 0
        for batch in make_batches(source, target, cfg.batch_size, cfg.seed, epoch):
            model.zero_grad()
            y_logits, d_logits = model.forward(batch.inputs, training=True, rng=drop_rng)
            loss = dann_loss(y_logits, batch.labels, d_logits, batch.domain,
                             reduction=cfg.reduction, domain_term=cfg.dann_enabled)
            ad.backward(loss)
            lr = sgd_step(model.params, epoch, cfg)
            size = len(batch.domain)
            losses.append(float(loss.data) * (size if cfg.reduction == "mean" else 1))
            count += size
        entry = EpochLog(epoch=epoch, lam=model.lam, lr=learning_rate(epoch, cfg),
                         train_loss=sum(losses) / count)
        if val is not None:
            entry.val_accuracy_source = accuracy(model, val)
            entry.val_accuracy = entry.val_accuracy_source
            if val_target is not None:
                entry.val_accuracy_target = accuracy(model, val_target)
                n_s, n_t = len(val), len(val_target)
                entry.val_accuracy = ((entry.val_accuracy_source * n_s
                                       + entry.val_accuracy_target * n_t) / (n_s + n_t))
        log.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
    return log


def evaluate(model: DannModel, ds: LabeledDataset, batch_size: int = 1024) -> np.ndarray:
    """Predicted class per image (argmax; ties go to the lowest index)."""
    preds = []
    for start in range(0, len(ds), batch_size):
        x = to_unit(ds.images[start:start + batch_size])
        y_logits, _ = model.forward(x)
        preds.append(np.argmax(y_logits.data, axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def accuracy(model: DannModel, ds: LabeledDataset) -> float:
    return float(np.mean(evaluate(model, ds) == ds.labels))
