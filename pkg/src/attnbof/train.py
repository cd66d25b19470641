"""Adam optimization, cross-validation splits, and classification metrics.

Everything is seeded: codebook subsampling, weight init, shuffling and
dropout all stream from the run seed, so identical (config, seed) pairs
reproduce loss traces and final parameters bit for bit.  Fold f of a k-fold
run uses the derived seed ``seed ^ f``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import nbof
from .data import LabeledSequenceSet
from .errors import ConfigError, ShapeError, TrainingDiverged
from .model import Model
from .numerics import Array


@dataclass
class TrainConfig:
    # defaults mirror the reference protocol; desk-scale runs override them
    epochs: int = 90
    batch_size: int = 256
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    folds: int = 1                 # 1 = single stratified holdout split
    holdout_fraction: float = 0.2
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0.0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        for name in ("adam_beta1", "adam_beta2"):
            b = getattr(self, name)
            if not 0.0 < b < 1.0:
                raise ConfigError(f"{name} must be in (0, 1), got {b}")
        if self.adam_eps <= 0.0:
            raise ConfigError(f"adam_eps must be positive, got {self.adam_eps}")
        if self.folds < 1:
            raise ConfigError(f"folds must be >= 1, got {self.folds}")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ConfigError(
                f"holdout_fraction must be in (0, 1), got {self.holdout_fraction}")


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict[str, Array]
    v: dict[str, Array]
    t: int = 0


def init_adam(params: dict[str, Array]) -> AdamState:
    return AdamState(m={k: np.zeros_like(p) for k, p in params.items()},
                     v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, Array], grads: dict[str, Array], state: AdamState,
              cfg: TrainConfig, constrain=None) -> tuple[dict[str, Array], AdamState]:
    """One bias-corrected moment update, in place.  ``constrain`` re-pins any
    structurally fixed entries (the 2da diagonal) after the step."""
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ShapeError(
                f"adam_step: gradient for {name!r} is {g.shape}, parameter is {p.shape}")
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        p -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
    if constrain is not None:
        constrain()
    return params, state


# ---------------------------------------------------------------------------
# splits


def _groups_by_label(dataset: LabeledSequenceSet) -> dict[int, list[list[int]]]:
    size = dataset.group_size
    if len(dataset) % size != 0:
        raise ValueError(
            f"dataset of {len(dataset)} items is not divisible into groups of {size}")
    labels = dataset.labels()
    buckets: dict[int, list[list[int]]] = {}
    for start in range(0, len(dataset), size):
        group = list(range(start, start + size))
        buckets.setdefault(int(labels[start]), []).append(group)
    return buckets


def kfold(dataset: LabeledSequenceSet, folds: int, seed: int
          ) -> list[tuple[LabeledSequenceSet, LabeledSequenceSet]]:
    """Disjoint, exhaustive, label-stratified folds; twin groups stay intact."""
    if folds < 2:
        raise ConfigError(f"cross-validation needs folds >= 2, got {folds}")
    if folds > len(dataset):
        raise ValueError(f"folds {folds} exceeds item count {len(dataset)}")
    rng = np.random.default_rng(seed)
    fold_members: list[list[int]] = [[] for _ in range(folds)]
    turn = 0
    for label in sorted(_groups_by_label(dataset)):
        groups = _groups_by_label(dataset)[label]
        for j in rng.permutation(len(groups)):
            fold_members[turn % folds].extend(groups[j])
            turn += 1
    splits = []
    for f in range(folds):
        val = sorted(fold_members[f])
        train = sorted(i for g in range(folds) if g != f for i in fold_members[g])
        splits.append((dataset.subset(train), dataset.subset(val)))
    return splits


def holdout_split(dataset: LabeledSequenceSet, test_fraction: float, seed: int
                  ) -> tuple[LabeledSequenceSet, LabeledSequenceSet]:
    """Single stratified split; twin groups stay on one side."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    test_idx: list[int] = []
    buckets = _groups_by_label(dataset)
    for label in sorted(buckets):
        groups = buckets[label]
        n_test = int(round(test_fraction * len(groups)))
        for j in rng.permutation(len(groups))[:n_test]:
            test_idx.extend(groups[j])
    test_set = set(test_idx)
    train_idx = [i for i in range(len(dataset)) if i not in test_set]
    if not test_idx or not train_idx:
        raise ValueError("holdout split leaves one side empty; adjust the fraction")
    return dataset.subset(train_idx), dataset.subset(sorted(test_idx))


# ---------------------------------------------------------------------------
# metrics


def accuracy(preds, labels) -> float:
    preds, labels = np.asarray(preds), np.asarray(labels)
    if preds.shape != labels.shape or preds.size == 0:
        raise ValueError(f"accuracy: got {preds.shape} predictions for "
                         f"{labels.shape} labels")
    return float(np.mean(preds == labels))


def macro_f1(preds, labels) -> float:
    """Unweighted mean of per-class F1 over classes present in labels or
    predictions."""
    preds, labels = np.asarray(preds), np.asarray(labels)
    if preds.shape != labels.shape or preds.size == 0:
        raise ValueError(f"macro_f1: got {preds.shape} predictions for "
                         f"{labels.shape} labels")
    scores = []
    for c in sorted(set(preds.tolist()) | set(labels.tolist())):
        tp = int(np.sum((preds == c) & (labels == c)))
        fp = int(np.sum((preds == c) & (labels != c)))
        fn = int(np.sum((preds != c) & (labels == c)))
        scores.append(2.0 * tp / (2 * tp + fp + fn))
    return float(np.mean(scores))


def evaluate(net: Model, dataset: LabeledSequenceSet) -> tuple[float, float]:
    preds = [net.predict(x) for x, _ in dataset.items]
    labels = dataset.labels()
    return accuracy(preds, labels), macro_f1(preds, labels)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class FoldResult:
    fold: int
    loss_trace: list[float]
    accuracy: float
    macro_f1: float


@dataclass
class TrainReport:
    epochs: int
    folds: list[FoldResult]
    accuracy_mean: float = field(init=False)
    accuracy_std: float = field(init=False)
    f1_mean: float = field(init=False)
    f1_std: float = field(init=False)

    def __post_init__(self):
        accs = np.array([f.accuracy for f in self.folds])
        f1s = np.array([f.macro_f1 for f in self.folds])
        self.accuracy_mean = float(accs.mean())
        self.f1_mean = float(f1s.mean())
        # sample std; a single fold has no spread
        self.accuracy_std = float(accs.std(ddof=1)) if len(accs) > 1 else 0.0
        self.f1_std = float(f1s.std(ddof=1)) if len(f1s) > 1 else 0.0

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "folds": [{"fold": f.fold, "accuracy": f.accuracy,
                       "macro_f1": f.macro_f1, "loss_trace": f.loss_trace}
                      for f in self.folds],
            "accuracy": {"mean": self.accuracy_mean, "std": self.accuracy_std},
            "macro_f1": {"mean": self.f1_mean, "std": self.f1_std},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_markdown(self) -> str:
        lines = ["| fold | accuracy | macro-F1 |", "|---|---|---|"]
        for f in self.folds:
            lines.append(f"| {f.fold} | {100 * f.accuracy:.2f} | {100 * f.macro_f1:.2f} |")
        lines.append(f"| mean + std | {100 * self.accuracy_mean:.2f} + "
                     f"{100 * self.accuracy_std:.2f} | {100 * self.f1_mean:.2f} + "
                     f"{100 * self.f1_std:.2f} |")
        return "\n".join(lines)


def fit(net: Model, train_set: LabeledSequenceSet, cfg: TrainConfig,
        seed: int) -> list[float]:
    """Train in place on ``train_set``; returns the per-epoch mean loss trace.

    The codebook is re-initialized from the training features so every fold
    sees only its own split.
    """
    cfg.validate()
    if len(train_set) == 0:
        raise ValueError("fit: empty training set")
    rng = np.random.default_rng(seed)
    net.set_codebook(nbof.init_codebook([x for x, _ in train_set.items],
                                        net.config.codewords, seed=seed))
    state = init_adam(net.params)
    n = len(train_set)
    trace: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for batch_no, start in enumerate(range(0, n, cfg.batch_size)):
            batch = order[start:start + cfg.batch_size]
            sums = {k: np.zeros_like(p) for k, p in net.params.items()}
            for idx in batch:
                x, label = train_set.items[idx]
                drop_seed = int(rng.integers(2 ** 31))
                loss, grads = net.loss_and_grad(x, label, training=True,
                                                seed=drop_seed)
                if not np.isfinite(loss):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}, batch {batch_no}")
                epoch_loss += loss
                for k, g in grads.items():
                    sums[k] += g
            scale = 1.0 / len(batch)
            adam_step(net.params, {k: g * scale for k, g in sums.items()},
                      state, cfg, constrain=net.constrain)
        trace.append(epoch_loss / n)
    return trace


def train(net: Model, dataset: LabeledSequenceSet, cfg: TrainConfig
          ) -> tuple[Model, TrainReport]:
    """Run the configured protocol and return (final model, report).

    folds == 1: one stratified holdout split; the given model is trained on
    the train side and scored on the held-out side.  folds >= 2: k-fold
    cross-validation with a fresh model per fold (seed ``cfg.seed ^ fold``)
    for the report, then the given model is trained on the full dataset.
    """
    cfg.validate()
    if len(dataset) == 0:
        raise ValueError("train: empty dataset")
    if cfg.folds == 1:
        train_set, val_set = holdout_split(dataset, cfg.holdout_fraction, cfg.seed)
        trace = fit(net, train_set, cfg, cfg.seed)
        acc, f1 = evaluate(net, val_set)
        report = TrainReport(epochs=cfg.epochs,
                             folds=[FoldResult(0, trace, acc, f1)])
        return net, report
    results = []
    for f, (train_set, val_set) in enumerate(kfold(dataset, cfg.folds, cfg.seed)):
        fold_seed = cfg.seed ^ f
        fold_net = Model.build(replace(net.config, seed=fold_seed))
        trace = fit(fold_net, train_set, cfg, fold_seed)
        acc, f1 = evaluate(fold_net, val_set)
        results.append(FoldResult(f, trace, acc, f1))
    fit(net, dataset, cfg, cfg.seed)
    return net, TrainReport(epochs=cfg.epochs, folds=results)
