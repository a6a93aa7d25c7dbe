"""Training loop: weighted cross-entropy, decoupled-weight-decay Adam,
stratified internal validation, and best-checkpoint selection by AUROC.

Everything is driven by one seed: model initialisation, the train/val
split, and the per-epoch shuffles, so (seed, config, data) pin every
parameter after every step.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ag
from . import metrics as mt
from .autodiff import Graph, Tensor
from .data import EmbeddingBundle, SplitPlan
from .errors import ConfigurationError
from .model import DarcModel

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    """Optimisation protocol settings."""

    task_index: int = 0
    epochs: int = 15
    batch_size: int = 32
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    seed: int = 0
    n_repeats: int = 3
    class_weighting: bool = False
    val_fraction: float = 0.1

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigurationError(f"val_fraction must lie in (0, 1), got {self.val_fraction}")
        if self.n_repeats < 1:
            raise ConfigurationError(f"n_repeats must be >= 1, got {self.n_repeats}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def cross_entropy(logits: Tensor, labels, class_weights: np.ndarray | None = None) -> Tensor:
    """Weight-normalised mean of -w_y * log softmax(logits)[y].

    `logits` is [n_classes] with an int label, or [B, n_classes] with a
    label per row. With weights w the batch loss is sum(w_y * ce) / sum(w_y),
    so uniform weights reduce to the plain mean.
    """
    single = logits.ndim == 1
    if single:
        logits = ag.reshape(logits, (1, logits.shape[0]))
        labels = np.asarray([labels])
    else:
        labels = np.asarray(labels)
    n, k = logits.shape
    labels = labels.astype(np.int64)
    if labels.shape != (n,):
        raise ConfigurationError(f"need {n} labels for {n} logit rows, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ConfigurationError(f"label out of range [0, {k}): {int(labels[(labels < 0) | (labels >= k)][0])}")
    weights = np.ones(n) if class_weights is None else np.asarray(class_weights, dtype=np.float64)[labels]
    mask = np.zeros((n, k))
    mask[np.arange(n), labels] = -weights / weights.sum()
    return ag.tsum(ag.mul(ag.log_softmax(logits), Tensor(mask)))


def inverse_frequency_weights(labels: np.ndarray, n_classes: int) -> np.ndarray:
    """Per-class weights proportional to n/(k * count), normalised to mean 1.

    Classes absent from `labels` get weight 0 (they can never be drawn).
    """
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    present = counts > 0
    weights = np.zeros(n_classes)
    weights[present] = labels.size / (n_classes * counts[present])
    weights *= present.sum() / weights[present].sum()
    return weights


class Adam:
    """Adam with decoupled weight decay and bias correction."""

    def __init__(self, params: dict[str, Tensor], learning_rate: float, weight_decay: float = 0.0):
        self.params = params
        self.lr = learning_rate
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self) -> None:
        self.step_count += 1
        bc1 = 1.0 - ADAM_BETA1**self.step_count
        bc2 = 1.0 - ADAM_BETA2**self.step_count
        for name, p in self.params.items():
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            g = p.grad
            self.m[name] = ADAM_BETA1 * self.m[name] + (1.0 - ADAM_BETA1) * g
            self.v[name] = ADAM_BETA2 * self.v[name] + (1.0 - ADAM_BETA2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def evaluate(
    model: DarcModel,
    images: np.ndarray,
    texts: np.ndarray,
    labels: np.ndarray,
    include_roc: bool = False,
) -> mt.EvalReport:
    """Forward pass without recording, scored as an EvalReport."""
    logits = model.predict_logits(images, texts)
    return mt.evaluate_predictions(labels, softmax_probs(logits), model.config.n_classes, include_roc)


@dataclass
class TrainResult:
    """Per-epoch history plus the retained best checkpoint."""

    train_losses: list[float]
    val_reports: list[mt.EvalReport]
    best_epoch: int  # 1-based; maximises validation AUROC, earliest on ties
    best_state: dict[str, np.ndarray]
    best_report: mt.EvalReport
    log_records: list[dict] = field(default_factory=list)


def _task_arrays(bundle: EmbeddingBundle, task_index: int, idx: np.ndarray):
    images = bundle.images[idx].astype(np.float64)
    texts = bundle.texts[idx].astype(np.float64)
    labels = bundle.labels[idx, task_index].astype(np.int64)
    return images, texts, labels


def train(model: DarcModel, bundle: EmbeddingBundle, split: SplitPlan, tcfg: TrainConfig) -> TrainResult:
    """Run the epoch loop, retaining the checkpoint with best validation AUROC.

    The model is left holding the best-epoch parameters when training ends.
    """
    tcfg.validate()
    task_index = bundle.task_index(tcfg.task_index)
    n_classes = bundle.tasks[task_index].n_classes
    if n_classes != model.config.n_classes:
        raise ConfigurationError(
            f"model has {model.config.n_classes} classes but task "
            f"{bundle.tasks[task_index].name!r} has {n_classes}"
        )
    if split.train.size == 0 or split.val.size == 0:
        raise ConfigurationError("train and validation splits must be non-empty")

    train_images, train_texts, train_labels = _task_arrays(bundle, task_index, split.train)
    val_images, val_texts, val_labels = _task_arrays(bundle, task_index, split.val)
    if np.min(train_labels) < 0 or np.min(val_labels) < 0:
        raise ConfigurationError("split contains samples with missing labels for the chosen task")
    if np.unique(val_labels).size < 2:
        raise ConfigurationError("validation split holds a single class; AUROC is undefined")

    class_weights = inverse_frequency_weights(train_labels, n_classes) if tcfg.class_weighting else None

    rng = np.random.default_rng(tcfg.seed)
    optimizer = Adam(model.named_parameters(), tcfg.learning_rate, tcfg.weight_decay)

    train_losses: list[float] = []
    val_reports: list[mt.EvalReport] = []
    log_records: list[dict] = []
    best_epoch = 0
    best_auroc = -np.inf
    best_state: dict[str, np.ndarray] = {}
    best_report: mt.EvalReport | None = None

    for epoch in range(1, tcfg.epochs + 1):
        order = rng.permutation(train_labels.size)
        loss_sum = 0.0
        weight_sum = 0.0
        for start in range(0, order.size, tcfg.batch_size):
            batch = order[start : start + tcfg.batch_size]
            model.zero_grad()
            with Graph() as graph:
                logits = model.forward(train_images[batch], train_texts[batch])
                loss = cross_entropy(logits, train_labels[batch], class_weights)
            graph.backward(loss)
            optimizer.step()
            batch_weight = (
                float(batch.size) if class_weights is None else float(class_weights[train_labels[batch]].sum())
            )
            loss_sum += loss.item() * batch_weight
            weight_sum += batch_weight
        train_losses.append(loss_sum / weight_sum)

        report = evaluate(model, val_images, val_texts, val_labels)
        val_reports.append(report)
        log_records.append(
            {
                "epoch": epoch,
                "train_loss": train_losses[-1],
                "val_accuracy": report.accuracy,
                "val_macro_f1": report.macro_f1,
                "val_auroc": report.auroc,
            }
        )
        if report.auroc > best_auroc:
            best_auroc = report.auroc
            best_epoch = epoch
            best_state = model.state_dict()
            best_report = report

    model.load_state_dict(best_state)
    return TrainResult(
        train_losses=train_losses,
        val_reports=val_reports,
        best_epoch=best_epoch,
        best_state=best_state,
        best_report=best_report,
        log_records=log_records,
    )


@dataclass
class RepeatResult:
    """Mean/std of best-checkpoint validation metrics across seeds."""

    seeds: list[int]
    runs: list[TrainResult]
    mean: dict[str, float]
    std: dict[str, float]


def repeat_runs(
    n: int,
    base_seed: int,
    bundle: EmbeddingBundle,
    make_model,
    tcfg: TrainConfig,
    make_split,
) -> RepeatResult:
    """Train with seeds base_seed..base_seed+n-1; aggregate best-val metrics.

    `make_model(seed)` and `make_split(seed)` build the per-run model and
    split plan, so every run is independent and fully reseeded.
    """
    if n < 1:
        raise ConfigurationError(f"repeat count must be >= 1, got {n}")
    seeds = [base_seed + i for i in range(n)]
    runs = []
    for seed in seeds:
        run_cfg = TrainConfig(**{**tcfg.to_dict(), "seed": seed})
        runs.append(train(make_model(seed), bundle, make_split(seed), run_cfg))
    samples = {
        "accuracy": [r.best_report.accuracy for r in runs],
        "macro_f1": [r.best_report.macro_f1 for r in runs],
        "auroc": [r.best_report.auroc for r in runs],
    }

    def shifted_std(values: list[float]) -> float:
        # std is shift-invariant; anchoring at the first value keeps the
        # identical-runs case at exactly 0.
        arr = np.asarray(values) - values[0]
        return float(np.std(arr))

    return RepeatResult(
        seeds=seeds,
        runs=runs,
        mean={k: float(np.mean(v)) for k, v in samples.items()},
        std={k: shifted_std(v) for k, v in samples.items()},
    )
