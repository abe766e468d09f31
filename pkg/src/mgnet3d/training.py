"""Mini-batch SGD training, evaluation, and the cross-validation driver.

All randomness flows through explicit seeds: the model seed fixes the
initialization, the train seed fixes epoch shuffles, and the split seed
fixes fold membership. Given the three seeds, every reported metric is
bitwise reproducible. Wall-clock timings are kept out of the
deterministic history serialization.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .data import Manifest, VolumeRecord, FoldAssignment, load_volume, normalize, stratified_group_kfold
from .errors import ArgumentError, ConfigError, DivergenceError, ShapeError, StateError
from .metrics import EvalMetrics, compute_metrics
from .model import MgNetConfig, MgNetParams, build, forward, load_checkpoint, save_checkpoint
from .tensor import Tensor, backward, mean_scalars, record, sgd_step, softmax_cross_entropy

__all__ = [
    "TrainConfig",
    "EpochStats",
    "RunHistory",
    "CvResult",
    "train",
    "evaluate",
    "cross_validate",
    "summarize_folds",
    "save_checkpoint",
    "load_checkpoint",
]

_METRIC_NAMES = ("accuracy", "auc", "sensitivity", "specificity")


@dataclass
class TrainConfig:
    """Optimization hyperparameters.

    ``log_every`` is the epoch cadence for held-out metric evaluation
    when an evaluation set is supplied (0 disables it).
    """

    learning_rate: float = 1e-4
    batch_size: int = 2
    epochs: int = 1
    seed: int = 0
    log_every: int = 1

    def validate(self) -> None:
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.log_every < 0:
            raise ConfigError(f"log_every must be >= 0, got {self.log_every}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")


def _float_repr(v: float) -> str:
    return repr(float(v))


@dataclass
class EpochStats:
    epoch: int
    loss: float
    metrics: EvalMetrics | None
    wall_seconds: float

    def line(self) -> str:
        parts = [f"epoch={self.epoch}", f"loss={_float_repr(self.loss)}"]
        if self.metrics is not None:
            parts.append(f"acc={_float_repr(self.metrics.accuracy)}")
            parts.append(f"auc={_float_repr(self.metrics.auc)}")
        return " ".join(parts)


@dataclass
class RunHistory:
    """Per-epoch training record with deterministic serialization."""

    epochs: list[EpochStats] = field(default_factory=list)

    def append(self, stats: EpochStats) -> None:
        if self.epochs and stats.epoch <= self.epochs[-1].epoch:
            raise ArgumentError(f"epoch indices must increase, got {stats.epoch}")
        if not np.isfinite(stats.loss):
            raise ArgumentError(f"history rejects non-finite loss {stats.loss}")
        self.epochs.append(stats)

    def lines(self) -> list[str]:
        """Seed-determined content only; wall-clock stays in timing_lines()."""
        return [e.line() for e in self.epochs]

    def timing_lines(self) -> list[str]:
        return [f"time={e.wall_seconds:.3f} epoch={e.epoch}" for e in self.epochs]

    def final_loss(self) -> float:
        if not self.epochs:
            raise StateError("history is empty")
        return self.epochs[-1].loss


def _load_normalized(
    record_: VolumeRecord,
    geometry: tuple[int, int, int, int] | None,
    cache: dict[str, np.ndarray],
) -> Tensor:
    arr = cache.get(record_.volume_path)
    if arr is None:
        vol = load_volume(record_.volume_path)
        if geometry is not None and vol.shape != tuple(geometry):
            raise ShapeError(
                f"volume {record_.volume_path} has geometry {vol.shape}, "
                f"manifest declares {tuple(geometry)}"
            )
        arr = normalize(vol).data
        cache[record_.volume_path] = arr
    return Tensor(arr)


def train(
    model_config: MgNetConfig,
    train_records: Sequence[VolumeRecord],
    train_cfg: TrainConfig,
    eval_records: Sequence[VolumeRecord] | None = None,
    geometry: tuple[int, int, int, int] | None = None,
    on_epoch: Callable[[EpochStats], None] | None = None,
) -> tuple[MgNetParams, RunHistory]:
    """Run seeded mini-batch SGD and return the final parameters and history.

    Each batch runs every sample's forward pass, averages the
    cross-entropy losses, backpropagates, and applies one SGD step. The
    per-epoch loss is the mean over batch losses.
    """
    train_cfg.validate()
    if not train_records:
        raise ArgumentError("training set is empty")
    labels = {r.label for r in train_records}
    if labels != {0, 1}:
        raise ArgumentError(f"training set must contain both classes, got labels {sorted(labels)}")

    params = build(model_config)
    rng = np.random.default_rng(train_cfg.seed)
    cache: dict[str, np.ndarray] = {}
    history = RunHistory()
    for epoch in range(train_cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_records))
        batch_losses = []
        for batch_index, start in enumerate(range(0, len(order), train_cfg.batch_size)):
            batch = [train_records[i] for i in order[start : start + train_cfg.batch_size]]
            with record():
                losses = [
                    softmax_cross_entropy(
                        forward(params, _load_normalized(r, geometry, cache)), r.label
                    )
                    for r in batch
                ]
                loss = mean_scalars(losses)
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(
                    f"non-finite loss {value} at epoch {epoch}, batch {batch_index}",
                    epoch=epoch,
                    batch=batch_index,
                )
            backward(loss)
            sgd_step(params.tensors(), train_cfg.learning_rate)
            batch_losses.append(value)
        epoch_loss = float(np.mean(batch_losses))
        metrics = None
        if (
            eval_records
            and train_cfg.log_every > 0
            and (epoch + 1) % train_cfg.log_every == 0
        ):
            metrics = evaluate(params, eval_records, geometry=geometry)
        stats = EpochStats(epoch, epoch_loss, metrics, time.perf_counter() - t0)
        history.append(stats)
        if on_epoch is not None:
            on_epoch(stats)
    return params, history


def evaluate(
    params: MgNetParams,
    records: Sequence[VolumeRecord],
    geometry: tuple[int, int, int, int] | None = None,
) -> EvalMetrics:
    """Per-scan metrics: predicted class is the argmax logit, the score is
    the class-1 softmax probability."""
    if not records:
        raise ArgumentError("evaluation set is empty")
    if params.config.num_classes != 2:
        raise ArgumentError(
            f"evaluation requires a binary head, model has {params.config.num_classes} classes"
        )
    cache: dict[str, np.ndarray] = {}
    labels, predictions, scores = [], [], []
    for r in records:
        logits = forward(params, _load_normalized(r, geometry, cache))
        z = logits.data.astype(np.float64)
        z -= z.max()
        ez = np.exp(z)
        labels.append(r.label)
        predictions.append(int(np.argmax(logits.data)))
        scores.append(float(ez[1] / ez.sum()))
    return compute_metrics(labels, predictions, scores)


def _fold_seed(base: int, fold: int) -> int:
    # Stable per-fold derivation so folds train from distinct but
    # reproducible initializations and shuffles.
    return int(np.random.SeedSequence((base, fold)).generate_state(1)[0])


@dataclass
class CvResult:
    assignment: FoldAssignment
    fold_metrics: list[EvalMetrics]
    summary: dict[str, float]


def summarize_folds(fold_metrics: Sequence[EvalMetrics]) -> dict[str, float]:
    """Mean and population std of each metric across folds."""
    out: dict[str, float] = {}
    for name in _METRIC_NAMES:
        values = np.array([getattr(m, name) for m in fold_metrics], dtype=np.float64)
        out[f"mean_{name}"] = float(values.mean())
        out[f"std_{name}"] = float(values.std())
    return out


def cross_validate(
    model_config: MgNetConfig,
    manifest: Manifest,
    k: int,
    train_cfg: TrainConfig,
    split_seed: int,
    workers: int = 1,
) -> CvResult:
    """k rounds of train-on-(k-1)-folds / test-on-the-held-out-fold.

    Every round trains from a fresh per-fold initialization. Folds may run
    on worker threads; results are ordered by fold index either way, so
    the report is identical at any parallelism setting.
    """
    if workers < 1:
        raise ArgumentError(f"workers must be >= 1, got {workers}")
    assignment = stratified_group_kfold(manifest, k, split_seed)

    def run_fold(fold: int) -> EvalMetrics:
        train_records, test_records = assignment.split_records(manifest, fold)
        train_subjects = {r.subject_id for r in train_records}
        test_subjects = {r.subject_id for r in test_records}
        overlap = train_subjects & test_subjects
        if overlap:
            raise StateError(f"subject leakage between train and test in fold {fold}: {overlap}")
        fold_model_cfg = replace(model_config, seed=_fold_seed(model_config.seed, fold))
        fold_train_cfg = replace(train_cfg, seed=_fold_seed(train_cfg.seed, fold))
        params, _ = train(fold_model_cfg, train_records, fold_train_cfg, geometry=manifest.geometry)
        return evaluate(params, test_records, geometry=manifest.geometry)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fold_metrics = list(pool.map(run_fold, range(k)))
    else:
        fold_metrics = [run_fold(fold) for fold in range(k)]
    return CvResult(assignment, fold_metrics, summarize_folds(fold_metrics))
