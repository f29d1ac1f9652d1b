"""
Training and evaluation of the two-stream classifier.

Training runs plain SGD with constant learning rate and L2 weight decay. Each
epoch appends a row to metrics.csv and, whenever validation top-1 improves,
rewrites best.mmhc. Evaluation reloads a checkpoint, runs deterministic
inference (argmax routing, BatchNorm running statistics) and writes per-class
accuracy, the confusion matrix and a JSON report.
"""

from __future__ import annotations

import logging
import math

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Optional

import numpy as np
import pandas as pd

from matplotlib.figure import Figure
from tqdm import tqdm

from app.config.config_models import RunConfig
from app.config.logger.logger import new_run_id
from app.engine.autodiff import SGD, backward, no_grad
from app.engine.tensor import DType, Tensor
from app.models.fusion import STRATEGIES, route_histogram
from app.models.head import confusion_matrix, loss, one_hot_labels, per_class_accuracy, topk_accuracy
from app.models.mmhco import BackboneConfig, count_parameters
from app.models.network import MMHCOHAR
from app.services.checkpoint import load_checkpoint, save_checkpoint, snapshot
from app.services.events.dataset import SplitArrays, load_split_arrays, read_class_names
from app.utils.exceptions import ClassCountMismatchError, DatasetError, TrainingDivergedError
from app.utils.file_utils import ensure_directory_exists, save_json


logger = logging.getLogger(__name__)

METRIC_COLUMNS = ['epoch', 'train_loss', 'val_top1', 'val_top5', 'route_mcf', 'route_mdf', 'route_msf']
BEST_CHECKPOINT = 'best.mmhc'
LAST_CHECKPOINT = 'last.mmhc'
TOP_K = 5


def backbone_config(run: RunConfig) -> BackboneConfig:
    return BackboneConfig(
        stage_depths=tuple(run.stage_depths),
        base_channels=run.channels,
        embed_dim=run.embed_dim,
        in_channels=run.in_channels,
        resolution=run.resolution,
        residual=run.residual,
        continuous_fve=run.continuous_fve,
        layernorm_eps=run.layernorm_eps,
        precision=DType(run.precision),
    )


def build_model(run: RunConfig, num_classes: int) -> MMHCOHAR:
    """Fresh model; every initial weight is drawn from a generator seeded with `run.seed`."""
    return MMHCOHAR(
        backbone_config(run),
        num_classes,
        np.random.default_rng(run.seed),
        fusion_mode=run.fusion,
        tau=run.gumbel_tau,
        msf_per_channel=run.msf_per_channel,
        modality=run.modality,
    )


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_top1: float
    val_top1: float
    val_top5: float
    routes: dict[str, int] = field(default_factory=dict)

    def row(self) -> dict[str, Any]:
        return {
            'epoch': self.epoch,
            'train_loss': self.train_loss,
            'val_top1': self.val_top1,
            'val_top5': self.val_top5,
            **{f'route_{name}': self.routes.get(name, 0) for name in STRATEGIES},
        }


@dataclass
class TrainResult:
    out_dir: Path
    best_checkpoint: Path
    metrics_csv: Path
    history: list[EpochMetrics]
    best_epoch: int
    best_val_top1: float


@dataclass
class EvalResult:
    split: str
    class_names: list[str]
    logits: np.ndarray
    labels: np.ndarray
    routes: np.ndarray
    loss: float
    top_k: int = TOP_K

    @property
    def num_samples(self) -> int:
        return len(self.labels)

    @property
    def top1(self) -> float:
        return topk_accuracy(self.logits, self.labels, 1) if self.num_samples else 0.0

    @property
    def top5(self) -> float:
        k = min(self.top_k, len(self.class_names))
        return topk_accuracy(self.logits, self.labels, k) if self.num_samples else 0.0

    @property
    def confusion(self) -> np.ndarray:
        predicted = np.argmax(self.logits, axis=-1) if self.num_samples else np.zeros(0, dtype=np.int64)
        return confusion_matrix(predicted, self.labels, len(self.class_names))

    @property
    def route_counts(self) -> dict[str, int]:
        return route_histogram(self.routes)

    def per_class(self) -> pd.DataFrame:
        matrix = self.confusion
        return pd.DataFrame(
            {
                'class': self.class_names,
                'samples': matrix.sum(axis=1),
                'correct': np.diag(matrix),
                'accuracy': per_class_accuracy(matrix),
            }
        )

    def report(self) -> dict[str, Any]:
        per_class = self.per_class()
        return {
            'split': self.split,
            'num_samples': self.num_samples,
            'loss': self.loss,
            'top1': self.top1,
            'top5': self.top5,
            'per_class_accuracy': {
                row['class']: None if math.isnan(row['accuracy']) else float(row['accuracy'])
                for _, row in per_class.iterrows()
            },
            'route_histogram': self.route_counts,
        }


def iterate_batches(n: int, batch_size: int, rng: Optional[np.random.Generator] = None) -> Iterator[np.ndarray]:
    """Index batches over n samples, shuffled when `rng` is given; the last batch may be short."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _batch(arrays: SplitArrays, idx: np.ndarray, dtype: DType) -> tuple[Tensor, Tensor]:
    return Tensor(arrays.rgb[idx], dtype=dtype), Tensor(arrays.events[idx], dtype=dtype)


def predict(
    model: MMHCOHAR,
    arrays: SplitArrays,
    batch_size: int,
    loss_mode: str = 'ce',
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray, float]:
    """
    Inference over a whole split in eval mode.

    Returns:
        (logits [N, C'], routes [N, 3], mean loss)
    """
    dtype = model.config.precision
    rng = np.random.default_rng(seed)
    logits, routes, losses = [], [], []
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            for idx in iterate_batches(len(arrays), batch_size):
                rgb, evt = _batch(arrays, idx, dtype)
                out = model(rgb, evt, rng)
                y = one_hot_labels(arrays.labels[idx], model.num_classes, dtype)
                losses.append(loss(out.prediction, y, loss_mode).item() * len(idx))
                logits.append(out.prediction.logits.data)
                routes.append(out.fusion.route.data)
    finally:
        model.train(was_training)
    if not logits:
        return np.zeros((0, model.num_classes)), np.zeros((0, len(STRATEGIES))), float('nan')
    return np.concatenate(logits), np.concatenate(routes), float(sum(losses) / len(arrays))


def evaluate_arrays(
    model: MMHCOHAR, arrays: SplitArrays, run: RunConfig, class_names: list[str], split: str = 'val'
) -> EvalResult:
    logits, routes, mean_loss = predict(model, arrays, run.batch_size, run.loss, run.seed)
    return EvalResult(
        split=split, class_names=class_names, logits=logits, labels=arrays.labels, routes=routes, loss=mean_loss
    )


def train_epoch(
    model: MMHCOHAR,
    optimizer: SGD,
    arrays: SplitArrays,
    run: RunConfig,
    rng: np.random.Generator,
    epoch: int,
    names: dict[int, str],
) -> tuple[float, float, list[np.ndarray]]:
    """
    One pass over the training split.

    Returns:
        (mean loss, running top-1, per-batch route arrays)

    Raises:
        TrainingDivergedError: If a batch loss is NaN or infinite.
    """
    model.train()
    dtype = model.config.precision
    total_loss, correct, seen = 0.0, 0, 0
    routes: list[np.ndarray] = []
    batches = list(iterate_batches(len(arrays), run.batch_size, rng))

    with tqdm(total=len(batches), desc=f'Epoch {epoch}/{run.epochs}', unit='batch', leave=False) as pbar:
        for batch_index, idx in enumerate(batches):
            rgb, evt = _batch(arrays, idx, dtype)
            out = model(rgb, evt, rng)
            y = one_hot_labels(arrays.labels[idx], model.num_classes, dtype)
            value = loss(out.prediction, y, run.loss)

            optimizer.zero_grad()
            backward(value)
            loss_value = value.item()
            if not math.isfinite(loss_value):
                norms = optimizer.grad_norms(names)
                logger.error(f'Non-finite loss at epoch {epoch}, batch {batch_index}')
                raise TrainingDivergedError(epoch, batch_index, loss_value, norms)
            optimizer.step()

            total_loss += loss_value * len(idx)
            correct += int((out.prediction.top1() == arrays.labels[idx]).sum())
            seen += len(idx)
            routes.append(out.fusion.route.data)
            pbar.set_postfix(loss=f'{loss_value:.4f}')
            pbar.update(1)

    return total_loss / max(seen, 1), correct / max(seen, 1), routes


def _load_split(root: Path, split: str, run: RunConfig) -> SplitArrays:
    arrays = load_split_arrays(
        root, split, seed=run.seed, num_workers=run.num_workers, size=run.resolution, dtype=DType(run.precision).numpy
    )
    if len(arrays) and arrays.rgb.shape[1] != run.frames:
        raise DatasetError(f'{root}/{split}: samples have T={arrays.rgb.shape[1]} but the run expects T={run.frames}')
    return arrays


def resolve_classes(data_root: Path, run: RunConfig) -> list[str]:
    class_names = read_class_names(data_root)
    if not class_names:
        raise DatasetError(f'no classes found under {data_root}')
    if run.num_classes is not None and run.num_classes != len(class_names):
        raise ClassCountMismatchError(run.num_classes, len(class_names))
    return class_names


def write_metrics(history: list[EpochMetrics], path: Path) -> Path:
    pd.DataFrame([m.row() for m in history], columns=METRIC_COLUMNS).to_csv(path, index=False)
    return path


def plot_metrics(history: list[EpochMetrics], path: Path) -> Path:
    """Loss and accuracy curves side by side."""
    epochs = [m.epoch for m in history]
    fig = Figure(figsize=(10, 4))
    ax_loss, ax_acc = fig.subplots(1, 2)
    ax_loss.plot(epochs, [m.train_loss for m in history], marker='o')
    ax_loss.set_xlabel('epoch')
    ax_loss.set_ylabel('train loss')
    ax_acc.plot(epochs, [m.train_top1 for m in history], marker='o', label='train top-1')
    ax_acc.plot(epochs, [m.val_top1 for m in history], marker='o', label='val top-1')
    ax_acc.plot(epochs, [m.val_top5 for m in history], marker='.', linestyle='--', label='val top-5')
    ax_acc.set_xlabel('epoch')
    ax_acc.set_ylim(0.0, 1.02)
    ax_acc.legend(loc='lower right')
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    return path


def plot_confusion(matrix: np.ndarray, class_names: list[str], path: Path) -> Path:
    fig = Figure(figsize=(1.2 * len(class_names) + 2, 1.2 * len(class_names) + 1.5))
    ax = fig.subplots()
    image = ax.imshow(matrix, cmap='Blues')
    ax.set_xticks(range(len(class_names)), labels=class_names, rotation=45, ha='right')
    ax.set_yticks(range(len(class_names)), labels=class_names)
    ax.set_xlabel('predicted')
    ax.set_ylabel('true')
    for i in range(matrix.shape[0]):
        for j in range(matrix.shape[1]):
            ax.text(j, i, str(matrix[i, j]), ha='center', va='center', fontsize=8)
    fig.colorbar(image, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    return path


def _snapshot_config(run: RunConfig, model: MMHCOHAR, class_names: list[str], metrics: EpochMetrics) -> dict[str, Any]:
    return {
        'run': run.model_dump(mode='json'),
        'class_names': class_names,
        'architecture': model.architecture(),
        'metrics': {'epoch': metrics.epoch, 'val_top1': metrics.val_top1, 'val_top5': metrics.val_top5},
    }


def train(run: RunConfig, data_root: Optional[Path] = None, out_dir: Optional[Path] = None) -> TrainResult:
    """
    Train on root/train, select the checkpoint on root/val.

    Raises:
        DatasetError: If the training split is empty or has the wrong number of frames.
        ClassCountMismatchError: If run.num_classes disagrees with the dataset.
        TrainingDivergedError: If the loss becomes NaN or infinite.
    """
    run_id = new_run_id('train')
    data_root = Path(data_root or run.data_root)
    out_dir = ensure_directory_exists(str(out_dir or run.out_dir))
    class_names = resolve_classes(data_root, run)
    logger.info(f'Training run {run_id}: {len(class_names)} classes, fusion={run.fusion}, modality={run.modality}')

    train_set = _load_split(data_root, 'train', run)
    val_set = _load_split(data_root, 'val', run)
    if not len(train_set):
        raise DatasetError(f'{data_root}/train: no samples')

    model = build_model(run, len(class_names))
    count_parameters(model)
    optimizer = SGD(model.trainable_parameters(), run.lr, run.weight_decay)
    names = {id(p): name for name, p in model.named_parameters()}
    rng = np.random.default_rng([run.seed, 1])

    history: list[EpochMetrics] = []
    metrics_csv = out_dir / 'metrics.csv'
    best_path = out_dir / BEST_CHECKPOINT
    best_epoch, best_top1 = 0, -1.0
    step = 0

    for epoch in range(1, run.epochs + 1):
        train_loss, train_top1, routes = train_epoch(model, optimizer, train_set, run, rng, epoch, names)
        step += len(routes)
        if len(val_set):
            val = evaluate_arrays(model, val_set, run, class_names)
            val_top1, val_top5 = val.top1, val.top5
        else:
            val_top1, val_top5 = train_top1, train_top1
        metrics = EpochMetrics(epoch, train_loss, train_top1, val_top1, val_top5, route_histogram(routes))
        history.append(metrics)
        write_metrics(history, metrics_csv)
        logger.info(
            f'epoch {epoch}: train_loss={train_loss:.4f} train_top1={train_top1:.3f} '
            f'val_top1={val_top1:.3f} val_top5={val_top5:.3f} routes={metrics.routes}'
        )

        config = _snapshot_config(run, model, class_names, metrics)
        if val_top1 > best_top1:
            best_epoch, best_top1 = epoch, val_top1
            save_checkpoint(best_path, snapshot(model, config, model.architecture_hash(), step, rng))
        if epoch == run.epochs:
            save_checkpoint(out_dir / LAST_CHECKPOINT, snapshot(model, config, model.architecture_hash(), step, rng))

    plot_metrics(history, out_dir / 'metrics.png')
    logger.info(f'Best val top-1 {best_top1:.3f} at epoch {best_epoch}; checkpoint {best_path}')
    return TrainResult(out_dir, best_path, metrics_csv, history, best_epoch, best_top1)


def write_evaluation(result: EvalResult, out_dir: Path) -> dict[str, Path]:
    out_dir = ensure_directory_exists(str(out_dir))
    prefix = result.split
    paths = {
        'per_class': out_dir / f'{prefix}_per_class.csv',
        'confusion': out_dir / f'{prefix}_confusion.csv',
        'confusion_png': out_dir / f'{prefix}_confusion.png',
        'report': out_dir / f'{prefix}_report.json',
    }
    result.per_class().to_csv(paths['per_class'], index=False)
    pd.DataFrame(result.confusion, index=result.class_names, columns=result.class_names).to_csv(paths['confusion'])
    plot_confusion(result.confusion, result.class_names, paths['confusion_png'])
    save_json(result.report(), paths['report'])
    return paths


def evaluate(
    checkpoint_path: Path,
    data_root: Optional[Path] = None,
    split: str = 'test',
    out_dir: Optional[Path] = None,
    overrides: Optional[dict[str, Any]] = None,
    force: bool = False,
) -> EvalResult:
    """
    Evaluate a checkpoint on one split and write the per-class, confusion and report files.

    `overrides` may change run settings that do not alter the architecture
    (e.g. modality, batch_size).

    Raises:
        CheckpointError: If the file is unreadable or does not fit the model.
        ClassCountMismatchError: If the dataset's class count differs from the checkpoint's.
    """
    new_run_id('eval')
    checkpoint = load_checkpoint(Path(checkpoint_path))
    run = RunConfig(**{**checkpoint.config['run'], **(overrides or {})})
    data_root = Path(data_root or run.data_root)
    trained_classes = checkpoint.config['class_names']
    class_names = read_class_names(data_root)
    if len(class_names) != len(trained_classes):
        raise ClassCountMismatchError(len(trained_classes), len(class_names))

    model = build_model(run, len(trained_classes))
    checkpoint.apply_to(model, expected_hash=model.architecture_hash(), force=force)
    arrays = _load_split(data_root, split, run)
    result = evaluate_arrays(model, arrays, run, trained_classes, split)
    logger.info(
        f'{split}: top1={result.top1:.4f} top5={result.top5:.4f} over {result.num_samples} samples; '
        f'routes={result.route_counts}'
    )
    write_evaluation(result, Path(out_dir) if out_dir else Path(checkpoint_path).parent)
    return result
