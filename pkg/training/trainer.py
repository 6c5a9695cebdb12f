"""
Training Loops

Triplet pretraining of the writer-independent stream on a glyph corpus, and
end-to-end training of the writer classifier on word fragments. Both loops
are single-writer over the model and fully determined by the seed: batch
order, triplet draws and dropout masks all come from derived Rng streams.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from corpus.datasets import GlyphDataset, WriterDataset, carve_validation
from engine import ops
from engine.rng import Rng
from engine.tensor import Tape, Tensor
from imaging.fragments import prepare_word, resize_with_padding, to_array
from inference.aggregation import build_report
from network.config import FreezeMask
from network.dual_stream import DualStreamNetwork
from training.losses import classification_loss, triplet_loss
from training.optimizers import Adam, PlateauScheduler

logger = logging.getLogger(__name__)

ORDER_STREAM = 1
DROPOUT_STREAM = 2
TRIPLET_STREAM = 3
VAL_TRIPLET_STREAM = 4
VAL_SPLIT_STREAM = 5


class TrainingError(RuntimeError):
    """A training run that cannot start (missing pretrained weights, unusable data)."""


@dataclass
class TrainConfig:
    """Optimisation settings for both loops."""

    batch_size: int = 16
    epochs: int = 150
    pretrain_epochs: int = 100
    learning_rate: float = 0.001
    label_smoothing: float = 0.1
    margin: float = 0.2
    seed: int = 0
    val_fraction: float = 0.1
    patience: int = 10
    pretrain_patience: int = 5
    lr_factor: float = 0.5
    track_train_accuracy: bool = False
    compute_val_loss: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.epochs < 0 or self.pretrain_epochs < 0:
            raise ValueError("epoch counts must not be negative")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError(f"label_smoothing must lie in [0, 1), got {self.label_smoothing}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


class MetricsLog:
    """Newline-delimited JSON records, one per epoch; in memory when no path is given."""

    def __init__(self, path: Optional[Path] = None):
        self.path = Path(path) if path is not None else None
        self.records: List[Dict[str, object]] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text('', encoding='utf-8')

    def append(self, record: Dict[str, object]) -> None:
        self.records.append(record)
        if self.path is not None:
            with open(self.path, 'a', encoding='utf-8') as handle:
                handle.write(json.dumps(record, sort_keys=True) + '\n')

    @staticmethod
    def read(path) -> List[Dict[str, object]]:
        lines = Path(path).read_text(encoding='utf-8').splitlines()
        return [json.loads(line) for line in lines if line.strip()]


@dataclass
class TrainResult:
    model: DualStreamNetwork
    history: List[Dict[str, object]] = field(default_factory=list)


def _batches(order: np.ndarray, batch_size: int) -> List[np.ndarray]:
    """Consecutive slices of ``order``; a trailing single item joins the previous batch."""
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate([batches[-2], batches.pop()])
    return batches


# ---------------------------------------------------------------------------
# writer-independent pretraining
# ---------------------------------------------------------------------------

def _glyph_arrays(dataset: GlyphDataset, side: int) -> np.ndarray:
    return np.stack([to_array(resize_with_padding(image, side)) for image in dataset.images])


def _split_glyphs(labels: np.ndarray, fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Per class, floor(n * fraction) samples go to validation while at least two stay for training."""
    rng = Rng(seed).derive(VAL_SPLIT_STREAM)
    train, val = [], []
    for label in np.unique(labels):
        members = np.flatnonzero(labels == label)
        members = members[rng.derive(int(label)).permutation(len(members))]
        count = min(int(np.floor(len(members) * fraction)), max(0, len(members) - 2))
        val.extend(members[:count].tolist())
        train.extend(members[count:].tolist())
    return np.asarray(sorted(train), dtype=np.int64), np.asarray(sorted(val), dtype=np.int64)


def _sample_triplets(anchors: np.ndarray, pool: np.ndarray, labels: np.ndarray,
                     rng: Rng) -> Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """For each anchor, a random positive (same class, other sample) and negative (other class) from ``pool``."""
    a_idx, p_idx, n_idx = [], [], []
    for anchor in anchors:
        label = labels[anchor]
        positives = pool[(labels[pool] == label) & (pool != anchor)]
        negatives = pool[labels[pool] != label]
        if len(positives) == 0 or len(negatives) == 0:
            continue
        a_idx.append(anchor)
        p_idx.append(int(positives[int(rng.integers(0, len(positives)))]))
        n_idx.append(int(negatives[int(rng.integers(0, len(negatives)))]))
    if not a_idx:
        return None
    return np.asarray(a_idx), np.asarray(p_idx), np.asarray(n_idx)


def _triplet_pass(model: DualStreamNetwork, arrays: np.ndarray, triplet, margin: float, mode: str,
                  rng: Optional[Rng]) -> Tensor:
    count = len(triplet[0])
    batch = Tensor(arrays[np.concatenate(triplet)])
    embeddings = model.wi_forward(batch, mode, head='embedding', rng=rng)
    anchor, positive, negative = (ops.slice_rows(embeddings, i * count, (i + 1) * count) for i in range(3))
    return triplet_loss(anchor, positive, negative, margin)


def pretrain_wi(model: DualStreamNetwork, dataset: GlyphDataset, config: TrainConfig,
                metrics_path: Optional[Path] = None) -> TrainResult:
    """Train the WI stream and its embedding head with the triplet loss.

    Every anchor of a shuffled batch gets a positive and a negative drawn from
    the training pool; anchors, positives and negatives pass through the
    network as one batch. The learning rate halves when the validation loss
    (training loss without a validation pool) stalls for ``pretrain_patience``
    epochs. Validation triplets are scored in inference mode and never reach
    the optimizer; ``compute_val_loss`` only decides whether their loss is
    recorded, the scheduler watches it either way.
    """
    if model.wi is None:
        raise TrainingError(f"mode {model.config.mode!r} has no writer-independent stream to pretrain")
    sizes = dataset.class_sizes()
    usable = [label for label, size in sizes.items() if size >= 2]
    if len(usable) < 2:
        raise TrainingError("glyph corpus too small to form triplets: need 2 classes with 2 samples each")

    arrays = _glyph_arrays(dataset, model.config.fragment_side)
    labels = np.asarray(dataset.labels)
    train_idx, val_idx = _split_glyphs(labels, config.val_fraction, config.seed)
    params = model.pretraining_parameters()
    optimizer = Adam(params, lr=config.learning_rate)
    scheduler = PlateauScheduler(optimizer, factor=config.lr_factor, patience=config.pretrain_patience, mode='min')
    log = MetricsLog(metrics_path)
    root = Rng(config.seed)
    logger.info(f"Pretraining WI stream on {len(train_idx)} glyphs ({len(val_idx)} held out), "
                f"{config.pretrain_epochs} epochs")

    val_triplets = None
    if len(val_idx):
        val_triplets = _sample_triplets(val_idx, val_idx, labels, root.derive(VAL_TRIPLET_STREAM))

    for epoch in range(config.pretrain_epochs):
        order = train_idx[root.derive(ORDER_STREAM, epoch).permutation(len(train_idx))]
        total, seen = 0.0, 0
        for number, anchors in enumerate(_batches(order, config.batch_size)):
            triplet = _sample_triplets(anchors, train_idx, labels, root.derive(TRIPLET_STREAM, epoch, number))
            if triplet is None:
                continue
            with Tape() as tape:
                loss = _triplet_pass(model, arrays, triplet, config.margin, 'train',
                                     root.derive(DROPOUT_STREAM, epoch, number))
                tape.backward(loss)
            optimizer.step()
            optimizer.zero_grad()
            total += loss.item() * len(triplet[0])
            seen += len(triplet[0])
        train_loss = total / seen if seen else 0.0

        monitored = train_loss
        if val_triplets is not None:
            monitored = _triplet_pass(model, arrays, val_triplets, config.margin, 'infer', None).item()
        val_loss = monitored if val_triplets is not None and config.compute_val_loss else None
        record = {'epoch': epoch + 1, 'lr': optimizer.lr, 'train_loss': train_loss, 'val_loss': val_loss}
        log.append(record)
        logger.info(f"pretrain epoch {epoch + 1}: lr {optimizer.lr:g}, loss {train_loss:.4f}"
                    + (f", val loss {val_loss:.4f}" if val_loss is not None else ''))
        scheduler.step(monitored)

    model.wi_pretrained = True
    return TrainResult(model, log.records)


# ---------------------------------------------------------------------------
# writer classification
# ---------------------------------------------------------------------------

def _word_fragments(items, grid: int, side: int) -> Tuple[np.ndarray, np.ndarray]:
    """Fragment array [total, side, side, 1] and the writer label of each fragment."""
    arrays, labels = [], []
    for item in items:
        fragments = prepare_word(item.image, grid, side)
        arrays.append(fragments)
        labels.extend([item.writer] * len(fragments))
    return np.concatenate(arrays), np.asarray(labels, dtype=np.int64)


def _word_rates(model: DualStreamNetwork, items, k_list: Sequence[int] = (1, 5)) -> Dict[int, float]:
    """Word-level Top-k rates of the model in inference mode."""
    config = model.config
    scores = []
    for item in items:
        probs = model.predict(prepare_word(item.image, config.effective_grid, config.fragment_side))
        scores.append(probs.astype(np.float64).mean(axis=0))
    return build_report(scores, [item.writer for item in items], config.num_writers, k_list).rates


def train_step(model: DualStreamNetwork, optimizer: Adam, fragments: np.ndarray, labels: Sequence[int],
               epsilon: float, rng: Optional[Rng] = None) -> float:
    """One optimizer update on a fragment batch; returns the batch loss before the update."""
    with Tape() as tape:
        result = model.model_forward(Tensor(fragments), mode='train', rng=rng)
        loss = classification_loss(result.logits, labels, epsilon)
        tape.backward(loss)
    optimizer.step()
    optimizer.zero_grad()
    return loss.item()


def train(model: DualStreamNetwork, dataset: WriterDataset, config: TrainConfig,
          freeze: Optional[FreezeMask] = None, metrics_path: Optional[Path] = None) -> TrainResult:
    """Fit the writer classifier on fragments of the training words.

    Args:
        model (DualStreamNetwork): configured network; in dual mode its WI
            stream must already hold pretrained weights
        dataset (WriterDataset): words with train/test (and optionally val) splits
        config (TrainConfig): optimisation settings
        freeze (FreezeMask): prefixes to hold fixed; defaults to WI stem,
            res1 and res2 whenever pretrained WI weights are present
        metrics_path (Path): newline-delimited JSON metrics file

    Returns:
        TrainResult: the model (trained in place) and one record per epoch
    """
    model_config = model.config
    if model_config.mode == 'dual' and not model.wi_pretrained:
        raise TrainingError("dual mode needs pretrained writer-independent weights "
                            "(pretrain the WI stream and load it before training)")
    if model_config.mode == 'wi_only' and not model.wi_pretrained:
        logger.warning("Training wi_only model without pretrained WI weights")
    if dataset.num_writers != model_config.num_writers:
        raise TrainingError(f"dataset has {dataset.num_writers} writers, model expects {model_config.num_writers}")

    if freeze is None:
        freeze = FreezeMask.default_for(model_config) if model.wi_pretrained else FreezeMask()
    model.apply_freeze(freeze)

    dataset = carve_validation(dataset, config.val_fraction, config.seed)
    train_items = dataset.split('train')
    val_items = dataset.split('val')
    if not train_items:
        raise TrainingError("dataset has no training words")
    fragments, labels = _word_fragments(train_items, model_config.effective_grid, model_config.fragment_side)

    optimizer = Adam(model.classifier_parameters(), lr=config.learning_rate)
    scheduler = PlateauScheduler(optimizer, factor=config.lr_factor, patience=config.patience, mode='max')
    log = MetricsLog(metrics_path)
    root = Rng(config.seed)
    logger.info(f"Training {model_config.mode} model on {len(train_items)} words ({len(labels)} fragments), "
                f"{len(val_items)} validation words, {config.epochs} epochs")

    for epoch in range(config.epochs):
        order = root.derive(ORDER_STREAM, epoch).permutation(len(labels))
        total = 0.0
        for number, batch in enumerate(_batches(order, config.batch_size)):
            loss = train_step(model, optimizer, fragments[batch], labels[batch], config.label_smoothing,
                              root.derive(DROPOUT_STREAM, epoch, number))
            total += loss * len(batch)
        record = {'epoch': epoch + 1, 'lr': optimizer.lr, 'train_loss': total / len(labels),
                  'val_top1': None, 'val_top5': None}
        if val_items:
            rates = _word_rates(model, val_items)
            record['val_top1'], record['val_top5'] = rates[1], rates[5]
        if config.track_train_accuracy:
            record['train_top1'] = _word_rates(model, train_items, (1,))[1]
        log.append(record)
        logger.info(f"epoch {epoch + 1}: lr {optimizer.lr:g}, loss {record['train_loss']:.4f}"
                    + (f", val Top-1 {record['val_top1']:.2f}% Top-5 {record['val_top5']:.2f}%" if val_items else '')
                    + (f", train Top-1 {record['train_top1']:.2f}%" if config.track_train_accuracy else ''))
        if val_items:
            scheduler.step(record['val_top1'])

    return TrainResult(model, log.records)
