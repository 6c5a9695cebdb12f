"""
Word and Glyph Datasets

Labelled word images split into train/val/test per writer, and class-labelled
glyph images for pretraining the writer-independent stream. The synthetic
generators are pure functions of their seeds.
"""

import logging
from collections import Counter, OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Set

import numpy as np

from corpus.glyphs import ALPHABET, random_glyph, render_strokes, render_word
from corpus.styles import gen_writer_style, sample_style
from engine.rng import Rng
from imaging.word_image import GrayImage

logger = logging.getLogger(__name__)

SPLITS = ('train', 'val', 'test')
SPLIT_SHARES = {'test': 0.2, 'val': 0.1}
TEXT_LENGTH = (3, 7)

TEXT_STREAM = 10
RENDER_STREAM = 11
SPLIT_STREAM = 12
GLYPH_SHAPE_STREAM = 20
GLYPH_SAMPLE_STREAM = 21
CARVE_STREAM = 30


class DatasetError(ValueError):
    """Dataset parameters below the minimum, or a corpus that breaks the split rules."""


@dataclass
class WordItem:
    """One word image with its writer label and split."""

    image: GrayImage
    writer: int
    split: str
    text: str = ''
    path: str = ''


@dataclass
class WriterDataset:
    """Words of K writers; every writer has train and test words."""

    items: List[WordItem]
    num_writers: int
    provenance: str
    writer_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.writer_names:
            self.writer_names = [f"writer_{i:03d}" for i in range(self.num_writers)]

    def split(self, name: str) -> List[WordItem]:
        if name not in SPLITS:
            raise DatasetError(f"unknown split {name!r}, expected one of {SPLITS}")
        return [item for item in self.items if item.split == name]

    def writers_in(self, name: str) -> Set[int]:
        return {item.writer for item in self.split(name)}

    def count_report(self) -> Dict[str, Dict[str, int]]:
        """Words per writer and split, keyed by writer name."""
        counts = Counter((item.writer, item.split) for item in self.items)
        return OrderedDict(
            (self.writer_names[w], {s: counts.get((w, s), 0) for s in SPLITS}) for w in range(self.num_writers))

    def validate(self) -> None:
        for writer in range(self.num_writers):
            for split in ('train', 'test'):
                if writer not in self.writers_in(split):
                    raise DatasetError(f"writer {self.writer_names[writer]} has no {split} words")


@dataclass
class GlyphDataset:
    """Class-labelled glyph images for triplet pretraining."""

    images: List[GrayImage]
    labels: np.ndarray
    num_classes: int
    provenance: str

    def __len__(self) -> int:
        return len(self.images)

    def class_sizes(self) -> Dict[int, int]:
        return dict(Counter(int(label) for label in self.labels))


def _round_half_up(value: float) -> int:
    return int(np.floor(value + 0.5))


def random_text(rng: Rng, length_range=TEXT_LENGTH) -> str:
    length = int(rng.integers(length_range[0], length_range[1] + 1))
    return ''.join(ALPHABET[int(i)] for i in rng.integers(0, len(ALPHABET), length))


def split_counts(words: int) -> Dict[str, int]:
    """70/10/20 train/val/test counts for one writer, test and val rounded half up."""
    test = _round_half_up(words * SPLIT_SHARES['test'])
    val = _round_half_up(words * SPLIT_SHARES['val'])
    return {'train': words - test - val, 'val': val, 'test': test}


def gen_identification_dataset(num_writers: int, words_per_writer: int, seed: int) -> WriterDataset:
    """Synthetic writers, each writing distinct random words split 70/10/20.

    Args:
        num_writers (int): K, at least 2
        words_per_writer (int): at least 4, so every writer gets train and test words
        seed (int): corpus seed

    Returns:
        WriterDataset: labels 0..K-1, texts disjoint across a writer's splits
    """
    if num_writers < 2:
        raise DatasetError(f"need at least 2 writers, got {num_writers}")
    if words_per_writer < 4:
        raise DatasetError(f"need at least 4 words per writer, got {words_per_writer}")
    root = Rng(seed)
    counts = split_counts(words_per_writer)
    items = []
    for writer in range(num_writers):
        style = gen_writer_style(seed, writer)
        text_rng = root.derive(TEXT_STREAM, writer)
        texts: List[str] = []
        while len(texts) < words_per_writer:
            text = random_text(text_rng)
            if text not in texts:
                texts.append(text)
        order = root.derive(SPLIT_STREAM, writer).permutation(words_per_writer)
        labels = ['train'] * counts['train'] + ['val'] * counts['val'] + ['test'] * counts['test']
        split_of = {int(index): labels[rank] for rank, index in enumerate(order)}
        for index, text in enumerate(texts):
            image = render_word(style, text, root.derive(RENDER_STREAM, writer, index))
            items.append(WordItem(image, writer, split_of[index], text))
    dataset = WriterDataset(items, num_writers, f"synthetic({seed})")
    logger.info(f"Generated {len(items)} words for {num_writers} synthetic writers (seed {seed})")
    return dataset


def gen_glyph_dataset(num_classes: int, samples_per_class: int, seed: int,
                      diversity: str = 'omniglot') -> GlyphDataset:
    """One random glyph shape per class, each sample drawn in its own random style."""
    if num_classes < 2:
        raise DatasetError(f"need at least 2 glyph classes, got {num_classes}")
    if samples_per_class < 1:
        raise DatasetError(f"need at least 1 sample per class, got {samples_per_class}")
    root = Rng(seed)
    images, labels = [], []
    for label in range(num_classes):
        shape = random_glyph(root.derive(GLYPH_SHAPE_STREAM, label))
        for sample in range(samples_per_class):
            sample_rng = root.derive(GLYPH_SAMPLE_STREAM, label, sample)
            style = sample_style(sample_rng.derive(0), diversity)
            images.append(render_strokes(shape, style, sample_rng.derive(1)))
            labels.append(label)
    logger.info(f"Generated {len(images)} glyphs in {num_classes} classes ({diversity} diversity, seed {seed})")
    return GlyphDataset(images, np.asarray(labels, dtype=np.int64), num_classes, f"synthetic({seed},{diversity})")


def carve_validation(dataset: WriterDataset, fraction: float, seed: int) -> WriterDataset:
    """Move a seeded ``fraction`` of each writer's train words to val, unless val words already exist.

    At least one train word per writer always stays in train.
    """
    if dataset.split('val') or fraction <= 0:
        return dataset
    rng = Rng(seed).derive(CARVE_STREAM)
    items = list(dataset.items)
    for writer in range(dataset.num_writers):
        train_idx = [i for i, item in enumerate(items) if item.writer == writer and item.split == 'train']
        count = min(int(np.floor(len(train_idx) * fraction)), len(train_idx) - 1)
        if count <= 0:
            continue
        chosen = rng.derive(writer).permutation(len(train_idx))[:count]
        for position in chosen:
            i = train_idx[int(position)]
            item = items[i]
            items[i] = WordItem(item.image, item.writer, 'val', item.text, item.path)
    return WriterDataset(items, dataset.num_writers, dataset.provenance, list(dataset.writer_names))
