"""
Dataset Directory Layout

Reads and writes word corpora laid out as

    root/{train,val,test}/writer_<id>/*.pgm     (val optional, PNG accepted)
    root/manifest.csv                           (optional: relative_path, writer_id, split)

Writers are labelled by the natural sort order of their directory names.
When a manifest is present it is authoritative for the split of every file
it lists.

Glyph corpora for pretraining use one directory per class:

    root/<class>/*.pgm                          (PNG accepted)
"""

import csv
import logging
import re
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from corpus.datasets import SPLITS, DatasetError, GlyphDataset, WordItem, WriterDataset
from imaging.word_image import ImageFormatError, read_image, write_image

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = ('.pgm', '.png')
MANIFEST = 'manifest.csv'
MANIFEST_FIELDS = ('relative_path', 'writer_id', 'split')


def _natural_key(name: str) -> Tuple:
    return tuple(int(part) if part.isdigit() else part for part in re.split(r'(\d+)', name))


def _read_manifest(root: Path) -> Dict[str, str]:
    """relative_path -> split for every manifest row."""
    splits = {}
    with open(root / MANIFEST, newline='', encoding='utf-8') as handle:
        reader = csv.DictReader(handle)
        missing = [f for f in MANIFEST_FIELDS if f not in (reader.fieldnames or [])]
        if missing:
            raise DatasetError(f"{MANIFEST} lacks column(s): {', '.join(missing)}")
        for row in reader:
            split = row['split'].strip()
            if split not in SPLITS:
                raise DatasetError(f"{MANIFEST}: unknown split {split!r} for {row['relative_path']}")
            splits[row['relative_path'].strip()] = split
    return splits


def ingest_directory(root: Union[str, Path]) -> WriterDataset:
    """Load a word corpus from ``root``.

    Args:
        root (str | Path): corpus root in the layout above

    Returns:
        WriterDataset: one item per readable image; stray non-image files are
        skipped with a warning

    Raises:
        DatasetError: missing layout, an empty writer directory, or a writer
        that lacks train or test words
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    manifest = _read_manifest(root) if (root / MANIFEST).exists() else {}

    files: Dict[str, List[Tuple[Path, str]]] = {}
    for split in SPLITS:
        split_dir = root / split
        if not split_dir.is_dir():
            continue
        for writer_dir in sorted(p for p in split_dir.iterdir() if p.is_dir()):
            images = []
            for path in sorted(writer_dir.iterdir()):
                if not path.is_file():
                    continue
                if path.suffix.lower() not in IMAGE_SUFFIXES:
                    logger.warning(f"Skipping non-image file {path}")
                    continue
                images.append(path)
            if not images:
                raise DatasetError(f"writer directory {writer_dir} contains no images")
            for path in images:
                relative = path.relative_to(root).as_posix()
                files.setdefault(writer_dir.name, []).append((path, manifest.get(relative, split)))

    if not files:
        raise DatasetError(f"no writer directories found under {root}/{{train,test}}")

    names = sorted(files, key=_natural_key)
    items = []
    for label, name in enumerate(names):
        present = {split for _, split in files[name]}
        for required in ('train', 'test'):
            if required not in present:
                raise DatasetError(f"writer {name} has no {required} images")
        for path, split in files[name]:
            try:
                image = read_image(path)
            except ImageFormatError as e:
                raise DatasetError(f"unreadable image {path}: {e}") from e
            items.append(WordItem(image, label, split, path.stem, path.relative_to(root).as_posix()))

    dataset = WriterDataset(items, len(names), f"directory({root})", names)
    for name, counts in dataset.count_report().items():
        logger.info(f"{name}: " + ', '.join(f"{split} {n}" for split, n in counts.items()))
    return dataset


def export_dataset(dataset: WriterDataset, root: Union[str, Path]) -> Path:
    """Write every item as PGM under the layout above plus a manifest; returns the manifest path."""
    root = Path(root)
    rows = []
    for index, item in enumerate(dataset.items):
        name = dataset.writer_names[item.writer]
        stem = f"{index:05d}_{item.text}" if item.text else f"{index:05d}"
        relative = Path(item.split) / name / f"{stem}.pgm"
        write_image(root / relative, item.image)
        rows.append({'relative_path': relative.as_posix(), 'writer_id': name, 'split': item.split})

    manifest = root / MANIFEST
    with open(manifest, 'w', newline='', encoding='utf-8') as handle:
        writer = csv.DictWriter(handle, fieldnames=MANIFEST_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    logger.info(f"Exported {len(rows)} words of {dataset.num_writers} writers to {root}")
    return manifest


def ingest_glyphs(root: Union[str, Path]) -> GlyphDataset:
    """Load a glyph corpus laid out as ``root/<class>/*.pgm``; classes follow the natural sort of their names."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"glyph root {root} is not a directory")
    class_dirs = sorted((p for p in root.iterdir() if p.is_dir()), key=lambda p: _natural_key(p.name))
    images, labels = [], []
    for label, class_dir in enumerate(class_dirs):
        for path in sorted(class_dir.iterdir()):
            if not path.is_file() or path.suffix.lower() not in IMAGE_SUFFIXES:
                logger.warning(f"Skipping non-image file {path}")
                continue
            try:
                images.append(read_image(path))
            except ImageFormatError as e:
                raise DatasetError(f"unreadable image {path}: {e}") from e
            labels.append(label)
    if len(class_dirs) < 2 or not images:
        raise DatasetError(f"glyph corpus {root} needs at least 2 class directories with images")
    logger.info(f"Loaded {len(images)} glyphs in {len(class_dirs)} classes from {root}")
    return GlyphDataset(images, np.asarray(labels, dtype=np.int64), len(class_dirs), f"directory({root})")
