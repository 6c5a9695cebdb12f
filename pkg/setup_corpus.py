"""
Corpus Setup Script for Writer Identification

Generates a synthetic word corpus and a synthetic glyph corpus and writes
them to disk in the directory layouts the command line reads, so the
pipeline can be tried without a real handwriting dataset.
"""

import shutil
from pathlib import Path

import click

from corpus.datasets import gen_glyph_dataset, gen_identification_dataset
from corpus.ingest import export_dataset
from imaging.word_image import write_image


def export_glyphs(glyphs, root: Path) -> int:
    """Write glyph images as ``root/class_<label>/<index>.pgm``; returns the number written."""
    for index, (image, label) in enumerate(zip(glyphs.images, glyphs.labels)):
        write_image(root / f"class_{int(label):03d}" / f"{index:05d}.pgm", image)
    return len(glyphs.images)


def create_corpus(root: Path, writers: int, words: int, classes: int, samples: int, seed: int,
                  diversity: str) -> None:
    """Create ``root/words`` and ``root/glyphs``, replacing an earlier corpus at the same place."""
    if root.exists():
        shutil.rmtree(root)
        print(f"Removed existing corpus: {root}")

    words_root = root / 'words'
    dataset = gen_identification_dataset(writers, words, seed)
    manifest = export_dataset(dataset, words_root)
    glyph_count = export_glyphs(gen_glyph_dataset(classes, samples, seed, diversity), root / 'glyphs')

    print("\nCorpus summary:")
    for name, counts in dataset.count_report().items():
        print(f"   {name}: " + ', '.join(f"{split} {n}" for split, n in counts.items()))
    print(f"   Manifest: {manifest}")
    print(f"   Glyphs: {glyph_count} in {classes} classes ({diversity})")
    print("\nNext steps:")
    print(f"   python app.py pretrain --glyphs {root / 'glyphs'} --out runs/wi.fdwi --scale 4 --side 32")
    print(f"   python app.py train --data {words_root} --wi-ckpt runs/wi.fdwi --out runs/dual.fdwi --scale 4 --side 32")


@click.command()
@click.option('--root', type=click.Path(file_okay=False, path_type=Path), default=Path('data/synthetic'),
              show_default=True)
@click.option('--writers', type=click.IntRange(min=2), default=10, show_default=True)
@click.option('--words', type=click.IntRange(min=4), default=60, show_default=True)
@click.option('--classes', type=click.IntRange(min=2), default=100, show_default=True)
@click.option('--samples', type=click.IntRange(min=2), default=20, show_default=True)
@click.option('--seed', type=int, default=0, show_default=True)
@click.option('--diversity', type=click.Choice(['omniglot', 'emnist']), default='omniglot', show_default=True)
def main(root, writers, words, classes, samples, seed, diversity):
    print("Setting up synthetic writer identification corpus...")
    print("=" * 60)
    create_corpus(root, writers, words, classes, samples, seed, diversity)
    print("=" * 60)


if __name__ == "__main__":
    main()
