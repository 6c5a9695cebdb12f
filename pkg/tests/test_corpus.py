import logging

import numpy as np
import pytest

from corpus.datasets import (DatasetError, WriterDataset, carve_validation, gen_glyph_dataset,
                             gen_identification_dataset, split_counts)
from corpus.glyphs import ALPHABET, GlyphError, render_word
from corpus.ingest import export_dataset, ingest_directory, ingest_glyphs
from corpus.styles import STYLE_RANGES, gen_writer_style, sample_style
from engine.rng import Rng
from imaging.word_image import GrayImage, write_image


def test_styles_are_deterministic_and_writer_specific():
    assert gen_writer_style(3, 0) == gen_writer_style(3, 0)
    assert gen_writer_style(3, 0) != gen_writer_style(3, 1)
    assert gen_writer_style(3, 0) != gen_writer_style(4, 0)


def test_style_fields_stay_in_range():
    assert all(gen_writer_style(0, writer).in_ranges() for writer in range(1000))
    assert set(STYLE_RANGES) <= set(gen_writer_style(0, 0).as_dict())


def test_narrow_glyph_diversity():
    wide = [sample_style(Rng(1, (i,)), 'omniglot').slant for i in range(300)]
    narrow = [sample_style(Rng(1, (i,)), 'emnist').slant for i in range(300)]
    assert np.std(narrow) < np.std(wide)
    with pytest.raises(ValueError):
        sample_style(Rng(0), 'kanji')


def test_render_word_is_repeatable_with_white_corners():
    style = gen_writer_style(0, 2)
    first = render_word(style, 'hello', Rng(9))
    assert first == render_word(style, 'hello', Rng(9))
    pixels = first.pixels
    assert pixels[0, 0] == pixels[0, -1] == pixels[-1, 0] == pixels[-1, -1] == 255
    assert pixels.min() < 128


def test_writers_differ_on_the_same_text():
    a = render_word(gen_writer_style(0, 0), 'word', Rng(1)).pixels.astype(float)
    b = render_word(gen_writer_style(0, 1), 'word', Rng(1)).pixels.astype(float)
    assert a.shape != b.shape or np.abs(a - b).mean() > 0


@pytest.mark.parametrize('text', ['', 'abcdefghijk', 'Hello', 'a1'])
def test_render_word_rejects_bad_text(text):
    with pytest.raises(GlyphError):
        render_word(gen_writer_style(0, 0), text, Rng(0))


def test_alphabet_has_twenty_six_glyphs():
    assert ALPHABET == 'abcdefghijklmnopqrstuvwxyz'


def test_split_counts():
    assert split_counts(40) == {'train': 28, 'val': 4, 'test': 8}
    assert split_counts(6) == {'train': 4, 'val': 1, 'test': 1}
    assert split_counts(4) == {'train': 3, 'val': 0, 'test': 1}


def test_identification_dataset_layout():
    dataset = gen_identification_dataset(5, 40, seed=1)
    assert len(dataset.items) == 200
    assert dataset.num_writers == 5
    for split in ('train', 'val', 'test'):
        assert dataset.writers_in(split) == set(range(5))
    for writer in range(5):
        train = {i.text for i in dataset.items if i.writer == writer and i.split == 'train'}
        test = {i.text for i in dataset.items if i.writer == writer and i.split == 'test'}
        assert not train & test


def test_identification_dataset_is_seeded(tiny_words):
    again = gen_identification_dataset(3, 6, seed=7)
    assert [(i.text, i.writer, i.split) for i in again.items] == \
        [(i.text, i.writer, i.split) for i in tiny_words.items]
    assert all(a.image == b.image for a, b in zip(again.items, tiny_words.items))


@pytest.mark.parametrize('writers, words', [(1, 10), (3, 3)])
def test_identification_dataset_minimums(writers, words):
    with pytest.raises(DatasetError):
        gen_identification_dataset(writers, words, seed=0)


def test_glyph_dataset_counts_and_determinism():
    glyphs = gen_glyph_dataset(100, 20, seed=0)
    assert len(glyphs) == 2000
    assert glyphs.class_sizes() == {label: 20 for label in range(100)}
    again = gen_glyph_dataset(3, 2, seed=5)
    assert all(a == b for a, b in zip(again.images, gen_glyph_dataset(3, 2, seed=5).images))


def test_glyph_samples_resemble_their_class():
    from imaging.fragments import resize_with_padding, to_array
    glyphs = gen_glyph_dataset(6, 6, seed=2)
    vectors = np.stack([1.0 - to_array(resize_with_padding(image, 32)).ravel() for image in glyphs.images])
    correlation = np.corrcoef(vectors)
    same = glyphs.labels[:, None] == glyphs.labels[None, :]
    off_diagonal = ~np.eye(len(glyphs), dtype=bool)
    assert correlation[same & off_diagonal].mean() > correlation[~same].mean()


def test_carve_validation_moves_train_words():
    dataset = gen_identification_dataset(2, 20, seed=0)
    no_val = WriterDataset([i for i in dataset.items if i.split != 'val'], 2, 'test')
    carved = carve_validation(no_val, 0.25, seed=3)
    for writer in range(2):
        assert sum(1 for i in carved.items if i.writer == writer and i.split == 'val') == 3
    assert carve_validation(dataset, 0.25, seed=3) is dataset
    assert carve_validation(no_val, 0.25, seed=3).items == carved.items


def test_export_and_ingest_round_trip(tmp_path, tiny_words):
    manifest = export_dataset(tiny_words, tmp_path)
    assert manifest.read_text().splitlines()[0] == 'relative_path,writer_id,split'
    loaded = ingest_directory(tmp_path)
    assert loaded.num_writers == 3
    assert loaded.writer_names == tiny_words.writer_names
    assert loaded.count_report() == tiny_words.count_report()
    assert sorted(i.image.pixels.sum() for i in loaded.items) == \
        sorted(i.image.pixels.sum() for i in tiny_words.items)


def minimal_corpus(root, writers=('writer_1', 'writer_2'), splits=('train', 'test')):
    for split in splits:
        for writer in writers:
            write_image(root / split / writer / 'w0.pgm', GrayImage.blank(6, 4, value=10))


def test_minimal_layout(tmp_path):
    minimal_corpus(tmp_path)
    dataset = ingest_directory(tmp_path)
    assert len(dataset.items) == 4 and dataset.num_writers == 2


def test_writers_are_labelled_in_natural_order(tmp_path):
    minimal_corpus(tmp_path, writers=('writer_10', 'writer_2', 'writer_1'))
    dataset = ingest_directory(tmp_path)
    assert dataset.writer_names == ['writer_1', 'writer_2', 'writer_10']
    for item in dataset.items:
        assert dataset.writer_names[item.writer] == item.path.split('/')[1]


def test_stray_files_are_skipped_with_a_warning(tmp_path, caplog):
    minimal_corpus(tmp_path)
    (tmp_path / 'train' / 'writer_1' / 'notes.txt').write_text('scan log')
    with caplog.at_level(logging.WARNING):
        dataset = ingest_directory(tmp_path)
    assert len(dataset.items) == 4
    assert 'notes.txt' in caplog.text


def test_writer_missing_from_train_is_named(tmp_path):
    minimal_corpus(tmp_path)
    write_image(tmp_path / 'test' / 'writer_3' / 'w0.pgm', GrayImage.blank(4, 4))
    with pytest.raises(DatasetError, match='writer_3 has no train'):
        ingest_directory(tmp_path)


def test_empty_writer_directory(tmp_path):
    minimal_corpus(tmp_path)
    (tmp_path / 'train' / 'writer_4').mkdir()
    with pytest.raises(DatasetError, match='no images'):
        ingest_directory(tmp_path)


def test_missing_root(tmp_path):
    with pytest.raises(DatasetError):
        ingest_directory(tmp_path / 'absent')


def test_manifest_overrides_directory_split(tmp_path):
    minimal_corpus(tmp_path)
    write_image(tmp_path / 'train' / 'writer_1' / 'w1.pgm', GrayImage.blank(6, 4))
    (tmp_path / 'manifest.csv').write_text('relative_path,writer_id,split\ntrain/writer_1/w1.pgm,writer_1,val\n')
    dataset = ingest_directory(tmp_path)
    assert [i.path for i in dataset.split('val')] == ['train/writer_1/w1.pgm']


def test_ingest_glyphs(tmp_path):
    for label in ('class_2', 'class_10'):
        for sample in range(2):
            write_image(tmp_path / label / f"{sample}.pgm", GrayImage.blank(5, 5, value=sample))
    (tmp_path / 'class_2' / 'README').write_text('x')
    glyphs = ingest_glyphs(tmp_path)
    assert glyphs.num_classes == 2
    assert glyphs.class_sizes() == {0: 2, 1: 2}


def test_ingest_glyphs_needs_two_classes(tmp_path):
    write_image(tmp_path / 'only' / '0.pgm', GrayImage.blank(5, 5))
    with pytest.raises(DatasetError):
        ingest_glyphs(tmp_path)
