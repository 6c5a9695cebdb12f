"""Synthetic writer and glyph corpora, and the on-disk dataset layout."""

from corpus.datasets import (DatasetError, GlyphDataset, WordItem, WriterDataset, carve_validation,
                             gen_glyph_dataset, gen_identification_dataset)
from corpus.glyphs import GlyphError, render_word
from corpus.ingest import export_dataset, ingest_directory, ingest_glyphs
from corpus.styles import WriterStyle, gen_writer_style

__all__ = ['DatasetError', 'GlyphDataset', 'GlyphError', 'WordItem', 'WriterDataset', 'WriterStyle',
           'carve_validation', 'export_dataset', 'gen_glyph_dataset', 'gen_identification_dataset',
           'gen_writer_style', 'ingest_directory', 'ingest_glyphs', 'render_word']
