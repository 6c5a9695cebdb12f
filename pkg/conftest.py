"""Shared pytest fixtures: micro model configurations and tiny corpora."""

import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from attention.mobile_attention import AttentionConfig  # noqa: E402
from corpus.datasets import gen_glyph_dataset, gen_identification_dataset  # noqa: E402
from network.config import ModelConfig  # noqa: E402

MICRO_SIDE = 24


def micro(**overrides) -> ModelConfig:
    """A network small enough to train in seconds: widths 4/8/16/32, 24-pixel fragments."""
    values = dict(num_writers=3, channel_scale=16, fragment_side=MICRO_SIDE, grid=3,
                  attention=AttentionConfig(heads=2, head_dim=4), embedding_dim=8, mode='wd_only',
                  attention_placement='none')
    values.update(overrides)
    return ModelConfig(**values)


@pytest.fixture
def micro_config():
    return micro


@pytest.fixture(scope='session')
def tiny_words():
    """3 synthetic writers with 6 words each (4 train, 1 val, 1 test)."""
    return gen_identification_dataset(3, 6, seed=7)


@pytest.fixture(scope='session')
def tiny_glyphs():
    return gen_glyph_dataset(4, 4, seed=3)
