"""
Writer Styles

A writer is a small set of geometric habits: how far the strokes lean, how
thick the pen is, how the glyph shapes are bent, how the baseline drifts, how
large and how widely spaced the letters are. Styles are pure functions of a
global seed and a writer id.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, Tuple

from engine.rng import Rng

logger = logging.getLogger(__name__)

STYLE_RANGES: Dict[str, Tuple[float, float]] = {
    'slant': (-0.35, 0.35),
    'stroke_width': (1.0, 4.0),
    'curvature_jitter': (0.0, 0.12),
    'baseline_wobble': (0.0, 3.0),
    'size_scale': (0.8, 1.25),
    'letter_spacing': (0.05, 0.4),
}

# how much of each range a glyph corpus spreads over, around the range centre
DIVERSITY_SPREAD = {
    'omniglot': 1.0,
    'emnist': 0.35,
}

WRITER_STREAM = 1
SAMPLE_STREAM = 2


@dataclass(frozen=True)
class WriterStyle:
    """Geometric signature of one writer.

    ``shape_seed`` keys the writer's consistent bending of each glyph
    template, so the same writer draws the same letter the same way.
    """

    slant: float
    stroke_width: float
    curvature_jitter: float
    baseline_wobble: float
    size_scale: float
    letter_spacing: float
    shape_seed: int

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)

    def in_ranges(self) -> bool:
        return all(low <= getattr(self, name) <= high for name, (low, high) in STYLE_RANGES.items())


def _draw(rng: Rng, spread: float = 1.0) -> Dict[str, float]:
    values = {}
    for name, (low, high) in STYLE_RANGES.items():
        centre = (low + high) / 2.0
        half = (high - low) / 2.0 * spread
        values[name] = float(rng.uniform(centre - half, centre + half))
    return values


def gen_writer_style(seed: int, writer_id: int) -> WriterStyle:
    """Style of writer ``writer_id`` under the corpus seed ``seed``."""
    rng = Rng(seed).derive(WRITER_STREAM, writer_id)
    values = _draw(rng)
    return WriterStyle(shape_seed=int(rng.integers(0, 2 ** 31 - 1)), **values)


def sample_style(rng: Rng, diversity: str = 'omniglot') -> WriterStyle:
    """A one-off style for a glyph sample; ``diversity`` narrows or widens the draw."""
    if diversity not in DIVERSITY_SPREAD:
        raise ValueError(f"diversity must be one of {sorted(DIVERSITY_SPREAD)}, got {diversity!r}")
    values = _draw(rng, DIVERSITY_SPREAD[diversity])
    return WriterStyle(shape_seed=int(rng.integers(0, 2 ** 31 - 1)), **values)
