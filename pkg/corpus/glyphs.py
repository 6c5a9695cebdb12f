"""
Stroke Glyphs and Rendering

Glyphs are lists of polyline strokes in a unit box (x to the right, y up from
the baseline; x-height 0.5, ascenders reach 1.0, descenders -0.4). Rendering
applies a WriterStyle: glyph bending, slant, baseline wobble, letter size and
spacing, pen width. Strokes are drawn with Pillow on a 4x supersampled canvas
and box-filtered down for anti-aliased grayscale.
"""

import logging
import math
from typing import Dict, List, Tuple

import numpy as np
from PIL import Image, ImageDraw

from corpus.styles import WriterStyle
from engine.rng import Rng
from imaging.word_image import WHITE, GrayImage

logger = logging.getLogger(__name__)

Point = Tuple[float, float]
Stroke = List[Point]

SUPERSAMPLE = 4
GLYPH_HEIGHT = 28
GLYPH_WIDTH = 0.65
MAX_TEXT = 10
RENDER_JITTER = 0.3


class GlyphError(ValueError):
    """Text that cannot be drawn with the glyph set."""


def line(*points: Point) -> Stroke:
    return [(float(x), float(y)) for x, y in points]


def arc(cx: float, cy: float, rx: float, ry: float, start: float, end: float) -> Stroke:
    """Elliptic arc from ``start`` to ``end`` degrees, counter-clockwise when end > start."""
    steps = max(4, int(abs(end - start) / 15))
    angles = np.radians(np.linspace(start, end, steps + 1))
    return [(cx + rx * math.cos(a), cy + ry * math.sin(a)) for a in angles]


def _bowl(cx: float = 0.45) -> Stroke:
    return arc(cx, 0.25, 0.25, 0.25, 0, 360)


GLYPHS: Dict[str, List[Stroke]] = {
    'a': [arc(0.45, 0.25, 0.27, 0.25, 30, 330), line((0.72, 0.5), (0.72, 0.0))],
    'b': [line((0.2, 1.0), (0.2, 0.0)), _bowl()],
    'c': [arc(0.5, 0.25, 0.3, 0.25, 40, 320)],
    'd': [_bowl(), line((0.7, 1.0), (0.7, 0.0))],
    'e': [line((0.2, 0.25), (0.8, 0.25)), arc(0.5, 0.25, 0.3, 0.25, 0, 320)],
    'f': [arc(0.6, 0.8, 0.2, 0.2, 20, 180) + line((0.4, 0.0)), line((0.2, 0.5), (0.65, 0.5))],
    'g': [_bowl(), line((0.7, 0.5)) + arc(0.45, -0.2, 0.25, 0.2, 0, -170)],
    'h': [line((0.2, 1.0), (0.2, 0.0)), arc(0.45, 0.25, 0.25, 0.25, 180, 0) + line((0.7, 0.0))],
    'i': [line((0.5, 0.5), (0.5, 0.0)), line((0.5, 0.7), (0.5, 0.73))],
    'j': [line((0.55, 0.5)) + arc(0.35, -0.2, 0.2, 0.2, 0, -180), line((0.55, 0.7), (0.55, 0.73))],
    'k': [line((0.2, 1.0), (0.2, 0.0)), line((0.7, 0.5), (0.2, 0.2), (0.75, 0.0))],
    'l': [line((0.5, 1.0), (0.5, 0.0))],
    'm': [line((0.1, 0.5), (0.1, 0.0)), arc(0.3, 0.3, 0.2, 0.2, 180, 0) + line((0.5, 0.0)),
          arc(0.7, 0.3, 0.2, 0.2, 180, 0) + line((0.9, 0.0))],
    'n': [line((0.2, 0.5), (0.2, 0.0)), arc(0.45, 0.25, 0.25, 0.25, 180, 0) + line((0.7, 0.0))],
    'o': [arc(0.5, 0.25, 0.3, 0.25, 0, 360)],
    'p': [line((0.2, 0.5), (0.2, -0.4)), _bowl()],
    'q': [_bowl(), line((0.7, 0.5), (0.7, -0.4))],
    'r': [line((0.25, 0.5), (0.25, 0.0)), arc(0.5, 0.3, 0.25, 0.2, 180, 45)],
    's': [arc(0.5, 0.375, 0.22, 0.125, 30, 270) + arc(0.5, 0.125, 0.22, 0.125, 90, -150)],
    't': [line((0.45, 0.9)) + arc(0.6, 0.1, 0.15, 0.1, 180, 300), line((0.2, 0.5), (0.7, 0.5))],
    'u': [arc(0.45, 0.25, 0.25, 0.25, 180, 360), line((0.2, 0.5), (0.2, 0.25)), line((0.7, 0.5), (0.7, 0.0))],
    'v': [line((0.15, 0.5), (0.5, 0.0), (0.85, 0.5))],
    'w': [line((0.05, 0.5), (0.275, 0.0), (0.5, 0.4), (0.725, 0.0), (0.95, 0.5))],
    'x': [line((0.2, 0.5), (0.8, 0.0)), line((0.8, 0.5), (0.2, 0.0))],
    'y': [line((0.2, 0.5), (0.5, 0.05)), line((0.8, 0.5), (0.35, -0.4))],
    'z': [line((0.2, 0.5), (0.8, 0.5), (0.2, 0.0), (0.8, 0.0))],
}

ALPHABET = ''.join(sorted(GLYPHS))


def random_glyph(rng: Rng) -> List[Stroke]:
    """An arbitrary glyph shape of 1-4 line or arc strokes, used as a pretraining class."""
    strokes = []
    for _ in range(int(rng.integers(1, 5))):
        if rng.uniform() < 0.5:
            count = int(rng.integers(2, 4))
            points = rng.uniform(0.0, 1.0, (count, 2))
            strokes.append([(float(x), float(y)) for x, y in points])
        else:
            cx, cy = rng.uniform(0.25, 0.75, 2)
            rx, ry = rng.uniform(0.1, 0.3, 2)
            start = float(rng.uniform(0, 360))
            span = float(rng.uniform(90, 300))
            strokes.append(arc(float(cx), float(cy), float(rx), float(ry), start, start + span))
    return strokes


def _bend(strokes: List[Stroke], rng: Rng, amplitude: float) -> List[Stroke]:
    """Smoothly displace every stroke: offsets drawn at both ends, interpolated along the stroke."""
    bent = []
    for stroke in strokes:
        ends = rng.normal(0.0, amplitude, (2, 2)) if amplitude > 0 else np.zeros((2, 2))
        weights = np.linspace(0.0, 1.0, len(stroke))[:, None]
        offsets = (1.0 - weights) * ends[0] + weights * ends[1]
        bent.append([(x + dx, y + dy) for (x, y), (dx, dy) in zip(stroke, offsets)])
    return bent


def _draw(paths: List[np.ndarray], style: WriterStyle) -> GrayImage:
    """Rasterise pixel-space polylines with round joins and caps onto a content-sized white canvas."""
    points = np.concatenate(paths)
    margin = style.stroke_width + 4.0
    origin = points.min(axis=0) - margin
    extent = points.max(axis=0) + margin - origin
    width = max(1, int(math.ceil(extent[0])))
    height = max(1, int(math.ceil(extent[1])))

    canvas = Image.new('L', (width * SUPERSAMPLE, height * SUPERSAMPLE), WHITE)
    draw = ImageDraw.Draw(canvas)
    pen = max(1, int(round(style.stroke_width * SUPERSAMPLE)))
    radius = pen / 2.0
    for path in paths:
        scaled = [tuple(p) for p in (path - origin) * SUPERSAMPLE]
        if len(scaled) > 1:
            draw.line(scaled, fill=0, width=pen, joint='curve')
        for x, y in (scaled[0], scaled[-1]):
            draw.ellipse((x - radius, y - radius, x + radius, y + radius), fill=0)
    small = canvas.resize((width, height), Image.Resampling.BOX)
    return GrayImage(np.asarray(small))


def _place(strokes: List[Stroke], style: WriterStyle, pen_x: float, baseline: float, size: float) -> List[np.ndarray]:
    """Unit-box strokes to pixel coordinates: scale, slant about the baseline, shift to the pen position."""
    shear = math.tan(style.slant)
    placed = []
    for stroke in strokes:
        unit = np.asarray(stroke, dtype=np.float64)
        x = pen_x + unit[:, 0] * size * GLYPH_WIDTH + unit[:, 1] * size * shear
        y = baseline - unit[:, 1] * size
        placed.append(np.stack([x, y], axis=1))
    return placed


def render_strokes(strokes: List[Stroke], style: WriterStyle, rng: Rng, height: int = GLYPH_HEIGHT) -> GrayImage:
    """Render one free-standing glyph shape."""
    size = height * style.size_scale
    bent = _bend(strokes, Rng(style.shape_seed), style.curvature_jitter)
    bent = _bend(bent, rng, style.curvature_jitter * RENDER_JITTER)
    return _draw(_place(bent, style, 0.0, 0.0, size), style)


def render_word(style: WriterStyle, text: str, rng: Rng, height: int = GLYPH_HEIGHT) -> GrayImage:
    """Draw ``text`` (1-10 letters a-z) in the writer's hand.

    Args:
        style (WriterStyle): writer signature
        text (str): lowercase letters from the glyph set
        rng (Rng): per-render variation (small extra bending and the wobble phase)
        height (int): nominal ascender height in pixels before ``size_scale``

    Returns:
        GrayImage: anti-aliased word on a white canvas sized to the content
    """
    if not 1 <= len(text) <= MAX_TEXT:
        raise GlyphError(f"text must have 1 to {MAX_TEXT} letters, got {len(text)}")
    unknown = sorted({c for c in text if c not in GLYPHS})
    if unknown:
        raise GlyphError(f"unknown glyph(s): {''.join(unknown)!r}")

    size = height * style.size_scale
    advance = size * GLYPH_WIDTH * (1.0 + style.letter_spacing)
    phase = float(rng.uniform(0.0, 2.0 * math.pi))
    paths: List[np.ndarray] = []
    for index, char in enumerate(text):
        habit = Rng(style.shape_seed).derive(ord(char))
        strokes = _bend(GLYPHS[char], habit, style.curvature_jitter)
        strokes = _bend(strokes, rng.derive(index), style.curvature_jitter * RENDER_JITTER)
        baseline = style.baseline_wobble * math.sin(phase + 0.9 * index)
        paths.extend(_place(strokes, style, index * advance, baseline, size))
    return _draw(paths, style)
