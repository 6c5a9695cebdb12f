"""
Fragment Extraction

Cuts a word image into a P x P grid of equal patches, brings each patch to a
square network input and converts it to a tensor.
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from PIL import Image

from engine.tensor import Tensor
from imaging.word_image import WHITE, GrayImage

logger = logging.getLogger(__name__)

DEFAULT_GRID = 3
DEFAULT_SIDE = 105


@dataclass
class Fragment:
    """One grid cell of a word image."""

    image: GrayImage
    grid_row: int
    grid_col: int


def pad_to_grid(image: GrayImage, grid: int) -> GrayImage:
    """White-pad right/bottom so both extents are multiples of ``grid``."""
    height = -(-image.height // grid) * grid
    width = -(-image.width // grid) * grid
    if (width, height) == image.size:
        return image
    canvas = np.full((height, width), WHITE, dtype=np.uint8)
    canvas[:image.height, :image.width] = image.pixels
    return GrayImage(canvas)


def extract_fragments(image: GrayImage, grid: int = DEFAULT_GRID) -> List[Fragment]:
    """Tile the padded word into ``grid``² non-overlapping patches in row-major order."""
    if grid < 1:
        raise ValueError(f"grid must be positive, got {grid}")
    padded = pad_to_grid(image, grid)
    cell_h = padded.height // grid
    cell_w = padded.width // grid
    fragments = []
    for row in range(grid):
        for col in range(grid):
            patch = padded.pixels[row * cell_h:(row + 1) * cell_h, col * cell_w:(col + 1) * cell_w]
            fragments.append(Fragment(GrayImage(patch.copy()), row, col))
    return fragments


def reassemble(fragments: Sequence[Fragment], original_size: Tuple[int, int]) -> GrayImage:
    """Inverse of extract_fragments: place patches on the grid and crop the padding."""
    grid = int(round(len(fragments) ** 0.5))
    cell_h, cell_w = fragments[0].image.height, fragments[0].image.width
    canvas = np.full((grid * cell_h, grid * cell_w), WHITE, dtype=np.uint8)
    for fragment in fragments:
        r, c = fragment.grid_row, fragment.grid_col
        canvas[r * cell_h:(r + 1) * cell_h, c * cell_w:(c + 1) * cell_w] = fragment.image.pixels
    width, height = original_size
    return GrayImage(canvas[:height, :width])


def scaled_size(width: int, height: int, side: int) -> Tuple[int, int]:
    """Size after scaling the larger extent to ``side``; the other is rounded half up, minimum 1."""
    larger = max(width, height)
    if width >= height:
        return side, max(1, int(np.floor(height * side / larger + 0.5)))
    return max(1, int(np.floor(width * side / larger + 0.5))), side


def resize_with_padding(fragment: GrayImage, side: int = DEFAULT_SIDE) -> GrayImage:
    """Bilinear aspect-preserving resize centred on a white ``side`` x ``side`` canvas."""
    if side < 1:
        raise ValueError(f"side must be positive, got {side}")
    new_w, new_h = scaled_size(fragment.width, fragment.height, side)
    source = Image.fromarray(fragment.pixels, mode='L')
    resized = np.asarray(source.resize((new_w, new_h), Image.Resampling.BILINEAR))
    canvas = np.full((side, side), WHITE, dtype=np.uint8)
    top = (side - new_h) // 2
    left = (side - new_w) // 2
    canvas[top:top + new_h, left:left + new_w] = resized
    return GrayImage(canvas)


def to_array(image: GrayImage) -> np.ndarray:
    """Pixels scaled to [0, 1] as a float32 [H, W, 1] array."""
    return (image.pixels.astype(np.float32) / np.float32(255.0))[:, :, None]


def to_tensor(image: GrayImage) -> Tensor:
    """Network input [1, side, side, 1] with values pixel / 255."""
    return Tensor(to_array(image)[None])


def prepare_word(image: GrayImage, grid: int = DEFAULT_GRID, side: int = DEFAULT_SIDE) -> np.ndarray:
    """All fragments of a word as a [grid², side, side, 1] float32 batch."""
    fragments = extract_fragments(image, grid)
    return np.stack([to_array(resize_with_padding(f.image, side)) for f in fragments])
