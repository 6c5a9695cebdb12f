"""
Activation Heatmaps

Shows which parts of a word drive the decision: the channel mean of each
fragment's final feature map is brought back to fragment size, the pieces are
put back at their grid positions, and the result is normalised and smoothed
to hide the seams between fragments.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import matplotlib
import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from engine.tensor import Tensor
from imaging.fragments import extract_fragments, resize_with_padding, scaled_size, to_array
from imaging.word_image import GrayImage, write_image

logger = logging.getLogger(__name__)

DEFAULT_CMAP = 'jet'
OVERLAY_ALPHA = 0.5


class HeatmapError(ValueError):
    """Activations that cannot be turned into a heatmap (NaN, infinite, malformed)."""


@dataclass
class Heatmap:
    """Grayscale heat image with the word's dimensions, plus the word it was computed for."""

    heat: GrayImage
    word: GrayImage
    sigma: float

    def overlay(self, cmap: str = DEFAULT_CMAP, alpha: float = OVERLAY_ALPHA) -> np.ndarray:
        """RGB uint8 blend of the colour-mapped heat over the word."""
        ramp = matplotlib.colormaps[cmap]
        colour = ramp(self.heat.pixels.astype(np.float64) / 255.0)[:, :, :3]
        base = np.repeat(self.word.pixels[:, :, None].astype(np.float64) / 255.0, 3, axis=2)
        blended = alpha * colour + (1.0 - alpha) * base
        return np.clip(np.round(blended * 255.0), 0, 255).astype(np.uint8)

    def save(self, path, cmap: Optional[str] = None, alpha: float = OVERLAY_ALPHA) -> List[Path]:
        """Write the heat image (format by suffix) and, with ``cmap``, a ``*_overlay.png`` next to it."""
        path = Path(path)
        write_image(path, self.heat)
        written = [path]
        if cmap:
            overlay_path = path.with_name(f"{path.stem}_overlay.png")
            Image.fromarray(self.overlay(cmap, alpha), mode='RGB').save(overlay_path)
            written.append(overlay_path)
        return written


def default_sigma(fragment_side: int) -> float:
    return fragment_side / 20.0


def _resize_float(values: np.ndarray, width: int, height: int) -> np.ndarray:
    image = Image.fromarray(values.astype(np.float32), mode='F')
    return np.asarray(image.resize((width, height), Image.Resampling.BILINEAR), dtype=np.float64)


def fragment_activation(feature_map: np.ndarray, fragment_size: Tuple[int, int], side: int) -> np.ndarray:
    """Channel mean of one [h, w, C] map, upsampled to the network input and cut back to the fragment.

    The fragment was scaled and centred on a ``side`` x ``side`` canvas before
    entering the network; the same box is cropped out here and resized to the
    fragment's own ``(width, height)``.
    """
    mean_map = feature_map.mean(axis=-1)
    full = _resize_float(mean_map, side, side)
    width, height = fragment_size
    new_w, new_h = scaled_size(width, height, side)
    top = (side - new_h) // 2
    left = (side - new_w) // 2
    return _resize_float(full[top:top + new_h, left:left + new_w], width, height)


def compose_heatmap(cell_maps: List[np.ndarray], grid: int, original_size: Tuple[int, int],
                    sigma: float) -> GrayImage:
    """Assemble per-fragment activations into one heat image.

    Args:
        cell_maps (list): ``grid``² arrays in row-major grid order, all the padded cell size
        grid (int): fragments per side
        original_size (tuple): (width, height) of the word before padding
        sigma (float): Gaussian smoothing radius in pixels

    Returns:
        GrayImage: heat values in [0, 255] with the word's dimensions; a constant
        activation gives an all-zero image
    """
    if len(cell_maps) != grid * grid:
        raise HeatmapError(f"expected {grid * grid} fragment maps, got {len(cell_maps)}")
    cell_h, cell_w = cell_maps[0].shape
    canvas = np.zeros((grid * cell_h, grid * cell_w), dtype=np.float64)
    for index, cell in enumerate(cell_maps):
        if cell.shape != (cell_h, cell_w):
            raise HeatmapError(f"fragment map {index} has shape {cell.shape}, expected {(cell_h, cell_w)}")
        row, col = divmod(index, grid)
        canvas[row * cell_h:(row + 1) * cell_h, col * cell_w:(col + 1) * cell_w] = cell
    if not np.all(np.isfinite(canvas)):
        raise HeatmapError("activations contain NaN or infinite values")

    canvas = _min_max(canvas)
    if sigma > 0:
        canvas = gaussian_filter(canvas, sigma=sigma, mode='nearest')
    width, height = original_size
    cropped = _min_max(canvas[:height, :width])
    return GrayImage(np.round(cropped * 255.0).astype(np.uint8))


def _min_max(values: np.ndarray) -> np.ndarray:
    low, high = float(values.min()), float(values.max())
    if high - low <= 1e-12:
        return np.zeros_like(values)
    return (values - low) / (high - low)


def emit_heatmap(word: GrayImage, model, sigma: Optional[float] = None) -> Heatmap:
    """Heat image for ``word`` from the model's final (post-attention, pre-pooling) feature maps."""
    config = model.config
    grid, side = config.effective_grid, config.fragment_side
    sigma = default_sigma(side) if sigma is None else sigma
    fragments = extract_fragments(word, grid)
    batch = np.stack([to_array(resize_with_padding(f.image, side)) for f in fragments])
    feature_maps = model.features(Tensor(batch), mode='infer').data
    if not np.all(np.isfinite(feature_maps)):
        raise HeatmapError("model produced NaN or infinite activations")

    cell_size = (fragments[0].image.width, fragments[0].image.height)
    cells = [fragment_activation(feature_maps[i], cell_size, side) for i in range(len(fragments))]
    logger.debug(f"Heatmap over {len(cells)} fragments of a {word.width}x{word.height} word")
    return Heatmap(compose_heatmap(cells, grid, word.size, sigma), word, sigma)
