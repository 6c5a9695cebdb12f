"""
Word Image Codecs

Grayscale word images (0 = black ink, 255 = white paper) and their on-disk
formats. Binary PGM (P5, maxval 255) is decoded bit-exactly by hand; 8-bit
grayscale PNG goes through Pillow.
"""

import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)

WHITE = 255
PNG_SIGNATURE = b'\x89PNG\r\n\x1a\n'


class ImageFormatError(ValueError):
    """Malformed or unsupported image bytes; ``offset`` points at the failing byte."""

    def __init__(self, message: str, offset: int = 0):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


@dataclass(eq=False)
class GrayImage:
    """8-bit grayscale image stored row-major as a [height, width] uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 2 or self.pixels.shape[0] < 1 or self.pixels.shape[1] < 1:
            raise ValueError(f"GrayImage needs a non-empty 2-D pixel array, got shape {self.pixels.shape}")

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def size(self) -> Tuple[int, int]:
        return self.width, self.height

    @classmethod
    def blank(cls, width: int, height: int, value: int = WHITE) -> 'GrayImage':
        return cls(np.full((height, width), value, dtype=np.uint8))

    def __eq__(self, other) -> bool:
        return isinstance(other, GrayImage) and np.array_equal(self.pixels, other.pixels)


def _pgm_token(data: bytes, pos: int) -> Tuple[bytes, int]:
    """Next whitespace-delimited header token, skipping '#' comments."""
    length = len(data)
    while pos < length:
        char = data[pos:pos + 1]
        if char == b'#':
            while pos < length and data[pos:pos + 1] not in (b'\n', b'\r'):
                pos += 1
        elif char.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < length and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b'#':
        pos += 1
    if start == pos:
        raise ImageFormatError("truncated PGM header", pos)
    return data[start:pos], pos


def load_pgm(data: bytes) -> GrayImage:
    """Decode a binary (P5) PGM with maxval 255."""
    if data[:2] != b'P5':
        raise ImageFormatError(f"wrong magic {data[:2]!r}, expected b'P5'", 0)
    pos = 2
    fields = []
    for label in ('width', 'height', 'maxval'):
        offset = pos
        token, pos = _pgm_token(data, pos)
        if not token.isdigit():
            raise ImageFormatError(f"invalid PGM {label} {token!r}", offset)
        fields.append(int(token))
    width, height, maxval = fields
    if maxval != 255:
        raise ImageFormatError(f"unsupported maxval {maxval}", pos)
    if width < 1 or height < 1:
        raise ImageFormatError(f"invalid PGM dimensions {width}x{height}", pos)
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ImageFormatError("missing whitespace after PGM header", pos)
    pos += 1
    expected = width * height
    payload = data[pos:pos + expected]
    if len(payload) < expected:
        raise ImageFormatError(f"truncated PGM payload: {len(payload)} of {expected} bytes", pos + len(payload))
    return GrayImage(np.frombuffer(payload, dtype=np.uint8).reshape(height, width))


def encode_pgm(image: GrayImage) -> bytes:
    header = f"P5\n{image.width} {image.height}\n255\n".encode('ascii')
    return header + image.pixels.tobytes()


def load_png(data: bytes) -> GrayImage:
    """Decode PNG bytes with Pillow, converting to 8-bit grayscale."""
    try:
        with Image.open(io.BytesIO(data)) as img:
            return GrayImage(np.array(img.convert('L')))
    except Exception as e:
        raise ImageFormatError(f"unreadable PNG: {e}", 0) from e


def encode_png(image: GrayImage) -> bytes:
    buffer = io.BytesIO()
    Image.fromarray(image.pixels, mode='L').save(buffer, format='PNG')
    return buffer.getvalue()


def decode_image(data: bytes) -> GrayImage:
    """Dispatch on the file signature: P5 PGM or PNG."""
    if data[:2] == b'P5':
        return load_pgm(data)
    if data[:8] == PNG_SIGNATURE:
        return load_png(data)
    raise ImageFormatError("unsupported image format (expected binary PGM or PNG)", 0)


def read_image(path: Union[str, Path]) -> GrayImage:
    return decode_image(Path(path).read_bytes())


def write_image(path: Union[str, Path], image: GrayImage) -> None:
    """Write PGM or PNG depending on the file suffix."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == '.png':
        path.write_bytes(encode_png(image))
    else:
        path.write_bytes(encode_pgm(image))
