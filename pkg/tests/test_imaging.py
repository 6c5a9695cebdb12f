import numpy as np
import pytest

from imaging.fragments import (extract_fragments, pad_to_grid, prepare_word, reassemble, resize_with_padding,
                               scaled_size, to_tensor)
from imaging.word_image import (GrayImage, ImageFormatError, decode_image, encode_pgm, encode_png, load_pgm,
                                read_image, write_image)


def gradient_image(width, height):
    values = (np.arange(width * height) % 251).reshape(height, width)
    return GrayImage(values)


def test_pgm_header_with_comments():
    data = b'P5\n# scanned\n3 2 # size\n255\n' + bytes(range(6))
    image = load_pgm(data)
    assert image.size == (3, 2)
    np.testing.assert_array_equal(image.pixels, [[0, 1, 2], [3, 4, 5]])


def test_truncated_pgm_reports_offset():
    data = encode_pgm(gradient_image(4, 4))[:-3]
    with pytest.raises(ImageFormatError) as info:
        load_pgm(data)
    assert info.value.offset == len(data)


def test_pgm_rejects_other_maxval():
    with pytest.raises(ImageFormatError, match='maxval'):
        load_pgm(b'P5 2 1 65535\n\x00\x00\x00\x00')


def test_unknown_format():
    with pytest.raises(ImageFormatError, match='unsupported'):
        decode_image(b'GIF89a....')


def test_pgm_and_png_files(tmp_path):
    image = gradient_image(7, 5)
    write_image(tmp_path / 'a.pgm', image)
    write_image(tmp_path / 'nested' / 'a.png', image)
    assert read_image(tmp_path / 'a.pgm') == image
    assert read_image(tmp_path / 'nested' / 'a.png') == image
    assert encode_png(image)[:4] == b'\x89PNG'


def test_empty_image_rejected():
    with pytest.raises(ValueError):
        GrayImage(np.zeros((0, 3)))


def test_default_grid_gives_nine_fragments_in_row_major_order():
    fragments = extract_fragments(gradient_image(300, 90))
    assert len(fragments) == 9
    assert [(f.grid_row, f.grid_col) for f in fragments][:4] == [(0, 0), (0, 1), (0, 2), (1, 0)]
    assert all(f.image.size == (100, 30) for f in fragments)


def test_pad_to_grid_pads_white_on_right_and_bottom():
    padded = pad_to_grid(GrayImage(np.zeros((4, 5))), 3)
    assert padded.size == (6, 6)
    assert padded.pixels[:4, :5].max() == 0
    assert padded.pixels[4:, :].min() == 255
    assert padded.pixels[:, 5:].min() == 255


@pytest.mark.parametrize('size', [(300, 90), (31, 17), (2, 2), (5, 40)])
def test_reassemble_inverts_extraction(size):
    image = gradient_image(*size)
    assert reassemble(extract_fragments(image, 3), image.size) == image


def test_scaled_size_rounds_half_up():
    assert scaled_size(100, 30, 105) == (105, 32)
    assert scaled_size(30, 100, 105) == (32, 105)
    assert scaled_size(400, 1, 105) == (105, 1)


def test_resize_with_padding_centres_on_white():
    fragment = GrayImage(np.zeros((30, 100)))
    square = resize_with_padding(fragment, 105)
    assert square.size == (105, 105)
    # 32 rows of ink, 36 white rows above and 37 below
    assert square.pixels[:36].min() == 255
    assert square.pixels[36:68].max() == 0
    assert square.pixels[68:].min() == 255


def test_to_tensor_scales_pixels():
    tensor = to_tensor(GrayImage(np.array([[0, 255], [51, 102]])))
    assert tensor.shape == (1, 2, 2, 1)
    np.testing.assert_allclose(tensor.data[0, :, :, 0], [[0.0, 1.0], [0.2, 0.4]])


def test_prepare_word_batch_shape():
    batch = prepare_word(gradient_image(120, 40), grid=3, side=24)
    assert batch.shape == (9, 24, 24, 1)
    assert batch.dtype == np.float32
    assert 0.0 <= batch.min() and batch.max() <= 1.0
