import struct
import zlib

import numpy as np
import pytest

from conftest import micro
from harness.checkpoint import (MAGIC, CheckpointError, decode_checkpoint, encode_checkpoint, load_checkpoint,
                                load_into, load_model, save_checkpoint)
from network.dual_stream import DualStreamNetwork


def inputs(seed=0):
    return np.random.default_rng(seed).uniform(0, 1, (4, 24, 24, 1)).astype(np.float32)


@pytest.fixture
def model():
    return DualStreamNetwork(micro(mode='dual', fusion='add', attention_placement='per_stream'), seed=6)


def test_save_load_save_is_byte_identical(tmp_path, model):
    first = save_checkpoint(tmp_path / 'a.fdwi', model)
    second = save_checkpoint(tmp_path / 'b.fdwi', load_model(first))
    assert first.read_bytes() == second.read_bytes()
    assert first.read_bytes()[:4] == MAGIC


def test_reloaded_model_predicts_bit_identically(tmp_path, model):
    restored = load_model(save_checkpoint(tmp_path / 'm.fdwi', model))
    assert restored.config == model.config
    np.testing.assert_array_equal(restored.predict(inputs()), model.predict(inputs()))


def test_tensor_order_and_values_survive():
    tensors = {'b': np.arange(6, dtype=np.float32).reshape(2, 3), 'a': np.array(2.5, dtype=np.float32)}
    text, decoded = decode_checkpoint(encode_checkpoint('config', tensors))
    assert text == 'config'
    assert list(decoded) == ['b', 'a']
    np.testing.assert_array_equal(decoded['b'], tensors['b'])
    assert decoded['a'].shape == ()


def test_bad_magic():
    with pytest.raises(CheckpointError, match='magic'):
        decode_checkpoint(b'NOPE' + bytes(20))


def test_flipped_byte_fails_the_checksum(tmp_path, model):
    data = bytearray(save_checkpoint(tmp_path / 'm.fdwi', model).read_bytes())
    data[len(data) // 2] ^= 0xFF
    with pytest.raises(CheckpointError, match='checksum'):
        decode_checkpoint(bytes(data))


def with_checksum(body: bytes) -> bytes:
    return body + struct.pack('<I', zlib.crc32(body) & 0xFFFFFFFF)


def test_truncated_tensor_payload():
    body = encode_checkpoint('cfg', {'w': np.ones(4, dtype=np.float32)})[:-4]
    with pytest.raises(CheckpointError, match='truncated'):
        decode_checkpoint(with_checksum(body[:-6]))


def test_trailing_bytes_and_version():
    body = encode_checkpoint('cfg', {})[:-4]
    with pytest.raises(CheckpointError, match='trailing'):
        decode_checkpoint(with_checksum(body + b'\x00'))
    with pytest.raises(CheckpointError, match='version'):
        decode_checkpoint(with_checksum(MAGIC + struct.pack('<I', 9) + body[8:]))


def test_unreadable_path(tmp_path):
    with pytest.raises(CheckpointError, match='cannot read'):
        load_checkpoint(tmp_path / 'missing.fdwi')


def test_architecture_mismatch(tmp_path, model):
    checkpoint = load_checkpoint(save_checkpoint(tmp_path / 'm.fdwi', model))
    with pytest.raises(CheckpointError, match='does not match'):
        load_into(DualStreamNetwork(micro(mode='wd_only')), checkpoint)
    with pytest.raises(CheckpointError, match='does not match'):
        load_into(DualStreamNetwork(micro(mode='dual', channel_scale=8)), checkpoint, prefix='wi.')


def test_wi_transfer_from_a_pretraining_checkpoint(tmp_path):
    source = DualStreamNetwork(micro(mode='wi_only', num_writers=5), seed=1)
    checkpoint = load_checkpoint(save_checkpoint(tmp_path / 'wi.fdwi', source))
    target = DualStreamNetwork(micro(mode='dual'), seed=2)
    load_into(target, checkpoint, prefix='wi.')
    assert target.wi_pretrained
    np.testing.assert_array_equal(target.state_dict()['wi.stem.weight'], source.state_dict()['wi.stem.weight'])
