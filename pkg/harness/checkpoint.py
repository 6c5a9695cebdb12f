"""
Checkpoint Files

Binary, little-endian layout:

    b'FDWI'                      magic
    u32                          format version
    u32 + bytes                  UTF-8 model configuration text
    u32                          tensor count
    per tensor:
        u32 + bytes              UTF-8 name
        u32                      rank
        u32 * rank               dimensions
        f32 * prod(dims)         values
    u32                          CRC-32 of every preceding byte

The same format holds pretrained WI weights and complete models.
"""

import logging
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from engine.tensor import DimensionError
from harness.run_config import RunConfigError, model_config_text, parse_model_config
from network.config import ModelConfig
from network.dual_stream import DualStreamNetwork, StateDictError

logger = logging.getLogger(__name__)

MAGIC = b'FDWI'
VERSION = 1
_U32 = struct.Struct('<I')


class CheckpointError(ValueError):
    """Corrupt, truncated or mismatched checkpoint."""


@dataclass
class Checkpoint:
    config: ModelConfig
    tensors: Dict[str, np.ndarray]
    version: int = VERSION


def encode_checkpoint(config_text: str, tensors: Dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, _U32.pack(VERSION)]
    encoded = config_text.encode('utf-8')
    parts += [_U32.pack(len(encoded)), encoded, _U32.pack(len(tensors))]
    for name, values in tensors.items():
        values = np.ascontiguousarray(values, dtype='<f4')
        raw_name = name.encode('utf-8')
        parts += [_U32.pack(len(raw_name)), raw_name, _U32.pack(values.ndim)]
        parts += [_U32.pack(dim) for dim in values.shape]
        parts.append(values.tobytes())
    body = b''.join(parts)
    return body + _U32.pack(zlib.crc32(body) & 0xFFFFFFFF)


class _Reader:
    def __init__(self, data: bytes, end: int):
        self.data = data
        self.end = end
        self.pos = 0

    def take(self, count: int, what: str) -> bytes:
        if self.pos + count > self.end:
            raise CheckpointError(f"truncated checkpoint while reading {what} at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + count]
        self.pos += count
        return chunk

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]


def decode_checkpoint(data: bytes) -> Tuple[str, Dict[str, np.ndarray]]:
    """Configuration text and ordered named tensors from checkpoint bytes."""
    if len(data) < len(MAGIC) + 8 or data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    body_end = len(data) - 4
    stored = _U32.unpack(data[body_end:])[0]
    if zlib.crc32(data[:body_end]) & 0xFFFFFFFF != stored:
        raise CheckpointError("checksum mismatch")
    reader = _Reader(data, body_end)
    reader.take(4, 'magic')
    version = reader.u32('version')
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    config_text = reader.take(reader.u32('config length'), 'config').decode('utf-8')
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(reader.u32('tensor count')):
        name = reader.take(reader.u32('name length'), 'name').decode('utf-8')
        rank = reader.u32(f"rank of {name}")
        shape = tuple(reader.u32(f"dims of {name}") for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64))
        raw = reader.take(4 * count, f"values of {name}")
        tensors[name] = np.frombuffer(raw, dtype='<f4').reshape(shape).astype(np.float32)
    if reader.pos != body_end:
        raise CheckpointError(f"{body_end - reader.pos} unexpected trailing bytes")
    return config_text, tensors


def save_checkpoint(path: Union[str, Path], model: DualStreamNetwork) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(model_config_text(model.config), model.state_dict()))
    logger.info(f"Saved checkpoint {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    config_text, tensors = decode_checkpoint(data)
    try:
        config = parse_model_config(config_text)
    except RunConfigError as e:
        raise CheckpointError(str(e)) from e
    return Checkpoint(config, tensors)


def load_into(model: DualStreamNetwork, checkpoint: Checkpoint, prefix: Optional[str] = None) -> None:
    """Copy checkpoint tensors into ``model``; with ``prefix='wi.'`` only the WI stream (transfer)."""
    try:
        model.load_state_dict(checkpoint.tensors, prefix=prefix)
    except (StateDictError, DimensionError) as e:
        raise CheckpointError(f"checkpoint does not match the architecture: {e}") from e


def load_model(path: Union[str, Path]) -> DualStreamNetwork:
    """Rebuild the network recorded in a checkpoint and restore all of its tensors."""
    checkpoint = load_checkpoint(path)
    model = DualStreamNetwork(checkpoint.config)
    load_into(model, checkpoint)
    return model
