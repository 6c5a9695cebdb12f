"""
Network Configuration

Architecture description for the dual-stream writer identification network:
which streams run, how they are fused, where attention sits and how wide the
layers are.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

from attention.mobile_attention import AttentionConfig

logger = logging.getLogger(__name__)

BASE_CHANNELS = (64, 128, 256, 512)
MODES = ('wd_only', 'wi_only', 'dual')
FUSIONS = ('max', 'add', 'concat')
PLACEMENTS = ('none', 'per_stream', 'post_fusion')
INPUT_UNITS = ('fragment', 'word')
DEFAULT_FREEZE = ('wi.stem', 'wi.res1', 'wi.res2')


class ConfigError(ValueError):
    """Inconsistent or out-of-range architecture settings."""


@dataclass
class ModelConfig:
    """Full architecture description.

    ``channel_scale`` divides the base widths [64, 128, 256, 512] of the stem
    and the three residual blocks (scale 4 gives [16, 32, 64, 128]).
    """

    num_writers: int = 10
    channel_scale: int = 1
    fusion: str = 'concat'
    attention_placement: str = 'post_fusion'
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    dropout_rate: float = 0.5
    fragment_side: int = 105
    grid: int = 3
    mode: str = 'dual'
    embedding_dim: int = 512
    input_unit: str = 'fragment'

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.num_writers < 2:
            raise ConfigError(f"num_writers must be at least 2, got {self.num_writers}")
        if self.channel_scale < 1 or any(c % self.channel_scale for c in BASE_CHANNELS):
            raise ConfigError(f"channel_scale {self.channel_scale} must divide all of {list(BASE_CHANNELS)}")
        if self.fusion not in FUSIONS:
            raise ConfigError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.attention_placement not in PLACEMENTS:
            raise ConfigError(f"attention_placement must be one of {PLACEMENTS}, got {self.attention_placement!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.input_unit not in INPUT_UNITS:
            raise ConfigError(f"input_unit must be one of {INPUT_UNITS}, got {self.input_unit!r}")
        if self.mode != 'dual' and self.attention_placement == 'per_stream':
            raise ConfigError(f"per_stream attention needs both streams, but mode is {self.mode!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.fragment_side < 1 or self.grid < 1 or self.embedding_dim < 1:
            raise ConfigError("fragment_side, grid and embedding_dim must be positive")

    @property
    def channels(self) -> Tuple[int, int, int, int]:
        """(stem, res1, res2, res3) widths after scaling."""
        return tuple(c // self.channel_scale for c in BASE_CHANNELS)

    @property
    def feature_channels(self) -> int:
        return self.channels[-1]

    @property
    def effective_grid(self) -> int:
        """Fragments per side; word-level input uses the whole word as one fragment."""
        return 1 if self.input_unit == 'word' else self.grid

    @property
    def uses_wd(self) -> bool:
        return self.mode in ('wd_only', 'dual')

    @property
    def uses_wi(self) -> bool:
        return self.mode in ('wi_only', 'dual')

    def to_dict(self) -> Dict[str, object]:
        return {
            'num_writers': self.num_writers,
            'channel_scale': self.channel_scale,
            'fusion': self.fusion,
            'attention_placement': self.attention_placement,
            'attention_heads': self.attention.heads,
            'attention_head_dim': self.attention.head_dim,
            'dropout_rate': self.dropout_rate,
            'fragment_side': self.fragment_side,
            'grid': self.grid,
            'mode': self.mode,
            'embedding_dim': self.embedding_dim,
            'input_unit': self.input_unit,
        }

    @classmethod
    def from_dict(cls, values: Dict[str, object]) -> 'ModelConfig':
        values = dict(values)
        heads = int(values.pop('attention_heads', 2))
        head_dim = int(values.pop('attention_head_dim', 64))
        return cls(
            num_writers=int(values['num_writers']),
            channel_scale=int(values.get('channel_scale', 1)),
            fusion=str(values.get('fusion', 'concat')),
            attention_placement=str(values.get('attention_placement', 'post_fusion')),
            attention=AttentionConfig(heads=heads, head_dim=head_dim),
            dropout_rate=float(values.get('dropout_rate', 0.5)),
            fragment_side=int(values.get('fragment_side', 105)),
            grid=int(values.get('grid', 3)),
            mode=str(values.get('mode', 'dual')),
            embedding_dim=int(values.get('embedding_dim', 512)),
            input_unit=str(values.get('input_unit', 'fragment')),
        )


@dataclass
class FreezeMask:
    """Parameter-name prefixes held fixed during training."""

    prefixes: List[str] = field(default_factory=list)

    @classmethod
    def default_for(cls, config: ModelConfig) -> 'FreezeMask':
        """WI stem, res1 and res2 when the WI stream is present; nothing otherwise."""
        if config.uses_wi:
            return cls(list(DEFAULT_FREEZE))
        return cls([])

    @staticmethod
    def matches(prefix: str, name: str) -> bool:
        return name == prefix or name.startswith(prefix.rstrip('.') + '.')
