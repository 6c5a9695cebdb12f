"""
Run Configuration

Everything needed to reproduce a run (architecture, optimisation, data source,
output location, seed) as INI text with [run], [model], [attention], [train]
and [data] sections. A copy is written next to every artifact.
"""

import configparser
import io
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, Union

from network.config import ConfigError, ModelConfig
from training.trainer import TrainConfig

logger = logging.getLogger(__name__)

CONFIG_ECHO = 'run_config.ini'
SECTIONS = ('run', 'model', 'attention', 'train', 'data')


class RunConfigError(ValueError):
    """Unparseable or incomplete run configuration text."""


def _parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off'):
        return False
    raise RunConfigError(f"not a boolean: {value!r}")


def _coerce(kind, value: str):
    if kind is bool:
        return _parse_bool(value)
    if kind is int:
        return int(value)
    if kind is float:
        return float(value)
    return value


def _parser() -> configparser.ConfigParser:
    return configparser.ConfigParser(interpolation=None)


def _dump(parser: configparser.ConfigParser) -> str:
    buffer = io.StringIO()
    parser.write(buffer)
    return buffer.getvalue()


def _add_model(parser: configparser.ConfigParser, model: ModelConfig) -> None:
    values = model.to_dict()
    heads = values.pop('attention_heads')
    head_dim = values.pop('attention_head_dim')
    parser['model'] = {key: str(value) for key, value in values.items()}
    parser['attention'] = {'heads': str(heads), 'head_dim': str(head_dim)}


def _read_model(parser: configparser.ConfigParser) -> ModelConfig:
    values: Dict[str, object] = dict(parser['model'])
    values['attention_heads'] = parser['attention']['heads']
    values['attention_head_dim'] = parser['attention']['head_dim']
    return ModelConfig.from_dict(values)


@dataclass
class RunConfig:
    """Model + training settings, dataset source, output directory and seed."""

    model: ModelConfig
    train: TrainConfig = field(default_factory=TrainConfig)
    data: str = ''
    glyphs: str = ''
    wi_checkpoint: str = ''
    output_dir: str = 'runs'
    seed: int = 0
    command: str = ''

    def to_text(self) -> str:
        parser = _parser()
        parser['run'] = {'command': self.command, 'seed': str(self.seed), 'output_dir': self.output_dir}
        _add_model(parser, self.model)
        parser['train'] = {key: str(value) for key, value in self.train.to_dict().items()}
        parser['data'] = {'source': self.data, 'glyphs': self.glyphs, 'wi_checkpoint': self.wi_checkpoint}
        return _dump(parser)

    @classmethod
    def from_text(cls, text: str) -> 'RunConfig':
        parser = _parser()
        try:
            parser.read_string(text)
        except configparser.Error as e:
            raise RunConfigError(f"malformed run configuration: {e}") from e
        for section in SECTIONS:
            if not parser.has_section(section):
                raise RunConfigError(f"run configuration lacks [{section}]")
        try:
            train_values = {spec.name: _coerce(spec.type, parser['train'][spec.name])
                            for spec in fields(TrainConfig) if spec.name in parser['train']}
            run, data = parser['run'], parser['data']
            return cls(model=_read_model(parser), train=TrainConfig(**train_values),
                       data=data.get('source', ''), glyphs=data.get('glyphs', ''),
                       wi_checkpoint=data.get('wi_checkpoint', ''), output_dir=run.get('output_dir', 'runs'),
                       seed=int(run.get('seed', '0')), command=run.get('command', ''))
        except (KeyError, ValueError, ConfigError) as e:
            raise RunConfigError(f"invalid run configuration: {e}") from e

    def write(self, directory: Union[str, Path], name: str = CONFIG_ECHO) -> Path:
        path = Path(directory) / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text(), encoding='utf-8')
        return path

    @classmethod
    def read(cls, path: Union[str, Path]) -> 'RunConfig':
        return cls.from_text(Path(path).read_text(encoding='utf-8'))


def model_config_text(model: ModelConfig) -> str:
    """The [model] and [attention] sections alone, as stored inside checkpoints."""
    parser = _parser()
    _add_model(parser, model)
    return _dump(parser)


def parse_model_config(text: str) -> ModelConfig:
    parser = _parser()
    try:
        parser.read_string(text)
        return _read_model(parser)
    except (configparser.Error, KeyError, ValueError, ConfigError) as e:
        raise RunConfigError(f"invalid model configuration: {e}") from e
