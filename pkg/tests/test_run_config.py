import pytest

from attention.mobile_attention import AttentionConfig
from conftest import micro
from harness.run_config import (RunConfig, RunConfigError, model_config_text, parse_model_config)
from training.trainer import TrainConfig


def test_text_round_trip(tmp_path):
    config = RunConfig(micro(mode='dual', fusion='max', attention=AttentionConfig(heads=3, head_dim=5)),
                       TrainConfig(batch_size=8, epochs=3, compute_val_loss=False, seed=4),
                       data='synth:3,6,7', glyphs='synth:4,4,3', wi_checkpoint='runs/wi.fdwi',
                       output_dir='runs/x', seed=4, command='train')
    path = config.write(tmp_path)
    assert path.name == 'run_config.ini'
    assert RunConfig.read(path) == config
    assert RunConfig.from_text(config.to_text()).to_text() == config.to_text()


def test_sections_are_named():
    text = RunConfig(micro()).to_text()
    for section in ('[run]', '[model]', '[attention]', '[train]', '[data]'):
        assert section in text


def test_missing_section():
    text = RunConfig(micro()).to_text().replace('[data]', '[other]')
    with pytest.raises(RunConfigError, match=r'\[data\]'):
        RunConfig.from_text(text)


@pytest.mark.parametrize('old, new', [('fusion = concat', 'fusion = mean'),
                                      ('compute_val_loss = True', 'compute_val_loss = maybe'),
                                      ('batch_size = 16', 'batch_size = many')])
def test_invalid_values(old, new):
    text = RunConfig(micro()).to_text()
    assert old in text
    with pytest.raises(RunConfigError):
        RunConfig.from_text(text.replace(old, new))


def test_model_text_alone():
    config = micro(mode='wi_only', embedding_dim=16)
    assert parse_model_config(model_config_text(config)) == config
    with pytest.raises(RunConfigError):
        parse_model_config('[model]\nmode = dual\n')
