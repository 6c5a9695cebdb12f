import numpy as np
import pytest

from conftest import micro
from engine.rng import Rng
from engine.tensor import DimensionError, Tensor
from network.config import ConfigError, FreezeMask, ModelConfig
from network.dual_stream import DualStreamNetwork, FreezeError, StateDictError, fuse


def fragments(n=3, seed=0):
    return Rng(seed).uniform(0.0, 1.0, (n, 24, 24, 1)).astype(np.float32)


@pytest.mark.parametrize('overrides, message', [
    (dict(num_writers=1), 'num_writers'),
    (dict(channel_scale=3), 'channel_scale'),
    (dict(fusion='mean'), 'fusion'),
    (dict(attention_placement='per_stream'), 'per_stream'),
    (dict(dropout_rate=1.0), 'dropout_rate'),
    (dict(input_unit='line'), 'input_unit'),
])
def test_config_errors(overrides, message):
    with pytest.raises(ConfigError, match=message):
        micro(**overrides)


def test_scaled_channels():
    assert ModelConfig(channel_scale=4).channels == (16, 32, 64, 128)
    assert micro(input_unit='word').effective_grid == 1


def test_config_dict_round_trip():
    config = micro(mode='dual', fusion='max', attention_placement='per_stream')
    assert ModelConfig.from_dict(config.to_dict()) == config


def test_missing_config_keys_take_the_class_defaults():
    assert ModelConfig.from_dict({'num_writers': 7}) == ModelConfig(num_writers=7)
    assert ModelConfig.from_dict({'num_writers': 7}).attention_placement == 'post_fusion'


@pytest.mark.parametrize('mode', ['wd_only', 'wi_only', 'dual'])
def test_forward_shapes_and_probabilities(mode):
    model = DualStreamNetwork(micro(mode=mode, attention_placement='post_fusion'), seed=1)
    result = model.model_forward(Tensor(fragments()), mode='infer')
    assert result.logits.shape == (3, 3)
    assert result.feature_map.shape == (3, 2, 2, 32)
    np.testing.assert_allclose(result.probs.data.sum(axis=-1), 1.0, atol=1e-5)


def test_only_configured_parts_are_built():
    names = DualStreamNetwork(micro(mode='wd_only')).parameters()
    assert not any(name.startswith(('wi.', 'fusion.', 'attention.')) for name in names)
    dual = DualStreamNetwork(micro(mode='dual', fusion='concat', attention_placement='per_stream')).parameters()
    assert 'fusion.mix.weight' in dual
    assert 'attention.wd.decoder.weight' in dual and 'attention.wi.decoder.weight' in dual
    assert 'wi.embedding.weight' in dual


def test_untrained_attention_does_not_change_predictions():
    x = fragments()
    probs = [DualStreamNetwork(micro(mode='dual', attention_placement=placement), seed=4).predict(x)
             for placement in ('none', 'per_stream', 'post_fusion')]
    np.testing.assert_array_equal(probs[0], probs[1])
    np.testing.assert_array_equal(probs[0], probs[2])


def test_fusion_strategies():
    rng = Rng(5)
    a = Tensor(rng.normal(size=(1, 2, 2, 3)))
    b = Tensor(rng.normal(size=(1, 2, 2, 3)))
    np.testing.assert_array_equal(fuse(a, b, 'max').data, np.maximum(a.data, b.data))
    np.testing.assert_allclose(fuse(a, b, 'add').data, a.data + b.data)
    with pytest.raises(ValueError):
        fuse(a, b, 'concat')
    with pytest.raises(DimensionError):
        fuse(a, Tensor(np.zeros((1, 2, 2, 4))), 'max')


def test_missing_stream_is_an_error():
    model = DualStreamNetwork(micro(mode='wi_only'))
    with pytest.raises(ValueError, match='writer-dependent'):
        model.wd_forward(Tensor(fragments()))


def test_input_must_be_single_channel():
    model = DualStreamNetwork(micro())
    with pytest.raises(DimensionError):
        model.model_forward(Tensor(np.zeros((2, 24, 24, 3))))


def test_inference_is_deterministic_and_train_mode_uses_dropout():
    model = DualStreamNetwork(micro(), seed=2)
    x = fragments()
    np.testing.assert_array_equal(model.predict(x), model.predict(x))
    a = model.model_forward(Tensor(x), mode='train', rng=Rng(0)).logits.data
    b = model.model_forward(Tensor(x), mode='train', rng=Rng(1)).logits.data
    assert not np.array_equal(a, b)


def test_default_freeze_covers_wi_stem_and_first_two_blocks():
    model = DualStreamNetwork(micro(mode='dual'))
    model.apply_freeze(FreezeMask.default_for(model.config))
    frozen = model.frozen_names()
    assert frozen and all(name.startswith(('wi.stem.', 'wi.res1.', 'wi.res2.')) for name in frozen)
    assert not model.parameters()['wi.res3.conv1.weight'].frozen
    assert FreezeMask.default_for(micro(mode='wd_only')).prefixes == []


def test_refreezing_replaces_the_previous_mask():
    model = DualStreamNetwork(micro(mode='dual'))
    model.apply_freeze(FreezeMask(['wi.stem']))
    model.apply_freeze(FreezeMask(['wi.res3']))
    assert not any(name.startswith('wi.stem') for name in model.frozen_names())


@pytest.mark.parametrize('prefix, reason', [('wi.res9', 'matches no parameter'),
                                            ('wd.stem', 'outside the writer-independent')])
def test_bad_freeze_prefixes(prefix, reason):
    model = DualStreamNetwork(micro(mode='dual'))
    with pytest.raises(FreezeError, match=reason) as info:
        model.apply_freeze(FreezeMask([prefix]))
    assert 'wi.res1' in info.value.known


def test_state_dict_round_trip():
    source = DualStreamNetwork(micro(mode='dual'), seed=1)
    target = DualStreamNetwork(micro(mode='dual'), seed=2)
    target.load_state_dict(source.state_dict())
    np.testing.assert_array_equal(target.predict(fragments()), source.predict(fragments()))
    assert target.wi_pretrained


def test_strict_loading_rejects_other_architectures():
    dual = DualStreamNetwork(micro(mode='dual'))
    wd_state = DualStreamNetwork(micro(mode='wd_only')).state_dict()
    with pytest.raises(StateDictError, match='missing'):
        dual.load_state_dict(wd_state)
    with pytest.raises(StateDictError, match='unexpected'):
        DualStreamNetwork(micro(mode='wd_only')).load_state_dict(dual.state_dict())


def test_prefix_loading_checks_shapes():
    wide = DualStreamNetwork(micro(mode='wi_only', channel_scale=8)).state_dict()
    model = DualStreamNetwork(micro(mode='dual'))
    with pytest.raises(DimensionError):
        model.load_state_dict(wide, prefix='wi.')


def test_prefix_loading_leaves_other_tensors_alone():
    source = DualStreamNetwork(micro(mode='wi_only'), seed=3)
    model = DualStreamNetwork(micro(mode='dual'), seed=4)
    wd_before = model.state_dict()['wd.stem.weight'].copy()
    model.load_state_dict(source.state_dict(), prefix='wi.')
    np.testing.assert_array_equal(model.state_dict()['wd.stem.weight'], wd_before)
    np.testing.assert_array_equal(model.state_dict()['wi.res2.sep.depthwise'],
                                  source.state_dict()['wi.res2.sep.depthwise'])
    assert model.wi_pretrained
