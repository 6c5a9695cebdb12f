import math

import numpy as np
import pytest

from conftest import micro
from corpus.datasets import gen_glyph_dataset
from engine.tensor import Tensor
from imaging.fragments import prepare_word
from network.dual_stream import DualStreamNetwork
from training.losses import classification_loss
from training.optimizers import Adam
from training.trainer import MetricsLog, TrainConfig, TrainingError, _batches, pretrain_wi, train, train_step


def quick(**overrides):
    values = dict(epochs=1, pretrain_epochs=1, batch_size=16, seed=5)
    values.update(overrides)
    return TrainConfig(**values)


def test_batches_merge_a_trailing_singleton():
    assert [len(b) for b in _batches(np.arange(17), 16)] == [17]
    assert [len(b) for b in _batches(np.arange(10), 4)] == [4, 4, 2]
    assert [len(b) for b in _batches(np.arange(1), 4)] == [1]


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(val_fraction=1.0)


def test_dual_training_needs_pretrained_wi(tiny_words):
    model = DualStreamNetwork(micro(mode='dual'))
    with pytest.raises(TrainingError, match='pretrained'):
        train(model, tiny_words, quick())


def test_writer_count_must_match(tiny_words):
    with pytest.raises(TrainingError, match='writers'):
        train(DualStreamNetwork(micro(num_writers=4)), tiny_words, quick())


def test_zero_epochs_leave_the_model_untouched(tiny_words):
    model = DualStreamNetwork(micro(), seed=1)
    before = {name: values.copy() for name, values in model.state_dict().items()}
    result = train(model, tiny_words, quick(epochs=0))
    assert result.history == []
    for name, values in model.state_dict().items():
        np.testing.assert_array_equal(values, before[name])


def test_seeded_training_is_repeatable(tiny_words, tmp_path):
    histories = []
    for run in range(2):
        model = DualStreamNetwork(micro(), seed=1)
        result = train(model, tiny_words, quick(epochs=2), metrics_path=tmp_path / f"run{run}.jsonl")
        histories.append(result.history)
    assert histories[0] == histories[1]
    assert MetricsLog.read(tmp_path / 'run0.jsonl') == histories[0]
    record = histories[0][0]
    assert set(record) == {'epoch', 'lr', 'train_loss', 'val_top1', 'val_top5'}
    assert record['val_top1'] <= record['val_top5']


def test_single_step_lowers_the_loss_on_its_example(tiny_words):
    model = DualStreamNetwork(micro(dropout_rate=0.0), seed=3)
    item = tiny_words.split('train')[0]
    fragment = prepare_word(item.image, 3, 24)[:1]
    optimizer = Adam(model.classifier_parameters(), lr=1e-4)
    before = train_step(model, optimizer, fragment, [item.writer], 0.1)
    after = classification_loss(model.model_forward(Tensor(fragment), mode='train').logits, [item.writer]).item()
    assert after < before


def test_pretraining_records_each_epoch_and_is_repeatable(tiny_glyphs):
    runs = []
    for _ in range(2):
        model = DualStreamNetwork(micro(mode='wi_only', num_writers=4), seed=2)
        result = pretrain_wi(model, tiny_glyphs, quick(pretrain_epochs=2, val_fraction=0.5))
        assert model.wi_pretrained
        runs.append(result.history)
    assert runs[0] == runs[1]
    assert [r['epoch'] for r in runs[0]] == [1, 2]
    assert all(math.isfinite(r['train_loss']) and r['val_loss'] is not None for r in runs[0])


def test_validation_never_changes_pretrained_weights(tiny_glyphs):
    states, histories = [], []
    for compute in (True, False):
        model = DualStreamNetwork(micro(mode='wi_only', num_writers=4), seed=2)
        result = pretrain_wi(model, tiny_glyphs, quick(pretrain_epochs=8, pretrain_patience=1, val_fraction=0.5,
                                                       compute_val_loss=compute))
        states.append(model.state_dict())
        histories.append(result.history)
    assert [r['lr'] for r in histories[0]] == [r['lr'] for r in histories[1]]
    assert min(r['lr'] for r in histories[0]) < 1e-3
    assert all(r['val_loss'] is not None for r in histories[0])
    assert all(r['val_loss'] is None for r in histories[1])
    assert states[0].keys() == states[1].keys()
    for name, values in states[0].items():
        np.testing.assert_array_equal(values, states[1][name])


def test_pretraining_needs_two_classes_with_two_samples():
    model = DualStreamNetwork(micro(mode='wi_only'))
    with pytest.raises(TrainingError, match='triplets'):
        pretrain_wi(model, gen_glyph_dataset(3, 1, seed=0), quick())


def test_pretraining_needs_a_wi_stream(tiny_glyphs):
    with pytest.raises(TrainingError):
        pretrain_wi(DualStreamNetwork(micro(mode='wd_only')), tiny_glyphs, quick())


def test_transfer_keeps_frozen_blocks_bit_identical(tiny_words, tiny_glyphs):
    source = DualStreamNetwork(micro(mode='wi_only', num_writers=4), seed=2)
    pretrain_wi(source, tiny_glyphs, quick())
    model = DualStreamNetwork(micro(mode='dual', attention_placement='post_fusion'), seed=3)
    model.load_state_dict(source.state_dict(), prefix='wi.')
    before = {name: values.copy() for name, values in model.state_dict().items()}

    train(model, tiny_words, quick())

    after = model.state_dict()
    frozen = [name for name in before if name.startswith(('wi.stem.', 'wi.res1.', 'wi.res2.'))]
    assert frozen
    for name in frozen:
        np.testing.assert_array_equal(after[name], before[name])
    assert not np.array_equal(after['wi.res3.conv1.weight'], before['wi.res3.conv1.weight'])
    assert not np.array_equal(after['wd.stem.weight'], before['wd.stem.weight'])
    np.testing.assert_array_equal(after['wi.embedding.weight'], before['wi.embedding.weight'])
