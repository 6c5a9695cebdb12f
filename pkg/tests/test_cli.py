import json

import pytest
from click.testing import CliRunner

from app import cli
from corpus.datasets import gen_identification_dataset
from corpus.ingest import ingest_directory, ingest_glyphs
from imaging.word_image import read_image, write_image
from setup_corpus import main as setup_main
from training.trainer import MetricsLog

MICRO_FLAGS = ['--scale', '16', '--side', '24', '--embed-dim', '8', '--heads', '2', '--head-dim', '4',
               '--batch-size', '16']
WORDS = 'synth:3,6,7'


@pytest.fixture
def runner(tmp_path):
    return CliRunner(env={'FDWI_LOG_FILE': '', 'FDWI_OUTPUT_DIR': str(tmp_path), 'FDWI_SEED': '0'})


@pytest.fixture(scope='module')
def trained(tmp_path_factory):
    """A wd-only micro model trained for one epoch, plus a test word written to disk."""
    root = tmp_path_factory.mktemp('cli')
    runner = CliRunner(env={'FDWI_LOG_FILE': '', 'FDWI_OUTPUT_DIR': str(root)})
    checkpoint = root / 'wd.fdwi'
    result = runner.invoke(cli, ['train', '--data', WORDS, '--out', str(checkpoint), '--mode', 'wd',
                                 '--attention', 'none', '--epochs', '1', '--seed', '3', *MICRO_FLAGS])
    assert result.exit_code == 0, result.output
    word = gen_identification_dataset(3, 6, seed=7).split('test')[0].image
    word_path = root / 'word.pgm'
    write_image(word_path, word)
    return root, checkpoint, word_path


def test_invalid_fusion_is_a_usage_error(runner, tmp_path):
    result = runner.invoke(cli, ['train', '--data', WORDS, '--out', str(tmp_path / 'm.fdwi'), '--mode', 'wd',
                                 '--fusion', 'mean'])
    assert result.exit_code == 2
    assert 'mean' in result.output


def test_dual_mode_needs_pretrained_stream(runner, tmp_path):
    result = runner.invoke(cli, ['train', '--data', WORDS, '--out', str(tmp_path / 'm.fdwi'), '--mode', 'dual'])
    assert result.exit_code == 2
    assert '--wi-ckpt' in result.output


def test_pretrain_with_zero_epochs_is_repeatable(runner, tmp_path):
    outputs = []
    for name in ('a', 'b'):
        out = tmp_path / f'{name}.fdwi'
        result = runner.invoke(cli, ['pretrain', '--glyphs', 'synth:4,4,3', '--out', str(out), '--epochs', '0',
                                     '--seed', '1', *MICRO_FLAGS])
        assert result.exit_code == 0, result.output
        assert MetricsLog.read(tmp_path / f'{name}.metrics.jsonl') == []
        assert (tmp_path / f'{name}.config.ini').exists()
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1]


def test_bad_glyph_spec_fails(runner, tmp_path):
    result = runner.invoke(cli, ['pretrain', '--glyphs', 'synth:4,4', '--out', str(tmp_path / 'x.fdwi'),
                                 '--epochs', '0', *MICRO_FLAGS])
    assert result.exit_code == 1
    assert 'error:' in result.output
    assert not (tmp_path / 'x.fdwi').exists()


def test_train_writes_sidecars(trained):
    root, checkpoint, _ = trained
    assert checkpoint.exists()
    records = MetricsLog.read(root / 'wd.metrics.jsonl')
    assert [r['epoch'] for r in records] == [1]
    assert {'lr', 'train_loss', 'val_top1', 'val_top5'} <= set(records[0])
    assert '[model]' in (root / 'wd.config.ini').read_text()


def test_eval_writes_report(runner, trained, tmp_path):
    _, checkpoint, _ = trained
    result = runner.invoke(cli, ['eval', '--ckpt', str(checkpoint), '--data', WORDS,
                                 '--report', str(tmp_path / 'report')])
    assert result.exit_code == 0, result.output
    assert 'Top-1' in result.output
    report = json.loads((tmp_path / 'report.json').read_text())
    assert report['words'] == 3
    assert 0.0 <= report['rates']['top1'] <= report['rates']['top5'] == 100.0
    assert (tmp_path / 'report.txt').exists()


def test_eval_rejects_writer_count_mismatch(runner, trained, tmp_path):
    _, checkpoint, _ = trained
    result = runner.invoke(cli, ['eval', '--ckpt', str(checkpoint), '--data', 'synth:4,6,7',
                                 '--report', str(tmp_path / 'report')])
    assert result.exit_code == 1
    assert 'dataset has 4' in result.output


def test_identify_prints_word_scores(runner, trained):
    _, checkpoint, word = trained
    result = runner.invoke(cli, ['identify', '--ckpt', str(checkpoint), '--word', str(word)])
    assert result.exit_code == 0, result.output
    lines = result.output.splitlines()
    assert lines[0] == 'fragments: 9'
    probabilities = [float(line.split(':')[1]) for line in lines if line.startswith('writer ') and ':' in line]
    assert len(probabilities) == 3
    assert sum(probabilities) == pytest.approx(1.0, abs=1e-5)


def test_identify_rejects_non_image(runner, trained, tmp_path):
    _, checkpoint, _ = trained
    junk = tmp_path / 'word.pgm'
    junk.write_bytes(b'not an image')
    result = runner.invoke(cli, ['identify', '--ckpt', str(checkpoint), '--word', str(junk)])
    assert result.exit_code == 1
    assert 'error:' in result.output


def test_heatmap_matches_word_size(runner, trained, tmp_path):
    _, checkpoint, word = trained
    out = tmp_path / 'heat.png'
    result = runner.invoke(cli, ['heatmap', '--ckpt', str(checkpoint), '--word', str(word), '--out', str(out)])
    assert result.exit_code == 0, result.output
    heat, source = read_image(out), read_image(word)
    assert (heat.width, heat.height) == (source.width, source.height)


def test_gradcheck_passes(runner):
    result = runner.invoke(cli, ['gradcheck', '--scale', '16'])
    assert result.exit_code == 0, result.output
    assert 'max relative error' in result.output


def test_setup_corpus_writes_readable_layout(tmp_path):
    root = tmp_path / 'corpus'
    result = CliRunner().invoke(setup_main, ['--root', str(root), '--writers', '3', '--words', '6',
                                             '--classes', '3', '--samples', '2', '--seed', '4'])
    assert result.exit_code == 0, result.output
    words = ingest_directory(root / 'words')
    assert words.num_writers == 3
    assert len(words.split('test')) == 3
    glyphs = ingest_glyphs(root / 'glyphs')
    assert (glyphs.num_classes, len(glyphs)) == (3, 6)


def test_ablate_writes_table(runner, tmp_path):
    out_dir = tmp_path / 'ablation'
    result = runner.invoke(cli, ['ablate', '--data', WORDS, '--glyphs', 'synth:4,4,3', '--grid', 'unit',
                                 '--out-dir', str(out_dir), '--epochs', '1', '--pretrain-epochs', '1',
                                 *MICRO_FLAGS])
    assert result.exit_code == 0, result.output
    assert "Ablation 'unit': 4 configurations" in result.output
    table = json.loads((out_dir / 'ablation_unit.json').read_text())
    assert len(table['rows']) == 4
    assert (out_dir / 'pretrain_e8.fdwi').exists()
