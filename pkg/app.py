#!/usr/bin/env python3
"""
Writer Identification Command Line

Fragment-based writer identification with a writer-dependent stream trained
from scratch and a writer-independent stream pretrained on glyphs. Commands
cover WI pretraining, classifier training, evaluation, single-word
identification, activation heatmaps, gradient checks and ablation runs.
"""

import functools
import logging

import click

from attention.mobile_attention import AttentionConfig
from harness.ablation import PRESETS
from harness.controller import ExperimentController
from harness.settings import Settings, configure_logging
from network.config import FUSIONS, INPUT_UNITS, ConfigError, ModelConfig
from training.trainer import TrainConfig

logger = logging.getLogger(__name__)

MODE_NAMES = {'wd': 'wd_only', 'wi': 'wi_only', 'dual': 'dual'}
PLACEMENT_NAMES = {'none': 'none', 'per-stream': 'per_stream', 'post-fusion': 'post_fusion'}


def model_options(function):
    """Architecture flags shared by every command that builds a network."""
    options = [
        click.option('--scale', type=click.IntRange(min=1), default=1, show_default=True,
                     help='Divide every stream width by this factor.'),
        click.option('--side', 'fragment_side', type=click.IntRange(min=8), default=105, show_default=True,
                     help='Fragment side after resizing.'),
        click.option('--grid', type=click.IntRange(min=1), default=3, show_default=True,
                     help='Fragments per word side.'),
        click.option('--embed-dim', type=click.IntRange(min=1), default=512, show_default=True,
                     help='Width of the WI embedding head.'),
        click.option('--heads', type=click.IntRange(min=1), default=2, show_default=True),
        click.option('--head-dim', type=click.IntRange(min=1), default=64, show_default=True),
        click.option('--dropout', type=click.FloatRange(0.0, 1.0, max_open=True), default=0.5, show_default=True),
        click.option('--input-unit', type=click.Choice(INPUT_UNITS), default='fragment', show_default=True),
    ]
    for option in reversed(options):
        function = option(function)
    return function


def train_options(epochs: int, curves: bool = True):
    def decorate(function):
        options = [
            click.option('--epochs', type=click.IntRange(min=0), default=epochs, show_default=True),
            click.option('--batch-size', type=click.IntRange(min=1), default=16, show_default=True),
            click.option('--lr', type=click.FloatRange(min=0.0, min_open=True), default=0.001, show_default=True),
            click.option('--patience', type=click.IntRange(min=1), default=None,
                         help='Plateau patience (10 for training, 5 for pretraining).'),
            click.option('--val-fraction', type=click.FloatRange(0.0, 1.0, max_open=True), default=0.1,
                         show_default=True),
            click.option('--seed', type=int, default=None, help='Run seed (defaults to FDWI_SEED).'),
        ]
        if curves:
            options.append(click.option('--curves', is_flag=True, help='Plot training curves to PNG.'))
        for option in reversed(options):
            function = option(function)
        return function
    return decorate


def build_model_config(mode='wd', fusion='concat', attention='none', scale=1, fragment_side=105, grid=3,
                       embed_dim=512, heads=2, head_dim=64, dropout=0.5, input_unit='fragment') -> ModelConfig:
    try:
        return ModelConfig(num_writers=2, channel_scale=scale, fusion=fusion,
                           attention_placement=PLACEMENT_NAMES[attention],
                           attention=AttentionConfig(heads=heads, head_dim=head_dim), dropout_rate=dropout,
                           fragment_side=fragment_side, grid=grid, mode=MODE_NAMES[mode],
                           embedding_dim=embed_dim, input_unit=input_unit)
    except (ConfigError, ValueError) as e:
        raise click.UsageError(str(e))


def build_train_config(settings: Settings, epochs, batch_size, lr, patience, val_fraction, seed,
                       pretrain=False, **extra) -> TrainConfig:
    seed = settings.seed if seed is None else seed
    values = dict(batch_size=batch_size, learning_rate=lr, val_fraction=val_fraction, seed=seed, **extra)
    if pretrain:
        values.update(pretrain_epochs=epochs, pretrain_patience=patience or 5)
    else:
        values.update(epochs=epochs, patience=patience or 10)
    return TrainConfig(**values)


def finish(result) -> None:
    """Echo the result message; a failed command exits with status 1."""
    if result['success']:
        click.echo(result['message'])
        return
    click.echo(f"error: {result['message']}", err=True)
    click.get_current_context().exit(1)


def pass_controller(function):
    @functools.wraps(function)
    @click.pass_context
    def wrapper(ctx, *args, **kwargs):
        return function(ctx.obj['controller'], ctx.obj['settings'], *args, **kwargs)
    return wrapper


@click.group()
@click.option('--log-level', type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR']), default=None,
              help='Override FDWI_LOG_LEVEL.')
@click.option('--env-file', type=click.Path(dir_okay=False), default=None, help='Read settings from this file.')
@click.pass_context
def cli(ctx, log_level, env_file):
    """Fragment-based dual-stream writer identification."""
    settings = Settings.from_env(env_file)
    if log_level:
        settings.log_level = log_level
    configure_logging(settings)
    ctx.obj = {'settings': settings, 'controller': ExperimentController(settings)}


@cli.command()
@click.option('--glyphs', required=True, help='Glyph corpus directory or synth:CLASSES,SAMPLES,SEED[,DIVERSITY].')
@click.option('--out', required=True, type=click.Path(dir_okay=False), help='Checkpoint to write.')
@model_options
@train_options(epochs=100)
@pass_controller
def pretrain(controller, settings, glyphs, out, epochs, batch_size, lr, patience, val_fraction, seed, curves,
             **model_flags):
    """Pretrain the writer-independent stream with the triplet loss."""
    model_config = build_model_config(mode='wi', **model_flags)
    train_config = build_train_config(settings, epochs, batch_size, lr, patience, val_fraction, seed, pretrain=True)
    finish(controller.pretrain(glyphs, out, model_config, train_config, curves))


@cli.command()
@click.option('--data', required=True, help='Corpus directory or synth:WRITERS,WORDS,SEED.')
@click.option('--out', required=True, type=click.Path(dir_okay=False), help='Checkpoint to write.')
@click.option('--mode', type=click.Choice(list(MODE_NAMES)), default='dual', show_default=True)
@click.option('--fusion', type=click.Choice(FUSIONS), default='concat', show_default=True)
@click.option('--attention', type=click.Choice(list(PLACEMENT_NAMES)), default='post-fusion', show_default=True)
@click.option('--wi-ckpt', type=click.Path(exists=True, dir_okay=False), default=None,
              help='Pretrained WI checkpoint (required in dual mode).')
@model_options
@train_options(epochs=150)
@pass_controller
def train(controller, settings, data, out, mode, fusion, attention, wi_ckpt, epochs, batch_size, lr, patience,
          val_fraction, seed, curves, **model_flags):
    """Train the writer classifier on word fragments."""
    if mode == 'dual' and not wi_ckpt:
        raise click.UsageError("--mode dual needs --wi-ckpt: the writer-independent stream is pretrained "
                               "separately and transferred with stem, res1 and res2 frozen")
    model_config = build_model_config(mode, fusion, attention, **model_flags)
    train_config = build_train_config(settings, epochs, batch_size, lr, patience, val_fraction, seed)
    finish(controller.train(data, out, model_config, train_config, wi_ckpt, curves))


@cli.command(name='eval')
@click.option('--ckpt', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--data', required=True, help='Corpus directory or synth:WRITERS,WORDS,SEED.')
@click.option('--report', required=True, type=click.Path(dir_okay=False), help='Report path stem.')
@click.option('--pdf', is_flag=True, help='Also write a PDF table.')
@pass_controller
def evaluate(controller, settings, ckpt, data, report, pdf):
    """Top-1 / Top-5 identification rates on the test words."""
    result = controller.evaluate(ckpt, data, report, pdf)
    if result['success']:
        click.echo(result['table'], nl=False)
    finish(result)


@cli.command()
@click.option('--ckpt', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--word', required=True, type=click.Path(exists=True, dir_okay=False))
@pass_controller
def identify(controller, settings, ckpt, word):
    """Predict the writer of one word image."""
    result = controller.identify(ckpt, word)
    if result['success']:
        click.echo(f"fragments: {result['fragments']}")
        for index, probability in enumerate(result['probabilities']):
            click.echo(f"writer {index}: {probability:.6f}")
    finish(result)


@cli.command()
@click.option('--ckpt', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--word', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--out', required=True, type=click.Path(dir_okay=False), help='Heat image (.pgm or .png).')
@click.option('--sigma', type=click.FloatRange(min=0.0), default=None, help='Smoothing width (fragment side / 20).')
@click.option('--cmap', default=None, help='Also write a colour overlay with this matplotlib colormap.')
@pass_controller
def heatmap(controller, settings, ckpt, word, out, sigma, cmap):
    """Activation heatmap of a word image."""
    result = controller.heatmap(ckpt, word, out, sigma, cmap)
    if result['success']:
        for path in result['files']:
            click.echo(path)
    finish(result)


@cli.command()
@click.option('--scale', type=click.IntRange(min=1), default=8, show_default=True)
@click.option('--seed', type=int, default=0, show_default=True)
@click.option('--seeds', type=click.IntRange(min=1), default=1, show_default=True,
              help='Number of consecutive seeds for the op checks.')
@pass_controller
def gradcheck(controller, settings, scale, seed, seeds):
    """Finite-difference check of every op and of the micro model."""
    result = controller.gradcheck(scale, seed, seeds)
    for name, error in result.get('errors', {}).items():
        click.echo(f"{name:24s} {error:.3e}")
    finish(result)


@cli.command()
@click.option('--data', required=True, help='Corpus directory or synth:WRITERS,WORDS,SEED.')
@click.option('--grid', 'preset', type=click.Choice(PRESETS), default='grid', show_default=True)
@click.option('--out-dir', type=click.Path(file_okay=False), default=None, help='Defaults to FDWI_OUTPUT_DIR.')
@click.option('--glyphs', required=True, help='Glyph corpus for pretraining the WI cells.')
@click.option('--pretrain-epochs', type=click.IntRange(min=0), default=100, show_default=True)
@click.option('--pdf', is_flag=True, help='Also write a PDF table.')
@click.option('--scale', type=click.IntRange(min=1), default=1, show_default=True)
@click.option('--side', 'fragment_side', type=click.IntRange(min=8), default=105, show_default=True)
@click.option('--embed-dim', type=click.IntRange(min=1), default=512, show_default=True)
@click.option('--heads', type=click.IntRange(min=1), default=2, show_default=True)
@click.option('--head-dim', type=click.IntRange(min=1), default=64, show_default=True)
@train_options(epochs=150, curves=False)
@pass_controller
def ablate(controller, settings, data, preset, out_dir, glyphs, pretrain_epochs, pdf, scale, fragment_side,
           embed_dim, heads, head_dim, epochs, batch_size, lr, patience, val_fraction, seed):
    """Train and evaluate every configuration of an ablation preset."""
    base = build_model_config('dual', 'concat', 'none', scale, fragment_side, embed_dim=embed_dim, heads=heads,
                              head_dim=head_dim)
    train_config = build_train_config(settings, epochs, batch_size, lr, patience, val_fraction, seed,
                                      pretrain_epochs=pretrain_epochs)
    result = controller.ablate(data, preset, out_dir or settings.output_dir, base, train_config, glyphs, pdf)
    if result['success']:
        click.echo(result['table'], nl=False)
    finish(result)


if __name__ == '__main__':
    cli()
