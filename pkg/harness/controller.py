"""
Experiment Controller

One method per command. Each returns a result dict with ``success`` and
``message`` keys plus command-specific data; failures are logged and
reported in the dict rather than raised.
"""

import logging
from dataclasses import replace
from pathlib import Path
from typing import Dict, Optional, Union

from corpus.datasets import DatasetError, GlyphDataset, WriterDataset, gen_glyph_dataset, gen_identification_dataset
from corpus.glyphs import GlyphError
from corpus.ingest import ingest_directory, ingest_glyphs
from engine.tensor import DimensionError, EngineError
from harness import ablation
from harness.checkpoint import CheckpointError, load_checkpoint, load_into, load_model, save_checkpoint
from harness.gradients import TOLERANCE, run_suite
from harness.run_config import RunConfig, RunConfigError
from harness.settings import Settings
from imaging.word_image import ImageFormatError, read_image
from inference.aggregation import AggregationError, score_word, topk_eval
from inference.heatmap import HeatmapError, emit_heatmap
from network.config import ConfigError, ModelConfig
from network.dual_stream import DualStreamNetwork, FreezeError
from reports.exporter import ReportExporter, report_row
from training.losses import LossError
from training.trainer import TrainConfig, TrainingError, pretrain_wi, train

logger = logging.getLogger(__name__)

SYNTH_PREFIX = 'synth:'
GLYPH_DIVERSITIES = ('omniglot', 'emnist')

# Everything a command can fail with that should become success=False
COMMAND_ERRORS = (AggregationError, CheckpointError, ConfigError, DatasetError, DimensionError, EngineError,
                  FreezeError, GlyphError, HeatmapError, ImageFormatError, LossError, OSError, RunConfigError,
                  TrainingError, ValueError)


def _synth_fields(spec: str, minimum: int, maximum: int, what: str):
    fields = [part.strip() for part in spec[len(SYNTH_PREFIX):].split(',')]
    if not minimum <= len(fields) <= maximum:
        raise DatasetError(f"bad {what} spec {spec!r}")
    return fields


def resolve_dataset(spec: str) -> WriterDataset:
    """``synth:K,W,seed`` or a corpus directory."""
    if spec.startswith(SYNTH_PREFIX):
        fields = _synth_fields(spec, 3, 3, 'dataset')
        try:
            writers, words, seed = (int(f) for f in fields)
        except ValueError as e:
            raise DatasetError(f"bad dataset spec {spec!r}: {e}") from e
        return gen_identification_dataset(writers, words, seed)
    return ingest_directory(spec)


def resolve_glyphs(spec: str) -> GlyphDataset:
    """``synth:C,S,seed[,diversity]`` or a directory of class subdirectories."""
    if spec.startswith(SYNTH_PREFIX):
        fields = _synth_fields(spec, 3, 4, 'glyph')
        diversity = fields[3] if len(fields) == 4 else 'omniglot'
        if diversity not in GLYPH_DIVERSITIES:
            raise DatasetError(f"unknown glyph diversity {diversity!r}; choose from {', '.join(GLYPH_DIVERSITIES)}")
        try:
            classes, samples, seed = (int(f) for f in fields[:3])
        except ValueError as e:
            raise DatasetError(f"bad glyph spec {spec!r}: {e}") from e
        return gen_glyph_dataset(classes, samples, seed, diversity)
    return ingest_glyphs(spec)


def _sidecar(artifact: Path, suffix: str) -> Path:
    return artifact.with_name(f"{artifact.stem}{suffix}")


class ExperimentController:
    """Runs pretraining, training, evaluation and diagnostics for the command line."""

    def __init__(self, settings: Optional[Settings] = None):
        self.settings = settings or Settings()

    def _failure(self, action: str, error: Exception) -> Dict:
        logger.error(f"Error {action}: {error}")
        return {'success': False, 'message': str(error)}

    def pretrain(self, glyphs: str, out: Union[str, Path], model_config: ModelConfig,
                 train_config: TrainConfig, curves: bool = False) -> Dict:
        """
        Pretrain the writer-independent stream and save it as a checkpoint.

        Args:
            glyphs (str): glyph corpus spec or directory
            out (str | Path): checkpoint path; metrics and config echo are written next to it
            model_config (ModelConfig): WI architecture (scale, fragment side, embedding width)
            train_config (TrainConfig): uses ``pretrain_epochs`` and ``pretrain_patience``
            curves (bool): also plot the loss curve to PNG

        Returns:
            dict: result with the checkpoint path and per-epoch history
        """
        try:
            out = Path(out)
            corpus = resolve_glyphs(glyphs)
            config = ablation.pretraining_config(model_config, corpus, model_config.embedding_dim)
            model = DualStreamNetwork(config, seed=train_config.seed)
            RunConfig(config, train_config, glyphs=glyphs, output_dir=str(out.parent), seed=train_config.seed,
                      command='pretrain').write(out.parent, _sidecar(out, '.config.ini').name)
            result = pretrain_wi(model, corpus, train_config, metrics_path=_sidecar(out, '.metrics.jsonl'))
            save_checkpoint(out, model)
            if curves:
                ReportExporter(out.parent).plot_curves(result.history, _sidecar(out, '.curves.png').name)
            return {
                'success': True,
                'message': f"Pretrained WI stream for {len(result.history)} epochs",
                'checkpoint': str(out),
                'history': result.history,
            }
        except COMMAND_ERRORS as e:
            return self._failure('pretraining', e)

    def train(self, data: str, out: Union[str, Path], model_config: ModelConfig, train_config: TrainConfig,
              wi_checkpoint: Optional[str] = None, curves: bool = False) -> Dict:
        """
        Train a writer classifier and save it as a checkpoint.

        Args:
            data (str): dataset spec or directory
            out (str | Path): checkpoint path; metrics and config echo are written next to it
            model_config (ModelConfig): architecture; ``num_writers`` is taken from the data
            train_config (TrainConfig): optimisation settings
            wi_checkpoint (str, optional): pretrained WI checkpoint, required in dual mode

        Returns:
            dict: result with the checkpoint path and per-epoch history
        """
        try:
            out = Path(out)
            dataset = resolve_dataset(data)
            pretrained = load_checkpoint(wi_checkpoint) if wi_checkpoint and model_config.uses_wi else None
            if pretrained is not None:
                model_config = replace(model_config, embedding_dim=pretrained.config.embedding_dim)
            config = replace(model_config, num_writers=dataset.num_writers)
            model = DualStreamNetwork(config, seed=train_config.seed)
            if pretrained is not None:
                load_into(model, pretrained, prefix='wi.')
            RunConfig(config, train_config, data=data, wi_checkpoint=wi_checkpoint or '',
                      output_dir=str(out.parent), seed=train_config.seed,
                      command='train').write(out.parent, _sidecar(out, '.config.ini').name)
            result = train(model, dataset, train_config, metrics_path=_sidecar(out, '.metrics.jsonl'))
            save_checkpoint(out, model)
            if curves:
                ReportExporter(out.parent).plot_curves(result.history, _sidecar(out, '.curves.png').name)
            return {
                'success': True,
                'message': f"Trained {config.mode} model on {dataset.num_writers} writers "
                           f"for {len(result.history)} epochs",
                'checkpoint': str(out),
                'history': result.history,
            }
        except COMMAND_ERRORS as e:
            return self._failure('training', e)

    def evaluate(self, checkpoint: str, data: str, report: Union[str, Path], pdf: bool = False) -> Dict:
        """Top-1 / Top-5 over the test words; writes ``report``.json and ``report``.txt."""
        try:
            model = load_model(checkpoint)
            dataset = resolve_dataset(data)
            if dataset.num_writers != model.config.num_writers:
                raise CheckpointError(f"checkpoint classifies {model.config.num_writers} writers, "
                                      f"dataset has {dataset.num_writers}")
            result = topk_eval(dataset.split('test'), model, workers=self.settings.workers,
                               writer_names=dataset.writer_names)
            report, label = Path(report), Path(checkpoint).stem
            exporter = ReportExporter(report.parent)
            paths = exporter.export_report(result, report.name, label, pdf)
            return {
                'success': True,
                'message': f"Top-1 {result.top1:.2f}%, Top-5 {result.top5:.2f}% over {result.words} words",
                'report': result.to_dict(),
                'table': exporter.format_table([report_row(label, result)]),
                'files': [str(p) for p in paths],
            }
        except COMMAND_ERRORS as e:
            return self._failure('evaluating', e)

    def identify(self, checkpoint: str, word: str) -> Dict:
        """Predicted writer index and the averaged score vector P(w) of one word image."""
        try:
            model = load_model(checkpoint)
            scores = score_word(model, read_image(word))
            return {
                'success': True,
                'message': f"writer {scores.writer}",
                'writer': scores.writer,
                'fragments': scores.fragments,
                'probabilities': [float(p) for p in scores.aggregate],
            }
        except COMMAND_ERRORS as e:
            return self._failure('identifying word', e)

    def heatmap(self, checkpoint: str, word: str, out: Union[str, Path], sigma: Optional[float] = None,
                cmap: Optional[str] = None) -> Dict:
        try:
            model = load_model(checkpoint)
            image = read_image(word)
            result = emit_heatmap(image, model, sigma)
            paths = result.save(out, cmap)
            return {
                'success': True,
                'message': f"Heatmap {result.heat.width}x{result.heat.height} (sigma {result.sigma:g})",
                'files': [str(p) for p in paths],
                'sigma': result.sigma,
            }
        except COMMAND_ERRORS as e:
            return self._failure('writing heatmap', e)

    def gradcheck(self, scale: int = 8, seed: int = 0, seeds: int = 1) -> Dict:
        try:
            result = run_suite(scale, seed, seeds)
        except COMMAND_ERRORS as e:
            return self._failure('checking gradients', e)
        failed = sorted(name for name, error in result['errors'].items() if error >= TOLERANCE)
        return {
            'success': result['passed'],
            'message': f"max relative error {result['worst']:.3e}"
                       + (f"; failed: {', '.join(failed)}" if failed else ''),
            'errors': result['errors'],
        }

    def ablate(self, data: str, preset: str, out_dir: Union[str, Path], model_config: ModelConfig,
               train_config: TrainConfig, glyphs: Optional[str] = None, pdf: bool = False) -> Dict:
        """Run an ablation preset and write the combined table to ``out_dir``/ablation_<preset>."""
        try:
            out_dir = Path(out_dir)
            dataset = resolve_dataset(data)
            corpus = resolve_glyphs(glyphs) if glyphs else None
            rows = ablation.run_ablation(preset, dataset, model_config, train_config, out_dir, corpus,
                                         self.settings.workers, data, glyphs or '')
            title = ablation.table_title(preset, rows)
            exporter = ReportExporter(out_dir)
            paths = exporter.export_table(rows, f"ablation_{preset}", title, pdf)
            return {
                'success': True,
                'message': f"{len(rows)} configurations evaluated",
                'rows': rows,
                'table': exporter.format_table(rows, title),
                'files': [str(p) for p in paths],
            }
        except COMMAND_ERRORS as e:
            return self._failure('running ablation', e)
