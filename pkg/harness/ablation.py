"""
Ablation Runner

Trains and evaluates a preset list of configurations, each in its own output
directory, and collects one Top-1 / Top-5 row per configuration. Cells that
need a writer-independent stream share one pretrained checkpoint per
embedding width. Cells run in joblib worker processes when more than one
worker is requested.
"""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from joblib import Parallel, delayed

from corpus.datasets import GlyphDataset, WriterDataset
from harness.checkpoint import load_checkpoint, load_into, save_checkpoint
from harness.run_config import RunConfig
from inference.aggregation import topk_eval
from network.config import FUSIONS, PLACEMENTS, ModelConfig
from network.dual_stream import DualStreamNetwork
from reports.exporter import ReportExporter, report_row
from training.trainer import TrainConfig, pretrain_wi, train

logger = logging.getLogger(__name__)

PRESETS = ('grid', 'embedding', 'unit')
EMBEDDING_SWEEP = (128, 256, 512, 1024, 2048)


@dataclass(frozen=True)
class Cell:
    mode: str
    fusion: str = 'concat'
    attention_placement: str = 'none'
    embedding_dim: int = 512
    input_unit: str = 'fragment'

    @property
    def label(self) -> str:
        parts = [self.mode]
        if self.mode == 'dual':
            parts.append(self.fusion)
        parts.append(self.attention_placement)
        if self.mode == 'wi_only':
            parts.append(f"E={self.embedding_dim}")
        if self.input_unit != 'fragment':
            parts.append(self.input_unit)
        return '/'.join(parts)

    @property
    def slug(self) -> str:
        return self.label.replace('/', '_').replace('=', '')

    @property
    def needs_pretraining(self) -> bool:
        return self.mode != 'wd_only'

    def model_config(self, base: ModelConfig, num_writers: int) -> ModelConfig:
        return replace(base, num_writers=num_writers, mode=self.mode, fusion=self.fusion,
                       attention_placement=self.attention_placement, embedding_dim=self.embedding_dim,
                       input_unit=self.input_unit)


def preset_cells(preset: str, embedding_dim: int = 512) -> List[Cell]:
    """Configurations of a preset; combinations that cannot be built are left out."""
    if preset == 'grid':
        cells = [Cell('wd_only', attention_placement=p) for p in PLACEMENTS if p != 'per_stream']
        cells += [Cell('dual', fusion, p, embedding_dim) for fusion in FUSIONS for p in PLACEMENTS]
        return cells
    if preset == 'embedding':
        return [Cell('wi_only', embedding_dim=e) for e in EMBEDDING_SWEEP]
    if preset == 'unit':
        return [Cell(mode, 'concat', 'post_fusion', embedding_dim, unit)
                for mode in ('wd_only', 'dual') for unit in ('fragment', 'word')]
    raise ValueError(f"unknown ablation preset {preset!r}; choose from {', '.join(PRESETS)}")


def pretraining_config(base: ModelConfig, glyphs: GlyphDataset, embedding_dim: int) -> ModelConfig:
    """wi_only model whose WI stream matches ``base`` and whose head covers the glyph classes."""
    return replace(base, mode='wi_only', num_writers=max(2, glyphs.num_classes), attention_placement='none',
                   embedding_dim=embedding_dim, input_unit='fragment')


def pretrain_checkpoint(base: ModelConfig, glyphs: GlyphDataset, embedding_dim: int, train_config: TrainConfig,
                        path: Union[str, Path], metrics_path: Optional[Path] = None) -> Path:
    model = DualStreamNetwork(pretraining_config(base, glyphs, embedding_dim), seed=train_config.seed)
    pretrain_wi(model, glyphs, train_config, metrics_path=metrics_path)
    return save_checkpoint(path, model)


def run_cell(cell: Cell, dataset: WriterDataset, base: ModelConfig, train_config: TrainConfig,
             out_dir: Union[str, Path], wi_checkpoint: Optional[str] = None, data_source: str = '',
             glyph_source: str = '') -> Dict[str, object]:
    """Train, checkpoint and evaluate one configuration under ``out_dir/<cell slug>``."""
    cell_dir = Path(out_dir) / cell.slug
    config = cell.model_config(base, dataset.num_writers)
    model = DualStreamNetwork(config, seed=train_config.seed)
    if cell.needs_pretraining:
        load_into(model, load_checkpoint(wi_checkpoint), prefix='wi.')
    RunConfig(config, train_config, data_source, glyph_source, wi_checkpoint or '', str(cell_dir),
              train_config.seed, 'ablate').write(cell_dir)
    train(model, dataset, train_config, metrics_path=cell_dir / 'metrics.jsonl')
    save_checkpoint(cell_dir / 'model.fdwi', model)
    report = topk_eval(dataset.split('test'), model, writer_names=dataset.writer_names)
    ReportExporter(cell_dir).export_report(report, 'report', cell.label)
    row = report_row(cell.label, report)
    row.update({'mode': cell.mode, 'fusion': cell.fusion if cell.mode == 'dual' else None,
                'attention': cell.attention_placement, 'embedding_dim': cell.embedding_dim,
                'input_unit': cell.input_unit})
    return row


def run_ablation(preset: str, dataset: WriterDataset, base: ModelConfig, train_config: TrainConfig,
                 out_dir: Union[str, Path], glyphs: Optional[GlyphDataset] = None, workers: int = 1,
                 data_source: str = '', glyph_source: str = '') -> List[Dict[str, object]]:
    """Rows for every cell of ``preset``, in preset order.

    Args:
        preset (str): 'grid', 'embedding' or 'unit'
        dataset (WriterDataset): words with train/test splits
        base (ModelConfig): scale, fragment side, grid and attention widths shared by every cell
        train_config (TrainConfig): optimisation settings shared by every cell
        out_dir: root of the per-cell output directories
        glyphs (GlyphDataset): pretraining corpus, needed by cells with a WI stream
        workers (int): joblib worker processes

    Returns:
        list: one row per cell with configuration, top1, top5 and the cell's settings
    """
    cells = preset_cells(preset, base.embedding_dim)
    out_dir = Path(out_dir)
    checkpoints: Dict[int, str] = {}
    widths = sorted({cell.embedding_dim for cell in cells if cell.needs_pretraining})
    if widths and glyphs is None:
        raise ValueError(f"preset {preset!r} has WI cells and needs a glyph corpus")
    for width in widths:
        path = out_dir / f"pretrain_e{width}.fdwi"
        pretrain_checkpoint(base, glyphs, width, train_config, path, out_dir / f"pretrain_e{width}.metrics.jsonl")
        checkpoints[width] = str(path)

    logger.info(f"Running {len(cells)} {preset} cells with {workers} worker(s)")
    jobs = (delayed(run_cell)(cell, dataset, base, train_config, out_dir, checkpoints.get(cell.embedding_dim),
                              data_source, glyph_source) for cell in cells)
    if workers > 1:
        rows = Parallel(n_jobs=workers)(jobs)
    else:
        rows = [function(*args, **kwargs) for function, args, kwargs in jobs]
    return list(rows)


def table_title(preset: str, rows: Sequence[Dict[str, object]]) -> str:
    return f"Ablation '{preset}': {len(rows)} configurations"
