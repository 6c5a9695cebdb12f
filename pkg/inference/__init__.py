"""Fragment score aggregation, Top-k evaluation and activation heatmaps."""

from inference.aggregation import EvalReport, WordScore, aggregate, identify, topk_eval
from inference.heatmap import Heatmap, HeatmapError, compose_heatmap, emit_heatmap

__all__ = ['EvalReport', 'Heatmap', 'HeatmapError', 'WordScore', 'aggregate', 'compose_heatmap', 'emit_heatmap',
           'identify', 'topk_eval']
