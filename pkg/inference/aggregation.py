"""
Word-Level Identification

Fragment scores are averaged into one score per writer, the writer with the
highest average is chosen, and Top-k identification rates are computed over
a set of labelled words.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from sklearn.metrics import confusion_matrix

from imaging.fragments import prepare_word
from imaging.word_image import GrayImage

logger = logging.getLogger(__name__)

DEFAULT_K = (1, 5)


class AggregationError(ValueError):
    """Empty or ragged fragment scores."""


@dataclass
class WordScore:
    """Fragment score rows p_k and their average P(w)."""

    fragment_scores: np.ndarray
    aggregate: np.ndarray

    @property
    def fragments(self) -> int:
        return int(self.fragment_scores.shape[0])

    @property
    def writer(self) -> int:
        return identify(self.aggregate)

    @classmethod
    def from_scores(cls, fragment_scores) -> 'WordScore':
        scores = np.asarray(fragment_scores, dtype=np.float64)
        return cls(scores, aggregate(scores))


def aggregate(fragment_scores) -> np.ndarray:
    """P_i(w) = (sum over fragments of p_ki) / N."""
    try:
        scores = np.asarray(fragment_scores, dtype=np.float64)
    except ValueError as e:
        raise AggregationError(f"fragment score rows differ in length: {e}")
    if scores.ndim != 2 or scores.shape[0] == 0:
        raise AggregationError("need a nonempty [N, K] block of fragment scores")
    return scores.sum(axis=0) / scores.shape[0]


def identify(word_scores) -> int:
    """Index of the largest entry; ties go to the lowest index."""
    scores = np.asarray(word_scores)
    if scores.size == 0:
        raise AggregationError("cannot identify a writer from an empty score vector")
    return int(np.argmax(scores))


def rank_of(word_scores, writer: int) -> int:
    """1-based rank of ``writer`` in the same order identify() uses (lower index wins ties)."""
    scores = np.asarray(word_scores)
    target = scores[writer]
    ahead = np.count_nonzero(scores > target) + np.count_nonzero(scores[:writer] == target)
    return int(ahead) + 1


@dataclass
class EvalReport:
    """Per-word ranks, Top-k rates in percent and the writer confusion matrix."""

    labels: List[int]
    predictions: List[int]
    ranks: List[int]
    num_writers: int
    k_list: Sequence[int] = DEFAULT_K
    rates: Dict[int, float] = field(default_factory=dict)
    confusion: Optional[np.ndarray] = None
    writer_names: List[str] = field(default_factory=list)

    @property
    def words(self) -> int:
        return len(self.ranks)

    @property
    def top1(self) -> float:
        return self.rates.get(1, 0.0)

    @property
    def top5(self) -> float:
        return self.rates.get(5, 0.0)

    def to_dict(self) -> Dict[str, object]:
        return {
            'words': self.words,
            'num_writers': self.num_writers,
            'writer_names': list(self.writer_names),
            'rates': {f"top{k}": round(v, 4) for k, v in sorted(self.rates.items())},
            'labels': list(self.labels),
            'predictions': list(self.predictions),
            'ranks': list(self.ranks),
            'confusion': self.confusion.tolist() if self.confusion is not None else [],
        }


def build_report(word_scores: Sequence[np.ndarray], labels: Sequence[int], num_writers: int,
                 k_list: Sequence[int] = DEFAULT_K, writer_names: Optional[Sequence[str]] = None) -> EvalReport:
    """EvalReport from one aggregated score vector per word."""
    labels = [int(label) for label in labels]
    predictions = [identify(scores) for scores in word_scores]
    ranks = [rank_of(scores, label) for scores, label in zip(word_scores, labels)]
    words = len(ranks)
    rates = {}
    for k in k_list:
        hits = sum(1 for rank in ranks if rank <= k)
        rates[int(k)] = 100.0 * hits / words if words else 0.0
    confusion = confusion_matrix(labels, predictions, labels=list(range(num_writers))) if words else \
        np.zeros((num_writers, num_writers), dtype=np.int64)
    return EvalReport(labels, predictions, ranks, num_writers, tuple(int(k) for k in k_list), rates,
                      confusion, list(writer_names or []))


def score_word(model, image: GrayImage) -> WordScore:
    """Run every fragment of a word through the model in inference mode and average the scores."""
    config = model.config
    fragments = prepare_word(image, config.effective_grid, config.fragment_side)
    return WordScore.from_scores(model.predict(fragments))


def topk_eval(items, model, k_list: Sequence[int] = DEFAULT_K, workers: int = 1,
              writer_names: Optional[Sequence[str]] = None) -> EvalReport:
    """Top-k identification rates of ``model`` over labelled words.

    Args:
        items: word items carrying ``image`` and ``writer`` attributes
        model (DualStreamNetwork): trained network, read only here
        k_list (sequence): ranks to report
        workers (int): joblib threads scoring words concurrently

    Returns:
        EvalReport: a word counts for Top-k iff its writer is among the k best scores
    """
    items = list(items)
    if workers > 1 and len(items) > 1:
        scores = Parallel(n_jobs=workers, prefer='threads')(delayed(score_word)(model, item.image) for item in items)
    else:
        scores = [score_word(model, item.image) for item in items]
    report = build_report([s.aggregate for s in scores], [item.writer for item in items],
                          model.config.num_writers, k_list, writer_names)
    logger.debug(f"Evaluated {report.words} words: " +
                 ', '.join(f"Top-{k} {v:.2f}%" for k, v in sorted(report.rates.items())))
    return report
