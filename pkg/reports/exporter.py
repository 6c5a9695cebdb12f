"""
Report Exporter

Writes evaluation reports and ablation tables as JSON, as an aligned text
table with Top-1 / Top-5 columns and, on request, as a PDF. Training curves
from a metrics log can be plotted to PNG.
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from matplotlib.figure import Figure
from reportlab.lib import colors
from reportlab.lib.pagesizes import A4
from reportlab.lib.styles import getSampleStyleSheet
from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

from inference.aggregation import EvalReport

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ('Configuration', 'Top-1', 'Top-5')

GRID_STYLE = [
    ('GRID', (0, 0), (-1, -1), 0.3, colors.HexColor('#AAAAAA')),
    ('BACKGROUND', (0, 0), (-1, 0), colors.HexColor('#E8EEF7')),
    ('ALIGN', (1, 0), (-1, -1), 'RIGHT'),
    ('VALIGN', (0, 0), (-1, -1), 'MIDDLE'),
]


def _rate(value) -> str:
    return f"{value:.2f}" if value is not None else '-'


def report_row(label: str, report: EvalReport) -> Dict[str, object]:
    return {'configuration': label, 'top1': report.top1, 'top5': report.top5, 'words': report.words}


class ReportExporter:
    """Exports evaluation results under an output directory."""

    def __init__(self, output_dir: Union[str, Path] = 'runs'):
        self.output_dir = Path(output_dir)

    def _path(self, name: Union[str, Path]) -> Path:
        path = Path(name)
        if not path.is_absolute():
            path = self.output_dir / path
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def format_table(self, rows: Sequence[Dict[str, object]], title: Optional[str] = None) -> str:
        """Aligned text table, one line per row, rates with two decimals."""
        cells = [list(TABLE_COLUMNS)]
        for row in rows:
            cells.append([str(row['configuration']), _rate(row.get('top1')), _rate(row.get('top5'))])
        widths = [max(len(line[i]) for line in cells) for i in range(len(TABLE_COLUMNS))]

        def render(line: List[str]) -> str:
            return '  '.join([line[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(line[1:], widths[1:])])

        lines = [title] if title else []
        lines += [render(cells[0]), '  '.join('-' * w for w in widths)]
        lines += [render(line) for line in cells[1:]]
        return '\n'.join(lines) + '\n'

    def export_json(self, data: Dict[str, object], name: Union[str, Path]) -> Path:
        path = self._path(name)
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + '\n', encoding='utf-8')
        return path

    def export_text(self, rows: Sequence[Dict[str, object]], name: Union[str, Path],
                    title: Optional[str] = None) -> Path:
        path = self._path(name)
        path.write_text(self.format_table(rows, title), encoding='utf-8')
        return path

    def export_pdf(self, rows: Sequence[Dict[str, object]], name: Union[str, Path], title: str) -> Path:
        path = self._path(name)
        styles = getSampleStyleSheet()
        data = [list(TABLE_COLUMNS)]
        data += [[str(row['configuration']), _rate(row.get('top1')), _rate(row.get('top5'))] for row in rows]
        table = Table(data, repeatRows=1)
        table.setStyle(TableStyle(GRID_STYLE))
        document = SimpleDocTemplate(str(path), pagesize=A4, title=title, invariant=1)
        document.build([Paragraph(title, styles['Heading2']), Spacer(1, 12), table])
        return path

    def export_report(self, report: EvalReport, stem: Union[str, Path], label: str = 'model',
                      pdf: bool = False) -> List[Path]:
        """``stem``.json with the full report and ``stem``.txt with its Top-k table (plus ``stem``.pdf)."""
        stem = Path(stem)
        rows = [report_row(label, report)]
        paths = [self.export_json(report.to_dict(), stem.with_suffix('.json')),
                 self.export_text(rows, stem.with_suffix('.txt'), f"Identification over {report.words} words")]
        if pdf:
            paths.append(self.export_pdf(rows, stem.with_suffix('.pdf'), 'Writer identification'))
        logger.info(f"Wrote report {stem}: Top-1 {report.top1:.2f}%, Top-5 {report.top5:.2f}%")
        return paths

    def export_table(self, rows: Sequence[Dict[str, object]], stem: Union[str, Path], title: str,
                     pdf: bool = False) -> List[Path]:
        stem = Path(stem)
        paths = [self.export_json({'title': title, 'rows': list(rows)}, stem.with_suffix('.json')),
                 self.export_text(rows, stem.with_suffix('.txt'), title)]
        if pdf:
            paths.append(self.export_pdf(rows, stem.with_suffix('.pdf'), title))
        return paths

    def plot_curves(self, records: Sequence[Dict[str, object]], name: Union[str, Path]) -> Optional[Path]:
        """Loss (left axis) and any validation rates or loss (right axis) per epoch; None without records."""
        if not records:
            return None
        epochs = [r['epoch'] for r in records]
        figure = Figure(figsize=(6, 4))
        axis = figure.subplots()
        axis.plot(epochs, [r['train_loss'] for r in records], label='train loss')
        axis.set_xlabel('epoch')
        axis.set_ylabel('loss')
        other = axis.twinx()
        for key in ('val_loss', 'val_top1', 'val_top5', 'train_top1'):
            values = [r.get(key) for r in records]
            if any(v is not None for v in values):
                other.plot(epochs, [v if v is not None else float('nan') for v in values], '--', label=key)
        handles = axis.get_legend_handles_labels()[0] + other.get_legend_handles_labels()[0]
        labels = axis.get_legend_handles_labels()[1] + other.get_legend_handles_labels()[1]
        axis.legend(handles, labels, loc='best')
        path = self._path(name)
        figure.savefig(path, dpi=100)
        return path
