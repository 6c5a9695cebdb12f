import json

import numpy as np

from inference.aggregation import build_report
from reports.exporter import ReportExporter, report_row


def sample_report():
    scores = [np.array([0.7, 0.2, 0.1]), np.array([0.1, 0.3, 0.6]), np.array([0.5, 0.4, 0.1])]
    return build_report(scores, [0, 2, 1], 3)


def test_format_table_aligns_rates():
    rows = [{'configuration': 'wd_only/none', 'top1': 50.0, 'top5': 100.0},
            {'configuration': 'dual/concat/post_fusion', 'top1': 66.666, 'top5': None}]
    lines = ReportExporter().format_table(rows, 'Grid').splitlines()
    assert lines[0] == 'Grid'
    assert lines[1].split() == ['Configuration', 'Top-1', 'Top-5']
    assert lines[3].split() == ['wd_only/none', '50.00', '100.00']
    assert lines[4].split() == ['dual/concat/post_fusion', '66.67', '-']
    assert len({len(line) for line in lines[1:]}) == 1


def test_export_report_files(tmp_path):
    report = sample_report()
    paths = ReportExporter(tmp_path).export_report(report, 'eval/report', label='dual', pdf=True)
    assert [p.name for p in paths] == ['report.json', 'report.txt', 'report.pdf']
    data = json.loads(paths[0].read_text())
    assert data['rates'] == {'top1': round(200 / 3, 4), 'top5': 100.0}
    assert 'dual' in paths[1].read_text()
    assert paths[2].read_bytes().startswith(b'%PDF')


def test_report_row():
    row = report_row('wd', sample_report())
    assert row['configuration'] == 'wd' and row['words'] == 3
    assert row['top1'] <= row['top5']


def test_export_table(tmp_path):
    rows = [{'configuration': 'a', 'top1': 10.0, 'top5': 20.0}]
    paths = ReportExporter(tmp_path).export_table(rows, 'ablation_grid', 'Ablation')
    assert json.loads(paths[0].read_text()) == {'title': 'Ablation', 'rows': rows}
    assert paths[1].read_text().startswith('Ablation\n')


def test_plot_curves(tmp_path):
    exporter = ReportExporter(tmp_path)
    records = [{'epoch': 1, 'train_loss': 1.2, 'val_top1': 40.0, 'val_top5': None},
               {'epoch': 2, 'train_loss': 0.8, 'val_top1': 60.0, 'val_top5': None}]
    path = exporter.plot_curves(records, 'curves.png')
    assert path.read_bytes()[:4] == b'\x89PNG'
    assert exporter.plot_curves([], 'empty.png') is None
