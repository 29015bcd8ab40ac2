"""
Выгрузка отчёта и кривой обучения: CSV с фиксированной шапкой и JSON.
"""
import csv
import io
import logging

from core.exceptions import InvalidInputError

from .api.serializers import LearningCurveSerializer, ReportSerializer
from .stats import MEAN_LENGTH_NOTE, aggregate

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("target", "side", "n", "hits", "hit_pct", "mean_len_all_mm", "mean_len_hits_mm")

TOTALS_LABEL = "Sum/Average"


def _fixed(value, digits):
    return "" if value is None else f"{value:.{digits}f}"


def check_consistency(report):
    """
    Сверяет строки отчёта с независимым подсчётом при построении.

    Каждая перенесённая биопсия должна попасть ровно в одну строку, а длины
    попаданий - быть подмножеством всех длин цели.

    Raises:
        InvalidInputError: Расхождение итогов
    """
    totals = aggregate(report)
    if report.n_mapped is not None and totals.n != report.n_mapped:
        raise InvalidInputError(
            f"В строках отчёта {totals.n} биопсий, перенесено {report.n_mapped}"
        )
    for row in report.rows:
        if row.hit_length_sum > row.inner_length_sum + 1e-9:
            raise InvalidInputError(f"{row.label}: сумма длин попаданий больше суммы всех длин")
        if row.n_hits and row.mean_hit_length < report.min_len - 1e-9:
            raise InvalidInputError(f"{row.label}: средняя длина попаданий меньше порога")
    logger.debug("Отчёт согласован: %d биопсий, %d попаданий", totals.n, totals.hits)
    return totals


def report_to_csv(report):
    """
    Отчёт в CSV: строка-комментарий, шапка CSV_COLUMNS, 10 строк целей и итог.

    Разделитель - запятая, десятичный разделитель - точка; проценты с одним
    знаком, длины с двумя.
    """
    totals = check_consistency(report)
    buffer = io.StringIO()
    buffer.write(f"# {MEAN_LENGTH_NOTE}; min_len_mm={report.min_len:g}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in report.rows:
        target, side = row.label.code.split("-")
        writer.writerow([
            target,
            side,
            row.n_biopsies,
            row.n_hits,
            _fixed(row.hit_pct, 1),
            _fixed(row.mean_inner_length, 2),
            _fixed(row.mean_hit_length, 2),
        ])
    writer.writerow([
        TOTALS_LABEL,
        "",
        totals.n,
        totals.hits,
        _fixed(totals.pct, 1),
        _fixed(totals.mean_inner_length, 2),
        _fixed(totals.mean_hit_length, 2),
    ])
    return buffer.getvalue()


def report_to_document(report):
    """Отчёт в JSON по схеме ReportSerializer."""
    check_consistency(report)
    return dict(ReportSerializer(report).data)


def learning_curve_to_document(result, min_len):
    """Результат кривой обучения в JSON по схеме LearningCurveSerializer."""
    document = dict(LearningCurveSerializer(result).data)
    document["min_len_mm"] = min_len
    return document
