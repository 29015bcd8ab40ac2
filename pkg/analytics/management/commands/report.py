from pathlib import Path

from django.conf import settings

from analytics.export import report_to_csv, report_to_document
from analytics.stats import session_report
from biopsy.api.serializers import load_mapped_session
from core.documents import write_document
from core.management.base import TrusmapCommand


class Command(TrusmapCommand):
    """
    Таблица точности прицеливания по перенесённым сессиям.

    Usage:
        python manage.py report --mapped mapped.json [mapped2.json ...] --out report.csv
            [--min-len 1.0] [--json report.json]

    Несколько сессий сводятся в одну таблицу, каждая со своей сеткой.
    """
    help = "Отчёт о попаданиях по целям (CSV)"

    def add_arguments(self, parser):
        parser.add_argument("--mapped", required=True, nargs="+", help="Файлы перенесённых сессий")
        parser.add_argument("--out", required=True, help="CSV отчёта")
        parser.add_argument("--min-len", type=float, default=None, help="Порог попадания, мм")
        parser.add_argument("--json", default=None, help="Отчёт в JSON")

    def handle(self, *args, **options):
        min_len = options["min_len"]
        if min_len is None:
            min_len = settings.TRUSMAP_MIN_LEN_MM
        sessions = [load_mapped_session(path) for path in options["mapped"]]
        report = session_report(sessions, min_len)

        out = Path(options["out"])
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(report_to_csv(report), encoding="utf-8")
        if options["json"]:
            write_document(options["json"], report_to_document(report))
