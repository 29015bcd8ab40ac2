import logging
from pathlib import Path

from django.conf import settings

from analytics.export import learning_curve_to_document
from analytics.stats import learning_curve
from biopsy.api.serializers import load_mapped_session
from core.documents import write_document
from core.exceptions import FormatError, InvalidInputError
from core.management.base import TrusmapCommand

logger = logging.getLogger(__name__)


def read_mapped_list(path):
    """
    Пути из файла-списка: по одному на строку, относительно каталога списка.

    Пустые строки и строки с # пропускаются.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: список не в UTF-8: {exc}") from exc
    entries = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        entry = Path(line)
        entries.append(entry if entry.is_absolute() else path.parent / entry)
    return entries


class Command(TrusmapCommand):
    """
    Сравнение частоты попаданий первой и второй половины серии.

    Usage:
        python manage.py learning_curve --mapped-list list.txt --split K --out lc.json
            [--min-len 1.0] [--yates]

    Сессии упорядочиваются по порядковому номеру пациента; первые K
    образуют первую половину.
    """
    help = "Кривая обучения: тест хи-квадрат по двум половинам серии"

    def add_arguments(self, parser):
        parser.add_argument("--mapped-list", required=True, help="Файл со списком перенесённых сессий")
        parser.add_argument("--split", type=int, required=True, help="Число сессий в первой половине")
        parser.add_argument("--out", required=True, help="JSON результата")
        parser.add_argument("--min-len", type=float, default=None, help="Порог попадания, мм")
        parser.add_argument("--yates", action="store_true", help="Поправка Йейтса")

    def handle(self, *args, **options):
        min_len = options["min_len"]
        if min_len is None:
            min_len = settings.TRUSMAP_MIN_LEN_MM

        sessions = [load_mapped_session(path) for path in read_mapped_list(options["mapped_list"])]
        ranks = [mapped.session.chronological_rank for mapped in sessions]
        if len(set(ranks)) != len(ranks):
            raise InvalidInputError("Порядковые номера пациентов в списке повторяются")
        sessions.sort(key=lambda mapped: mapped.session.chronological_rank)
        logger.info("Кривая обучения: %d сессий, разбиение после %d", len(sessions), options["split"])

        result = learning_curve(sessions, options["split"], min_len, yates=options["yates"])
        write_document(options["out"], learning_curve_to_document(result, min_len))
