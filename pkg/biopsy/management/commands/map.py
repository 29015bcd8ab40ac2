import logging
from pathlib import Path

from biopsy.api.serializers import SessionFileSerializer, load_validated, mapped_session_to_document
from biopsy.mapping import map_session
from core.documents import write_document
from core.management.base import TrusmapCommand
from registration.api.serializers import load_registration_result

logger = logging.getLogger(__name__)


def _require(base_dir, path):
    path = Path(path)
    resolved = path if path.is_absolute() else base_dir / path
    if not resolved.exists():
        raise FileNotFoundError(f"Объём не найден: {resolved}")
    return resolved


class Command(TrusmapCommand):
    """
    Переносит сегменты игл сессии в систему опорного объёма.

    Usage:
        python manage.py map --session S.json --transforms DIR --out mapped.json

    Для каждой биопсии берётся DIR/<имя объёма без расширения>.json -
    результат команды register. Пути к объёмам в файле сессии
    разрешаются относительно каталога файла сессии.
    """
    help = "Перенос биопсий сессии в опорный объём"

    def add_arguments(self, parser):
        parser.add_argument("--session", required=True, help="Файл сессии (JSON)")
        parser.add_argument("--transforms", required=True, help="Каталог с результатами register")
        parser.add_argument("--out", required=True, help="Файл перенесённой сессии (JSON)")

    def handle(self, *args, **options):
        session_path = Path(options["session"])
        serializer = load_validated(SessionFileSerializer, session_path)
        data = serializer.validated_data
        _require(session_path.parent, data["reference_volume"])
        for entry in data["biopsies"]:
            _require(session_path.parent, entry["volume"])

        session = serializer.to_session()
        transforms = Path(options["transforms"])
        regs = []
        for record in session.records:
            transform_path = transforms / f"{Path(record.needle.volume_id).stem}.json"
            logger.debug("Биопсия %d: преобразование %s", record.index, transform_path)
            regs.append(load_registration_result(transform_path))

        mapped = map_session(session, regs)
        write_document(options["out"], mapped_session_to_document(mapped))
