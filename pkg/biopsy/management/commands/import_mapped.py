from biopsy.api.serializers import MappedSessionDocumentSerializer, load_validated
from core.management.base import TrusmapCommand


class Command(TrusmapCommand):
    """
    Сохраняет перенесённую сессию в базу.

    Usage:
        python manage.py import_mapped mapped.json [mapped2.json ...]
    """
    help = "Импорт перенесённых сессий в базу"

    def add_arguments(self, parser):
        parser.add_argument("paths", nargs="+", help="Файлы перенесённых сессий (выход map)")

    def handle(self, *args, **options):
        for path in options["paths"]:
            serializer = load_validated(MappedSessionDocumentSerializer, path, context={"check_unique_rank": True})
            session = serializer.save()
            self.stdout.write(
                f"{path}: сессия {session.chronological_rank} ({session.patient_id}), "
                f"биопсий: {session.biopsies.count()}"
            )
