import logging
from dataclasses import replace

from django.core.management.base import CommandError

from biopsy.mapping import volume_id_for
from core.documents import write_document
from core.exceptions import EXIT_REGISTRATION_FAILED
from core.management.base import TrusmapCommand
from core.metaimage import read_mha
from core.transform import to_document
from registration.api.serializers import load_registration_config
from registration.engine import register

logger = logging.getLogger(__name__)


class Command(TrusmapCommand):
    """
    Регистрирует подвижный объём с опорным.

    Usage:
        python manage.py register --ref R.mha --moving M.mha --out T.json
            [--config reg.json] [--metrics metrics.json]

    Файл --out содержит преобразование и блок "registration" с метриками;
    при неуспешной регистрации файл всё равно пишется, а код завершения - 3.
    """
    help = "Жёсткая регистрация подвижного объёма с опорным"

    def add_arguments(self, parser):
        parser.add_argument("--ref", required=True, help="Опорный объём (.mha/.mhd)")
        parser.add_argument("--moving", required=True, help="Подвижный объём (.mha/.mhd)")
        parser.add_argument("--out", required=True, help="JSON преобразования подвижный -> опорный")
        parser.add_argument("--config", default=None, help="JSON с параметрами регистрации")
        parser.add_argument("--metrics", default=None, help="JSON с метриками регистрации")

    def handle(self, *args, **options):
        cfg = load_registration_config(options["config"], self.resolve_threads(options))
        ref = read_mha(options["ref"])
        mov = read_mha(options["moving"])
        logger.info("Регистрация %s -> %s (потоков: %d)", options["moving"], options["ref"], cfg.workers)

        result = replace(register(ref, mov, cfg), volume_id=volume_id_for(options["moving"]))

        document = to_document(result.transform)
        document["registration"] = result.metrics(include_timing=False)
        write_document(options["out"], document)
        if options["metrics"]:
            write_document(options["metrics"], result.metrics())

        if not result.success:
            raise CommandError(
                f"Регистрация неуспешна: корреляция {result.score:.4f}",
                returncode=EXIT_REGISTRATION_FAILED,
            )
