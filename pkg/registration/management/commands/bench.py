import statistics

from django.core.management.base import CommandError

from core.management.base import TrusmapCommand
from core.metaimage import read_mha
from registration.api.serializers import load_registration_config
from registration.engine import register


class Command(TrusmapCommand):
    """
    Замер времени регистрации (без загрузки объёмов).

    Usage:
        python manage.py bench --ref R.mha --moving M.mha --repeat 5

    Вывод в stdout: строка на каждый прогон и медиана, в секундах.
    """
    help = "Замер времени регистрации пары объёмов"

    def add_arguments(self, parser):
        parser.add_argument("--ref", required=True, help="Опорный объём")
        parser.add_argument("--moving", required=True, help="Подвижный объём")
        parser.add_argument("--repeat", type=int, default=3, help="Число прогонов")
        parser.add_argument("--config", default=None, help="JSON с параметрами регистрации")

    def handle(self, *args, **options):
        if options["repeat"] < 1:
            raise CommandError("--repeat должно быть >= 1")
        cfg = load_registration_config(options["config"], self.resolve_threads(options))
        ref = read_mha(options["ref"])
        mov = read_mha(options["moving"])

        timings = []
        for run in range(1, options["repeat"] + 1):
            result = register(ref, mov, cfg)
            timings.append(result.elapsed_seconds)
            self.stdout.write(
                f"run {run}: {result.elapsed_seconds:.3f} s, score {result.score:.4f}, "
                f"success {str(result.success).lower()}"
            )
        self.stdout.write(f"median: {statistics.median(timings):.3f} s (threads: {cfg.workers})")
