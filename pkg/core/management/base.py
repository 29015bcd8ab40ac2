import os
import sys

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from core.exceptions import EXIT_IO, TrusmapError


class TrusmapCommand(BaseCommand):
    """
    Базовая команда trusmap.

    Features:
        - опция --threads (переменная окружения TRUSMAP_THREADS имеет приоритет)
        - доменные исключения переводятся в CommandError с кодом завершения
          из иерархии core.exceptions
        - ошибки разбора аргументов завершают процесс с кодом 1
        - системные проверки Django не выполняются: команды работают с файлами

    Exit Codes:
        0 - успех, 1 - использование, 2 - ввод/вывод, 3 - неуспешная регистрация,
        4 - нарушение инвариантов входных данных
    """
    requires_system_checks = []

    def create_parser(self, prog_name, subcommand, **kwargs):
        # CommandParser в этом режиме бросает CommandError (returncode=1) вместо sys.exit(2)
        self._called_from_command_line = False
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        parser.add_argument(
            "--threads",
            type=int,
            default=None,
            help="Число рабочих потоков (по умолчанию - число ядер; TRUSMAP_THREADS имеет приоритет)",
        )
        return parser

    def run_from_argv(self, argv):
        try:
            super().run_from_argv(argv)
        except CommandError as exc:
            # ошибки разбора аргументов возникают до обработчика BaseCommand
            self.stderr.write(f"{exc.__class__.__name__}: {exc}")
            sys.exit(exc.returncode)

    def execute(self, *args, **options):
        try:
            return super().execute(*args, **options)
        except TrusmapError as exc:
            raise CommandError(str(exc), returncode=exc.exit_code) from exc
        except OSError as exc:
            raise CommandError(f"Ошибка ввода/вывода: {exc}", returncode=EXIT_IO) from exc

    def resolve_threads(self, options):
        """Число потоков: TRUSMAP_THREADS, затем --threads, затем число ядер."""
        if settings.TRUSMAP_THREADS:
            return max(1, settings.TRUSMAP_THREADS)
        if options.get("threads"):
            return max(1, options["threads"])
        return os.cpu_count() or 1
