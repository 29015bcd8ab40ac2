from core.documents import write_document
from core.management.base import TrusmapCommand
from registration.api.serializers import load_registration_result
from validation.api.serializers import load_fiducials, tre_to_document
from validation.tre import tre


class Command(TrusmapCommand):
    """
    Проверка преобразования по парам фидуциалов.

    Usage:
        python manage.py validate --fiducials F.json --transform T.json --out tre.json
    """
    help = "Ошибка регистрации по фидуциалам (TRE)"

    def add_arguments(self, parser):
        parser.add_argument("--fiducials", required=True, help="Файл пар фидуциалов (JSON)")
        parser.add_argument("--transform", required=True, help="Преобразование подвижный -> опорный (JSON)")
        parser.add_argument("--out", required=True, help="JSON результата")

    def handle(self, *args, **options):
        pairs = load_fiducials(options["fiducials"])
        reg = load_registration_result(options["transform"])
        write_document(options["out"], tre_to_document(tre(pairs, reg.transform)))
