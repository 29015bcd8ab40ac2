import re
from pathlib import Path

from django.core.management.base import CommandError

from biopsy.api.serializers import session_to_document
from core.documents import write_document
from core.management.base import TrusmapCommand
from core.metaimage import write_mha
from phantom.api.serializers import ground_truth_document, load_phantom_config, truth_pairs
from phantom.generator import build_anatomy, generate_reference, generate_session, moving_volume_name
from validation.api.serializers import fiducials_to_document

MOTION_PATTERN = re.compile(r"^\s*([0-9.]+)\s*mm\s*,\s*([0-9.]+)\s*deg\s*$")


def parse_motion(value):
    """'10mm,10deg' -> (10.0, 10.0)."""
    match = MOTION_PATTERN.match(value)
    if not match:
        raise CommandError(f"--motion ожидается в виде '10mm,10deg': {value}")
    try:
        return float(match.group(1)), float(match.group(2))
    except ValueError:
        raise CommandError(f"--motion ожидается в виде '10mm,10deg': {value}") from None


class Command(TrusmapCommand):
    """
    Генерация синтетических объёмов.

    Usage:
        python manage.py phantom gen --out-dir D [--config cfg.json] [--seed S]
            [--session N --motion "10mm,10deg" --aim-sigma S]
            [--patient-id P --rank K]

    Без --session пишется только опорный объём и ground_truth.json;
    с --session - также moving_XX.mha, session.json и fiducials_XX.json.
    """
    help = "Синтетический фантом ТРУЗИ и сессия биопсий"

    def add_arguments(self, parser):
        parser.add_argument("action", choices=["gen"], help="Действие")
        parser.add_argument("--config", default=None, help="JSON с параметрами фантома")
        parser.add_argument("--out-dir", required=True, help="Каталог результата")
        parser.add_argument("--seed", type=int, default=None, help="Seed (перекрывает seed из --config)")
        parser.add_argument("--session", type=int, default=None, help="Число биопсий сессии")
        parser.add_argument("--motion", default="10mm,10deg", help="Границы движения: '10mm,10deg'")
        parser.add_argument("--aim-sigma", type=float, default=0.0, help="Сигма ошибки прицеливания, мм")
        parser.add_argument("--patient-id", default=None, help="Идентификатор пациента сессии")
        parser.add_argument("--rank", type=int, default=1, help="Порядковый номер пациента сессии")

    def handle(self, *args, **options):
        cfg = load_phantom_config(options["config"], seed=options["seed"])
        workers = self.resolve_threads(options)
        out_dir = Path(options["out_dir"])
        out_dir.mkdir(parents=True, exist_ok=True)

        if options["session"] is None:
            anatomy = build_anatomy(cfg, workers)
            reference, _ = generate_reference(cfg, workers, anatomy=anatomy)
            write_mha(reference, out_dir / "reference.mha")
            write_document(out_dir / "ground_truth.json", ground_truth_document(cfg, anatomy.fiducials))
            return

        phantom = generate_session(
            cfg,
            options["session"],
            motion=parse_motion(options["motion"]),
            aim_sigma=options["aim_sigma"],
            patient_id=options["patient_id"],
            chronological_rank=options["rank"],
            workers=workers,
        )
        write_mha(phantom.reference, out_dir / "reference.mha")
        named = []
        for record, volume, truth in zip(phantom.session.records, phantom.volumes, phantom.ground_truths):
            name = moving_volume_name(record.index)
            write_mha(volume, out_dir / name)
            write_document(out_dir / f"fiducials_{record.index:02d}.json", fiducials_to_document(truth_pairs(truth)))
            named.append((name, truth))

        write_document(out_dir / "session.json", session_to_document(phantom.session))
        fiducials_ref = phantom.ground_truths[0].fiducials_ref
        write_document(out_dir / "ground_truth.json", ground_truth_document(cfg, fiducials_ref, named))
