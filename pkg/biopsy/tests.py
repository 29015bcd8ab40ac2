import io
import tempfile
from pathlib import Path

import numpy as np
from django.contrib.auth import get_user_model
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase
from rest_framework import status
from rest_framework.test import APIClient, APITestCase
from rest_framework_simplejwt.tokens import RefreshToken

from core.documents import read_document, write_document
from core.exceptions import EXIT_INVALID_INPUT, EXIT_IO, InvalidInputError, MappingError, SchemaError
from core.transform import RigidTransform, TransformParams, from_params, to_document
from registration.engine import RegistrationResult

from .api.serializers import (
    MappedSessionDocumentSerializer,
    SessionFileSerializer,
    load_mapped_session,
    mapped_session_to_document,
    session_to_document,
)
from .mapping import BiopsyRecord, MappedBiopsy, MappedSession, NeedleSegment, Session, map_biopsy, map_session
from .models import Biopsy, BiopsySession
from .sectors import (
    ANALYSIS_LABELS,
    RAW_LABELS,
    TargetLabel,
    build_grid,
    clip_length,
    clip_segment,
    fuse_apex,
    is_hit,
)

GRID = build_grid([[0.0, 40.0], [0.0, 30.0], [0.0, 30.0]])


def aimed_segment(label, grid=GRID, volume_id="reference.mha", length=20.0):
    """Сегмент вдоль оси y через центр сектора."""
    center = grid.center(label)
    half = np.array([0.0, length / 2.0, 0.0])
    return NeedleSegment(entry=center + half, tip=center - half, volume_id=volume_id)


def make_record(index, target, hit=True):
    """Биопсия, попадающая в свою цель или в зеркальный сектор."""
    label = TargetLabel.parse(target)
    segment = aimed_segment(label if hit else label.mirrored(), volume_id=f"moving_{index:02d}.mha")
    return BiopsyRecord(index=index, intended_target=label, needle=segment)


def registration(T=None, success=True, score=0.9, volume_id=None):
    return RegistrationResult(
        transform=T or RigidTransform.identity(),
        score=score,
        success=success,
        iterations=0,
        overlap_fraction=1.0,
        elapsed_seconds=0.0,
        volume_id=volume_id,
    )


def make_session(records, rank=1, patient_id="P-001"):
    return Session(
        patient_id=patient_id,
        reference_volume_id="reference.mha",
        records=tuple(records),
        chronological_rank=rank,
        grid=GRID,
    )


def twelve_core_session(rank=1, failed=()):
    """Перенесённая сессия из 12 биопсий с тождественными регистрациями."""
    session = make_session(
        [make_record(i + 1, label.code) for i, label in enumerate(RAW_LABELS)], rank=rank,
    )
    regs = [registration(success=record.index not in failed, score=0.9) for record in session.records]
    return map_session(session, regs)


class TargetLabelTests(SimpleTestCase):
    def test_codes_round_trip(self):
        for label in RAW_LABELS + ANALYSIS_LABELS:
            self.assertEqual(TargetLabel.parse(label.code), label)

    def test_parasagittal_alias(self):
        self.assertEqual(TargetLabel.parse("bp-r").code, "BS-R")

    def test_unknown_code(self):
        for code in ("XX-R", "BL", "BL-X", "BF-L", "ALS-L"):
            with self.subTest(code=code), self.assertRaises(InvalidInputError):
                TargetLabel.parse(code)

    def test_fuse_apex(self):
        self.assertEqual(fuse_apex(TargetLabel.parse("BL-R")).code, "BL-R")
        fused = fuse_apex(TargetLabel.parse("AL-L"))
        self.assertEqual(fused.code, "A-L")
        self.assertEqual(fuse_apex(fused), fused)
        self.assertEqual(fuse_apex(TargetLabel.parse("AS-L")), fused)

    def test_analysis_labels(self):
        self.assertEqual(
            [label.code for label in ANALYSIS_LABELS],
            ["BL-R", "BL-L", "BS-R", "BS-L", "ML-R", "ML-L", "MS-R", "MS-L", "A-R", "A-L"],
        )
        self.assertEqual(len(RAW_LABELS), 12)
        self.assertEqual(len({fuse_apex(label) for label in RAW_LABELS}), 10)


class SectorGridTests(SimpleTestCase):
    def test_uniform_partition(self):
        np.testing.assert_array_equal(GRID.col_edges, [0, 10, 20, 30, 40])
        np.testing.assert_array_equal(GRID.row_edges, [0, 10, 20, 30])

    def test_apex_lateral_left_corner(self):
        self.assertEqual(GRID.label_at((5.0, 12.0, 5.0)).code, "AL-L")
        self.assertEqual(GRID.label_at((35.0, 12.0, 25.0)).code, "BL-R")
        self.assertEqual(GRID.label_at((15.0, 0.0, 15.0)).code, "MS-L")
        self.assertIsNone(GRID.label_at((-1.0, 12.0, 5.0)))

    def test_sector_boxes_tile_the_bbox(self):
        volume = sum(np.prod(np.subtract(*GRID.sector_box(label)[::-1])) for label in RAW_LABELS)
        self.assertAlmostEqual(volume, 40.0 * 30.0 * 30.0)

    def test_fused_label_is_not_a_sector(self):
        with self.assertRaises(InvalidInputError):
            GRID.sector_box(TargetLabel.parse("A-R"))

    def test_degenerate_bbox(self):
        with self.assertRaises(InvalidInputError):
            build_grid([[0, 40], [0, 0], [0, 30]])
        with self.assertRaises(InvalidInputError):
            build_grid([[0, 40], [0, 30]])

    def test_grid_document(self):
        document = GRID.to_document()
        self.assertEqual(document["bbox_mm"]["x"], [0.0, 40.0])
        self.assertEqual(document["orientation"], "z_cranial_x_left")


class ClipLengthTests(SimpleTestCase):
    def test_inside_segment_full_length(self):
        label = TargetLabel.parse("MS-R")
        segment = aimed_segment(label)
        self.assertAlmostEqual(clip_length(segment, GRID, label), 20.0)
        self.assertTrue(is_hit(segment, GRID, label))

    def test_outside_bbox(self):
        segment = NeedleSegment(entry=(50, 5, 5), tip=(60, 25, 5), volume_id="reference.mha")
        for label in RAW_LABELS:
            self.assertEqual(clip_length(segment, GRID, label), 0.0)
        self.assertFalse(is_hit(segment, GRID, TargetLabel.parse("AL-L")))

    def test_grazing_segment(self):
        label = TargetLabel.parse("AL-L")
        segment = NeedleSegment(entry=(5.0, 15.0, 9.5), tip=(5.0, 15.0, 25.0), volume_id="reference.mha")
        self.assertAlmostEqual(clip_length(segment, GRID, label), 0.5)
        self.assertFalse(is_hit(segment, GRID, label, min_len=1.0))
        self.assertTrue(is_hit(segment, GRID, label, min_len=0.0))

    def test_additive_over_sectors(self):
        segment = NeedleSegment(entry=(-5.0, 15.0, 2.0), tip=(45.0, 12.0, 28.0), volume_id="reference.mha")
        total = sum(clip_length(segment, GRID, label) for label in RAW_LABELS)
        inside = clip_segment(segment.entry, segment.tip, GRID.bbox[:, 0], GRID.bbox[:, 1])
        self.assertAlmostEqual(total, inside, places=9)
        self.assertLessEqual(inside, segment.length)

    def test_fused_apex_sums_constituents(self):
        segment = NeedleSegment(entry=(5.0, 15.0, 5.0), tip=(15.0, 15.0, 5.0), volume_id="reference.mha")
        self.assertAlmostEqual(clip_length(segment, GRID, TargetLabel.parse("A-L")), 10.0)
        self.assertAlmostEqual(clip_length(segment, GRID, TargetLabel.parse("AL-L")), 5.0)

    def test_negative_threshold(self):
        with self.assertRaises(InvalidInputError):
            is_hit(aimed_segment(RAW_LABELS[0]), GRID, RAW_LABELS[0], min_len=-1.0)


class SectorGeometryPropertyTests(SimpleTestCase):
    """Случайные сетки и отрезки, которые частично выходят за бокс."""

    CASES = 1000
    SAMPLES = 10_000

    def setUp(self):
        self.rng = np.random.default_rng(2024)

    def random_case(self):
        lo = self.rng.uniform(-30.0, 30.0, 3)
        grid = build_grid(np.stack([lo, lo + self.rng.uniform(10.0, 50.0, 3)], axis=1))
        margin = 10.0
        ends = self.rng.uniform(grid.bbox[:, 0] - margin, grid.bbox[:, 1] + margin, (2, 3))
        return grid, NeedleSegment(entry=ends[0], tip=ends[1], volume_id="reference.mha")

    def test_clip_length_matches_dense_sampling(self):
        t = (np.arange(self.SAMPLES) + 0.5) / self.SAMPLES
        worst = 0.0
        for _ in range(self.CASES):
            grid, segment = self.random_case()
            points = segment.entry + t[:, None] * (segment.tip - segment.entry)
            for label in RAW_LABELS:
                lo, hi = grid.sector_box(label)
                inside = np.all((points >= lo) & (points <= hi), axis=1)
                oracle = inside.mean() * segment.length
                worst = max(worst, abs(clip_length(segment, grid, label) - oracle))
        self.assertLess(worst, 0.1)

    def test_sectors_partition_the_bbox(self):
        worst = 0.0
        for _ in range(self.CASES):
            grid, segment = self.random_case()
            total = sum(clip_length(segment, grid, label) for label in RAW_LABELS)
            inside = clip_segment(segment.entry, segment.tip, grid.bbox[:, 0], grid.bbox[:, 1])
            worst = max(worst, abs(total - inside))
            fused = sum(clip_length(segment, grid, label) for label in ANALYSIS_LABELS)
            worst = max(worst, abs(fused - inside))
        self.assertLess(worst, 1e-9)

    def test_mirror_swaps_sides(self):
        for _ in range(self.CASES):
            grid, segment = self.random_case()
            mirrored = NeedleSegment(
                entry=grid.mirror(segment.entry), tip=grid.mirror(segment.tip), volume_id=segment.volume_id,
            )
            for label in RAW_LABELS + ANALYSIS_LABELS[-2:]:
                self.assertAlmostEqual(
                    clip_length(mirrored, grid, label.mirrored()), clip_length(segment, grid, label),
                    delta=1e-9, msg=label.code,
                )

    def test_mirror_of_point_label(self):
        for _ in range(200):
            grid, _ = self.random_case()
            point = self.rng.uniform(grid.bbox[:, 0], grid.bbox[:, 1])
            self.assertEqual(grid.label_at(grid.mirror(point)), grid.label_at(point).mirrored())
        np.testing.assert_allclose(GRID.mirror((5.0, 7.0, 5.0)), (35.0, 7.0, 5.0))
        self.assertEqual(GRID.label_at(GRID.mirror((5.0, 7.0, 5.0))).code, "AL-R")

    def test_hit_is_monotone_in_threshold(self):
        thresholds = (0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0)
        for _ in range(200):
            grid, segment = self.random_case()
            for label in RAW_LABELS + ANALYSIS_LABELS[-2:]:
                hits = [is_hit(segment, grid, label, min_len=value) for value in thresholds]
                self.assertEqual(hits, sorted(hits, reverse=True), msg=label.code)



class MappingTests(SimpleTestCase):
    def test_zero_length_segment(self):
        with self.assertRaises(InvalidInputError):
            NeedleSegment(entry=(1, 2, 3), tip=(1, 2, 3), volume_id="moving_01.mha")

    def test_short_segment_warns(self):
        with self.assertLogs("biopsy.mapping", level="WARNING"):
            BiopsyRecord(
                index=1,
                intended_target=TargetLabel.parse("BL-R"),
                needle=NeedleSegment(entry=(0, 0, 0), tip=(0, 5, 0), volume_id="moving_01.mha"),
            )

    def test_fused_target_rejected(self):
        with self.assertRaises(InvalidInputError):
            BiopsyRecord(index=1, intended_target=TargetLabel.parse("A-L"), needle=aimed_segment(RAW_LABELS[0]))

    def test_session_invariants(self):
        with self.assertRaises(InvalidInputError):
            make_session([])
        with self.assertRaises(InvalidInputError):
            make_session([make_record(1, "BL-R"), make_record(1, "BS-R")])
        session = make_session([make_record(2, "BS-R"), make_record(1, "BL-R")])
        self.assertEqual([record.index for record in session.records], [1, 2])

    def test_identity_leaves_segment_unchanged(self):
        record = make_record(1, "ML-L")
        mapped = map_biopsy(record, registration(), "reference.mha")
        np.testing.assert_array_equal(mapped.segment_ref.entry, record.needle.entry)
        np.testing.assert_array_equal(mapped.segment_ref.tip, record.needle.tip)
        self.assertEqual(mapped.segment_ref.volume_id, "reference.mha")

    def test_translation_shifts_both_endpoints(self):
        record = make_record(1, "ML-L")
        T = from_params(TransformParams(t=(0.0, 0.0, 5.0)))
        mapped = map_biopsy(record, registration(T))
        np.testing.assert_allclose(mapped.segment_ref.entry - record.needle.entry, (0, 0, 5))
        np.testing.assert_allclose(mapped.segment_ref.tip - record.needle.tip, (0, 0, 5))

    def test_length_preserved(self):
        record = make_record(1, "BS-L")
        T = from_params(TransformParams(t=(1.0, -2.0, 3.0), r=(0.3, -0.2, 0.1)), center=(5.0, 5.0, 5.0))
        self.assertAlmostEqual(map_biopsy(record, registration(T)).segment_ref.length, record.needle.length, places=9)

    def test_failed_registration_is_flagged(self):
        mapped = map_biopsy(make_record(1, "BL-R"), registration(success=False, score=0.2))
        self.assertFalse(mapped.is_mapped)
        self.assertIsNone(mapped.segment_ref)
        self.assertEqual(mapped.score, 0.2)

    def test_volume_mismatch(self):
        with self.assertRaises(MappingError):
            map_biopsy(make_record(1, "BL-R"), registration(volume_id="moving_02.mha"))

    def test_session_all_successful(self):
        mapped = twelve_core_session()
        self.assertEqual(len(mapped), 12)
        self.assertEqual(len(mapped.mapped), 12)

    def test_session_with_failure(self):
        mapped = twelve_core_session(failed={5})
        self.assertEqual(len(mapped), 12)
        self.assertEqual(len(mapped.mapped), 11)
        self.assertFalse(mapped[4].is_mapped)

    def test_registration_count_mismatch(self):
        session = make_session([make_record(1, "BL-R"), make_record(2, "BS-R")])
        with self.assertRaises(MappingError):
            map_session(session, [registration()])


class SessionDocumentTests(SimpleTestCase):
    def setUp(self):
        self.document = session_to_document(twelve_core_session().session)

    def test_session_document_round_trip(self):
        serializer = SessionFileSerializer(data=self.document)
        self.assertTrue(serializer.is_valid(), serializer.errors)
        session = serializer.to_session()
        self.assertEqual(len(session.records), 12)
        self.assertEqual(session.records[0].intended_target.code, "BL-R")
        self.assertEqual(session.records[0].needle.volume_id, "moving_01.mha")
        np.testing.assert_array_equal(session.grid.bbox, GRID.bbox)

    def test_volume_id_is_file_name(self):
        self.document["biopsies"][0]["volume"] = "volumes/moving_01.mha"
        serializer = SessionFileSerializer(data=self.document)
        self.assertTrue(serializer.is_valid(), serializer.errors)
        self.assertEqual(serializer.to_session().records[0].needle.volume_id, "moving_01.mha")

    def test_invalid_documents(self):
        cases = {
            "duplicate index": lambda d: d["biopsies"][1].update(index=1),
            "unknown target": lambda d: d["biopsies"][0].update(intended_target="XX-R"),
            "fused target": lambda d: d["biopsies"][0].update(intended_target="A-L"),
            "zero length": lambda d: d["biopsies"][0].update(needle_tip_mm=d["biopsies"][0]["needle_entry_mm"]),
            "no biopsies": lambda d: d.update(biopsies=[]),
            "empty bbox": lambda d: d["grid"]["bbox_mm"].update(z=[30.0, 0.0]),
            "major version": lambda d: d.update(schema_version="2.0"),
        }
        for name, mutate in cases.items():
            with self.subTest(name):
                document = session_to_document(twelve_core_session().session)
                mutate(document)
                self.assertFalse(SessionFileSerializer(data=document).is_valid())

    def test_mapped_document(self):
        document = mapped_session_to_document(twelve_core_session(failed={3}))
        self.assertFalse(document["biopsies"][2]["registration_success"])
        self.assertIsNone(document["biopsies"][2]["mapped_entry_mm"])

        serializer = MappedSessionDocumentSerializer(data=document)
        self.assertTrue(serializer.is_valid(), serializer.errors)
        mapped = serializer.to_mapped_session()
        self.assertEqual(len(mapped.mapped), 11)

    def test_failed_biopsy_cannot_carry_segment(self):
        document = mapped_session_to_document(twelve_core_session(failed={3}))
        document["biopsies"][2]["mapped_entry_mm"] = [1.0, 2.0, 3.0]
        document["biopsies"][2]["mapped_tip_mm"] = [1.0, 2.0, 9.0]
        self.assertFalse(MappedSessionDocumentSerializer(data=document).is_valid())

    def test_load_mapped_session_schema_error(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_document(Path(tmp) / "mapped.json", {"patient_id": "P"})
            with self.assertRaises(SchemaError):
                load_mapped_session(path)


class MapCommandTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.session = make_session([make_record(1, "BL-R"), make_record(2, "AS-L")])
        for name in ("reference.mha", "moving_01.mha", "moving_02.mha"):
            (self.dir / name).write_bytes(b"")
        self.session_path = write_document(self.dir / "session.json", session_to_document(self.session))
        self.transforms = self.dir / "transforms"

    def tearDown(self):
        self.tmp.cleanup()

    def write_transform(self, volume, T, success=True):
        document = to_document(T)
        document["registration"] = {
            "schema_version": "1.0",
            "score": 0.9 if success else 0.3,
            "success": success,
            "iterations": 10,
            "overlap_fraction": 1.0,
            "volume_id": volume,
        }
        write_document(self.transforms / f"{Path(volume).stem}.json", document)

    def test_map_writes_mapped_session(self):
        self.write_transform("moving_01.mha", from_params(TransformParams(t=(0.0, 0.0, 5.0))))
        self.write_transform("moving_02.mha", RigidTransform.identity(), success=False)
        out = self.dir / "mapped.json"

        call_command("map", session=str(self.session_path), transforms=str(self.transforms), out=str(out))

        mapped = load_mapped_session(out)
        self.assertEqual(len(mapped), 2)
        np.testing.assert_allclose(
            mapped[0].segment_ref.entry, self.session.records[0].needle.entry + (0, 0, 5), atol=1e-9,
        )
        self.assertFalse(mapped[1].is_mapped)
        self.assertEqual(read_document(out)["biopsies"][1]["score"], 0.3)

    def test_missing_transform(self):
        self.write_transform("moving_01.mha", RigidTransform.identity())
        with self.assertRaises(CommandError) as ctx:
            call_command(
                "map", session=str(self.session_path), transforms=str(self.transforms), out=str(self.dir / "m.json"),
            )
        self.assertEqual(ctx.exception.returncode, EXIT_IO)

    def test_session_not_utf8(self):
        path = self.dir / "broken.json"
        path.write_bytes(b'{"patient_id": "\xff\xfe"}')
        with self.assertRaises(CommandError) as ctx:
            call_command("map", session=str(path), transforms=str(self.transforms), out=str(self.dir / "m.json"))
        self.assertEqual(ctx.exception.returncode, EXIT_IO)

    def test_missing_volume(self):

        (self.dir / "moving_02.mha").unlink()
        with self.assertRaises(CommandError) as ctx:
            call_command(
                "map", session=str(self.session_path), transforms=str(self.transforms), out=str(self.dir / "m.json"),
            )
        self.assertEqual(ctx.exception.returncode, EXIT_IO)

    def test_transform_for_other_volume(self):
        self.write_transform("moving_01.mha", RigidTransform.identity())
        self.write_transform("moving_02.mha", RigidTransform.identity())
        document = read_document(self.transforms / "moving_02.json")
        document["registration"]["volume_id"] = "moving_07.mha"
        write_document(self.transforms / "moving_02.json", document)
        with self.assertRaises(CommandError) as ctx:
            call_command(
                "map", session=str(self.session_path), transforms=str(self.transforms), out=str(self.dir / "m.json"),
            )
        self.assertEqual(ctx.exception.returncode, EXIT_INVALID_INPUT)


class ImportMappedCommandTests(TestCase):
    def test_import_and_duplicate_rank(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_document(Path(tmp) / "mapped.json", mapped_session_to_document(twelve_core_session(rank=4)))
            stdout = io.StringIO()
            call_command("import_mapped", str(path), stdout=stdout)
            self.assertIn("биопсий: 12", stdout.getvalue())

            session = BiopsySession.objects.get(chronological_rank=4)
            self.assertEqual(session.biopsies.count(), 12)
            restored = session.to_mapped_session()
            self.assertEqual(len(restored.mapped), 12)
            self.assertEqual(restored.session.grid.to_document(), GRID.to_document())

            with self.assertRaises(CommandError) as ctx:
                call_command("import_mapped", str(path))
            self.assertEqual(ctx.exception.returncode, EXIT_IO)
            self.assertEqual(BiopsySession.objects.count(), 1)


def get_jwt_for_user(user) -> str:
    refresh = RefreshToken.for_user(user)
    return str(refresh.access_token)


class BiopsySessionApiTests(APITestCase):
    def setUp(self):
        self.user = get_user_model().objects.create_user(username="urologist", password="Uro_pass_123!")

        for rank in (1, 2, 3):
            serializer = MappedSessionDocumentSerializer(
                data=mapped_session_to_document(twelve_core_session(rank=rank, failed={rank})),
            )
            serializer.is_valid(raise_exception=True)
            serializer.save()
        self.session = BiopsySession.objects.get(chronological_rank=1)

        self.list_url = "/api/sessions/"

    def auth_client(self) -> APIClient:
        client = APIClient()
        client.credentials(HTTP_AUTHORIZATION=f"Bearer {get_jwt_for_user(self.user)}")
        return client

    def test_list_is_public(self):
        response = self.client.get(self.list_url)
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual([item["chronological_rank"] for item in response.data], [1, 2, 3])
        self.assertEqual(response.data[0]["biopsies_count"], 12)
        self.assertEqual(response.data[0]["mapped_count"], 11)

    def test_filter_by_rank(self):
        response = self.client.get(self.list_url, {"rank_min": 2})
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual([item["chronological_rank"] for item in response.data], [2, 3])

    def test_import_requires_auth(self):
        document = mapped_session_to_document(twelve_core_session(rank=7))
        response = self.client.post(self.list_url, document, format="json")
        self.assertEqual(response.status_code, status.HTTP_401_UNAUTHORIZED, msg="Импорт без авторизации запрещён")
        self.assertEqual(BiopsySession.objects.count(), 3)

    def test_authenticated_import(self):
        document = mapped_session_to_document(twelve_core_session(rank=7))
        response = self.auth_client().post(f"{self.list_url}import/", document, format="json")
        self.assertEqual(response.status_code, status.HTTP_201_CREATED, msg=response.data)
        self.assertEqual(response.data["chronological_rank"], 7)
        self.assertEqual(Biopsy.objects.filter(session__chronological_rank=7).count(), 12)

    def test_duplicate_rank_rejected(self):
        document = mapped_session_to_document(twelve_core_session(rank=2))
        response = self.auth_client().post(self.list_url, document, format="json")
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)
        self.assertIn("chronological_rank", response.data)

    def test_nested_biopsies(self):
        url = f"{self.list_url}{self.session.id}/biopsies/"
        response = self.client.get(url)
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(len(response.data), 12)
        self.assertAlmostEqual(response.data[1]["inner_length_mm"], 20.0)

        response = self.client.get(url, {"registration_success": "false"})
        self.assertEqual([item["index"] for item in response.data], [1])
        self.assertIsNone(response.data[0]["inner_length_mm"])

        response = self.client.get(url, {"intended_target": "AL-L"})
        self.assertEqual([item["intended_target"] for item in response.data], ["AL-L"])

    def test_session_report(self):
        response = self.client.get(f"{self.list_url}{self.session.id}/report/", {"min_len": 1.0})
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(response.data["totals"]["n"], 11)
        self.assertEqual(response.data["totals"]["hits"], 11)
        self.assertEqual(len(response.data["rows"]), 10)

    def test_delete_cascades(self):
        response = self.auth_client().delete(f"{self.list_url}{self.session.id}/")
        self.assertEqual(response.status_code, status.HTTP_204_NO_CONTENT)
        self.assertEqual(Biopsy.objects.filter(session_id=self.session.id).count(), 0)


class MappedSessionModelTests(SimpleTestCase):
    def test_mapped_biopsy_consistency(self):
        record = make_record(1, "BL-R")
        with self.assertRaises(InvalidInputError):
            MappedBiopsy(record=record, registration_success=True)
        with self.assertRaises(InvalidInputError):
            MappedBiopsy(record=record, segment_ref=record.needle, registration_success=False)

    def test_mapped_session_iteration(self):
        mapped = twelve_core_session()
        self.assertIsInstance(mapped, MappedSession)
        self.assertEqual([b.record.index for b in mapped], list(range(1, 13)))
