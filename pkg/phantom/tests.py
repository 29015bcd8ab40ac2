import tempfile
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, tag

from analytics.stats import aggregate, per_target_stats
from biopsy.api.serializers import SessionFileSerializer, load_mapped_session, session_to_document
from biopsy.mapping import map_session
from biopsy.sectors import RAW_LABELS
from core.documents import read_document, write_document
from core.exceptions import (
    EXIT_INVALID_INPUT,
    EXIT_IO,
    EXIT_REGISTRATION_FAILED,
    EXIT_USAGE,
    InvalidInputError,
    SchemaError,
)
from core.metaimage import read_mha
from core.transform import RigidTransform, TransformParams, from_params
from core.volume import index_to_world
from registration.engine import RegistrationResult

from .api.serializers import load_phantom_config
from .generator import (
    FIDUCIAL_MIN_DISTANCE_MM,
    FIDUCIAL_SHELL,
    PhantomConfig,
    build_anatomy,
    generate_moving,
    generate_reference,
    generate_session,
    philox,
    random_motion,
)
from .management.commands.phantom import parse_motion

SMALL = PhantomConfig(dims=(64, 64, 64), spacing=(1.0, 1.0, 1.0), semi_axes=(20.0, 16.0, 17.0), seed=3)

SMALL_DOCUMENT = {"dims": [64, 64, 64], "spacing": [1.0, 1.0, 1.0], "semi_axes": [20.0, 16.0, 17.0]}


def truth_registrations(phantom):
    return [
        RegistrationResult(
            transform=truth.transform, score=1.0, success=True, iterations=0,
            overlap_fraction=1.0, elapsed_seconds=0.0,
        )
        for truth in phantom.ground_truths
    ]


def hit_rate(phantom):
    mapped = map_session(phantom.session, truth_registrations(phantom))
    totals = aggregate(per_target_stats(mapped.mapped, phantom.session.grid))
    return totals.hits / totals.n


class PhantomConfigTests(SimpleTestCase):
    def test_default_prostate_volume(self):
        cfg = PhantomConfig()
        self.assertAlmostEqual(cfg.volume_ml, 45.0, delta=0.1)

        idx = np.stack(np.meshgrid(*(np.arange(n) for n in cfg.dims), indexing="ij"), axis=-1).reshape(-1, 3)
        world = idx * np.asarray(cfg.spacing) + cfg.origin
        inside = np.count_nonzero(np.sum((world / np.asarray(cfg.semi_axes)) ** 2, axis=1) <= 1.0)
        counted_ml = inside * np.prod(cfg.spacing) / 1000.0
        self.assertAlmostEqual(counted_ml, 45.0, delta=2.0)

    def test_grid_is_centred(self):
        volume, _ = generate_reference(SMALL)
        np.testing.assert_allclose(volume.world_center(), (0.0, 0.0, 0.0), atol=1e-12)
        np.testing.assert_allclose(index_to_world(volume, (0, 0, 0)), (-31.5, -31.5, -31.5))

    def test_invalid_configs(self):
        cases = {
            "ellipsoid too large": dict(semi_axes=(31.0, 16.0, 17.0)),
            "too few fiducials": dict(n_fiducials=2),
            "negative seed": dict(seed=-1),
            "huge seed": dict(seed=1 << 64),
            "intensity": dict(prostate_mean=300.0),
            "core length": dict(core_length_mm=0.0),
        }
        for name, overrides in cases.items():
            with self.subTest(name), self.assertRaises(InvalidInputError):
                SMALL.with_overrides(**overrides)
        with self.assertRaises(InvalidInputError):
            SMALL.with_overrides(colour="red")

    def test_config_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_document(Path(tmp) / "cfg.json", dict(SMALL_DOCUMENT, seed=9))
            cfg = load_phantom_config(path, seed=None)
            self.assertEqual((cfg.dims, cfg.seed), ((64, 64, 64), 9))
            self.assertEqual(load_phantom_config(path, seed=11).seed, 11)

            write_document(path, {"dims": [64, 64, 64], "semi_axis": [1, 2, 3]})
            with self.assertRaises(SchemaError):
                load_phantom_config(path)

    def test_document_echo(self):
        document = SMALL.to_document()
        self.assertEqual(document["dims"], [64, 64, 64])
        self.assertEqual(PhantomConfig(**document), SMALL)

    def test_philox_seed_range(self):
        with self.assertRaises(InvalidInputError):
            philox(-1, 1)
        a = philox(5, 1, 2).standard_normal(4)
        np.testing.assert_array_equal(a, philox(5, 1, 2).standard_normal(4))
        self.assertFalse(np.array_equal(a, philox(5, 2, 2).standard_normal(4)))


class GenerateTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.anatomy = build_anatomy(SMALL)
        cls.reference, cls.truth = generate_reference(SMALL, anatomy=cls.anatomy)

    def test_deterministic(self):
        again, _ = generate_reference(SMALL)
        np.testing.assert_array_equal(again.data, self.reference.data)

    def test_thread_count_does_not_change_output(self):
        threaded, _ = generate_reference(SMALL, workers=4)
        np.testing.assert_array_equal(threaded.data, self.reference.data)

    def test_different_seed_differs(self):
        other, _ = generate_reference(SMALL.with_overrides(seed=4))
        self.assertFalse(np.array_equal(other.data, self.reference.data))

    def test_reference_contrast(self):
        self.assertEqual(self.reference.intensity_type, "uint8")
        data = self.reference.as_float()
        center = data[28:36, 28:36, 28:36].mean()
        corner = data[:6, :6, :6].mean()
        self.assertGreater(center, corner + 30.0)

    def test_fiducials(self):
        fiducials = self.truth.fiducials_ref
        self.assertEqual(fiducials.shape, (SMALL.n_fiducials, 3))
        scaled = fiducials / (np.asarray(SMALL.semi_axes) * FIDUCIAL_SHELL)
        self.assertTrue(np.all(np.sum(scaled ** 2, axis=1) < 1.0))
        for i in range(len(fiducials)):
            for j in range(i + 1, len(fiducials)):
                self.assertGreaterEqual(np.linalg.norm(fiducials[i] - fiducials[j]), FIDUCIAL_MIN_DISTANCE_MM)
        self.assertEqual(self.truth.fiducial_ids, ("f1", "f2", "f3", "f4", "f5"))
        self.assertTrue(self.truth.transform.is_identity())

    def test_identity_with_reference_seed_reproduces_reference(self):
        moving, truth = generate_moving(SMALL, RigidTransform.identity(), SMALL.seed, anatomy=self.anatomy)
        np.testing.assert_array_equal(moving.data, self.reference.data)
        np.testing.assert_array_equal(truth.fiducials_mov, truth.fiducials_ref)

    def test_translation_moves_fiducials(self):
        T = from_params(TransformParams(t=(5.0, 0.0, 0.0)))
        _, truth = generate_moving(SMALL, T, 123, anatomy=self.anatomy)
        np.testing.assert_allclose(truth.fiducials_mov, truth.fiducials_ref - (5.0, 0.0, 0.0), atol=1e-12)

    def test_fiducial_visible_at_moved_position(self):
        T = from_params(TransformParams(t=(4.0, -2.0, 3.0)))
        moving, truth = generate_moving(SMALL.with_overrides(speckle_sigma=0.0), T, 77)
        for point in truth.fiducials_mov:
            idx = np.rint((point - SMALL.origin) / np.asarray(SMALL.spacing)).astype(int)
            self.assertGreater(int(moving.data[tuple(idx)]), SMALL.prostate_mean)

    def test_out_of_bounds_motion(self):
        T = from_params(TransformParams(t=(30.0, 0.0, 0.0)))
        with self.assertRaises(InvalidInputError):
            generate_moving(SMALL, T, 1, anatomy=self.anatomy)
        with self.assertRaises(InvalidInputError):
            generate_moving(SMALL, from_params(TransformParams(r=(0.0, 0.0, 0.5))), 1, anatomy=self.anatomy)
        volume, _ = generate_moving(SMALL, T, 1, anatomy=self.anatomy, check_bounds=False)
        self.assertEqual(volume.dims, SMALL.dims)

    def test_random_motion_bounds(self):
        rng = philox(42, 4)
        for _ in range(200):
            T = random_motion(rng, 10.0, 10.0)
            self.assertLessEqual(np.linalg.norm(T.translation), 10.0 + 1e-9)
            self.assertLessEqual(T.rotation_angle_deg(), 10.0 + 1e-9)


class SessionTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.phantom = generate_session(SMALL, 12, seed=17)

    def test_session_structure(self):
        session = self.phantom.session
        self.assertEqual([record.index for record in session.records], list(range(1, 13)))
        self.assertEqual([record.intended_target for record in session.records], list(RAW_LABELS))
        self.assertEqual(session.records[0].needle.volume_id, "moving_01.mha")
        self.assertEqual(session.reference_volume_id, "reference.mha")
        self.assertEqual(session.patient_id, "phantom-17")
        self.assertEqual(len(self.phantom.volumes), 12)
        for record in session.records:
            self.assertAlmostEqual(record.needle.length, SMALL.core_length_mm)

    def test_perfect_aim_hits_every_target(self):
        self.assertEqual(hit_rate(self.phantom), 1.0)

    def test_motion_within_bounds(self):
        for truth in self.phantom.ground_truths:
            self.assertLessEqual(np.linalg.norm(truth.transform.translation), 10.0 + 1e-9)
            self.assertLessEqual(truth.transform.rotation_angle_deg(), 10.0 + 1e-9)

    def test_large_aiming_error_misses(self):
        noisy = generate_session(SMALL, 12, seed=17, aim_sigma=15.0)
        self.assertLess(hit_rate(noisy), 1.0)
        # те же движения и спекл при той же сессии
        for clean, shaken in zip(self.phantom.ground_truths, noisy.ground_truths):
            np.testing.assert_array_equal(clean.transform.rotation, shaken.transform.rotation)

    def test_session_document_is_valid(self):
        serializer = SessionFileSerializer(data=session_to_document(self.phantom.session))
        self.assertTrue(serializer.is_valid(), serializer.errors)

    def test_invalid_arguments(self):
        with self.assertRaises(InvalidInputError):
            generate_session(SMALL, 0)
        with self.assertRaises(InvalidInputError):
            generate_session(SMALL, 2, aim_sigma=-1.0)


class PhantomCommandTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.config = write_document(self.dir / "cfg.json", SMALL_DOCUMENT)

    def tearDown(self):
        self.tmp.cleanup()

    def test_parse_motion(self):
        self.assertEqual(parse_motion("10mm,10deg"), (10.0, 10.0))
        self.assertEqual(parse_motion(" 2.5 mm , 4 deg "), (2.5, 4.0))
        for value in ("10,10", "10mm", "1.2.3mm,4deg"):
            with self.subTest(value=value), self.assertRaises(CommandError) as ctx:
                parse_motion(value)
            self.assertEqual(ctx.exception.returncode, EXIT_USAGE)

    def test_reference_only(self):
        out = self.dir / "out"
        call_command("phantom", "gen", config=str(self.config), out_dir=str(out), seed=5)
        volume = read_mha(out / "reference.mha")
        self.assertEqual(volume.dims, (64, 64, 64))
        truth = read_document(out / "ground_truth.json")
        self.assertEqual(truth["config"]["seed"], 5)
        self.assertEqual(len(truth["reference"]["fiducials_mm"]), 5)
        self.assertEqual(truth["volumes"], [])

    def test_same_seed_same_files(self):
        first, second = self.dir / "a", self.dir / "b"
        call_command("phantom", "gen", config=str(self.config), out_dir=str(first), seed=5)
        call_command("phantom", "gen", config=str(self.config), out_dir=str(second), seed=5, threads=3)
        self.assertEqual((first / "reference.mha").read_bytes(), (second / "reference.mha").read_bytes())

    def test_session(self):
        out = self.dir / "session"
        call_command(
            "phantom", "gen", config=str(self.config), out_dir=str(out), seed=8,
            session=2, motion="5mm,5deg", patient_id="P-042", rank=3,
        )
        for name in ("reference.mha", "moving_01.mha", "moving_02.mha", "fiducials_01.json", "session.json"):
            self.assertTrue((out / name).exists(), msg=name)

        session = read_document(out / "session.json", SessionFileSerializer)
        self.assertEqual((session["patient_id"], session["chronological_rank"]), ("P-042", 3))
        self.assertEqual([entry["volume"] for entry in session["biopsies"]], ["moving_01.mha", "moving_02.mha"])

        truth = read_document(out / "ground_truth.json")
        self.assertEqual([item["volume"] for item in truth["volumes"]], ["moving_01.mha", "moving_02.mha"])
        self.assertEqual(len(truth["volumes"][0]["fiducials"]), 5)

    def test_invalid_config(self):
        config = write_document(self.dir / "bad.json", dict(SMALL_DOCUMENT, semi_axes=[40.0, 16.0, 17.0]))
        with self.assertRaises(CommandError) as ctx:
            call_command("phantom", "gen", config=str(config), out_dir=str(self.dir / "out"))
        self.assertEqual(ctx.exception.returncode, EXIT_INVALID_INPUT)

    def test_unknown_config_key(self):
        config = write_document(self.dir / "bad.json", {"colour": "red"})
        with self.assertRaises(CommandError) as ctx:
            call_command("phantom", "gen", config=str(config), out_dir=str(self.dir / "out"))
        self.assertEqual(ctx.exception.returncode, EXIT_IO)

    def test_unknown_action(self):
        with self.assertRaises(CommandError) as ctx:
            call_command("phantom", "render", out_dir=str(self.dir / "out"))
        self.assertEqual(ctx.exception.returncode, EXIT_USAGE)


@tag("acceptance")
class EndToEndTests(SimpleTestCase):
    """phantom gen -> register x12 -> map -> report на фантоме по умолчанию."""

    def run_pipeline(self, root, aim_sigma):
        root.mkdir(parents=True)
        call_command("phantom", "gen", out_dir=str(root), seed=2024, session=12, aim_sigma=aim_sigma)
        transforms = root / "transforms"
        for index in range(1, 13):
            try:
                call_command(
                    "register",
                    ref=str(root / "reference.mha"),
                    moving=str(root / f"moving_{index:02d}.mha"),
                    out=str(transforms / f"moving_{index:02d}.json"),
                )
            except CommandError as exc:
                # неуспешная регистрация исключает биопсию, файл преобразования всё равно записан
                self.assertEqual(exc.returncode, EXIT_REGISTRATION_FAILED)
        call_command(
            "map", session=str(root / "session.json"), transforms=str(transforms), out=str(root / "mapped.json"),
        )
        call_command("report", mapped=[str(root / "mapped.json")], out=str(root / "report.csv"))
        mapped = load_mapped_session(root / "mapped.json")
        totals = aggregate(per_target_stats(mapped.mapped, mapped.session.grid))
        return totals.hits / totals.n

    def test_pipeline(self):
        with tempfile.TemporaryDirectory() as tmp:
            perfect = self.run_pipeline(Path(tmp) / "perfect", 0.0)
            shaky = self.run_pipeline(Path(tmp) / "shaky", 6.0)
        self.assertEqual(perfect, 1.0)
        self.assertLess(shaky, perfect)
