import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from scipy.spatial.transform import Rotation

from core.api.serializers import TransformDocumentSerializer
from core.documents import read_document, write_document
from core.exceptions import (
    FormatError, GimbalLockError, InvalidInputError, MetaImageDataError, MetaImageHeaderError, PyramidError,
    SchemaError, UnsupportedElementTypeError,
)
from core.metaimage import header_text, read_mha, write_mha
from core.transform import (
    RigidTransform, TransformParams, apply_point, compose, from_document, from_params, invert, to_document,
    to_params,
)
from core.volume import (
    Volume3, build_pyramid, gaussian_downsample, index_to_world, sample_points, sample_trilinear, world_to_index,
)
from phantom.generator import PhantomConfig, generate_reference


PROPERTY_CASES = 10_000

SPECKLE_PHANTOM = PhantomConfig(dims=(64, 64, 64), spacing=(1.0, 1.0, 1.0), semi_axes=(20.0, 16.0, 17.0), seed=5)


def random_params(rng, max_angle=math.pi / 2 - 0.1):
    return TransformParams(t=tuple(rng.uniform(-20, 20, 3)), r=tuple(rng.uniform(-max_angle, max_angle, 3)))


def intensity_centroid(vol):
    idx = np.stack(np.meshgrid(*[np.arange(n) for n in vol.dims], indexing="ij"), axis=-1).reshape(-1, 3)
    weights = vol.as_float().reshape(-1)
    return weights @ index_to_world(vol, idx) / weights.sum()


class VolumeGeometryTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(7)

    def test_index_to_world_examples(self):
        vol = Volume3(data=np.zeros((4, 4, 4), dtype=np.uint8), spacing=(0.5, 1, 1), origin=(10, 0, 0))
        np.testing.assert_allclose(index_to_world(vol, (1, 0, 0)), (10.5, 0, 0))
        np.testing.assert_allclose(world_to_index(vol, (10, 0, 0)), (0, 0, 0))

    def test_world_index_round_trip_any_orientation(self):
        for _ in range(10):
            vol = Volume3(
                data=np.zeros((3, 3, 3), dtype=np.float32),
                spacing=self.rng.uniform(0.2, 2.0, 3),
                origin=self.rng.uniform(-50, 50, 3),
                direction=Rotation.random(random_state=int(self.rng.integers(1 << 30))).as_matrix(),
            )
            idx = self.rng.uniform(-10, 10, (100, 3))
            np.testing.assert_allclose(world_to_index(vol, index_to_world(vol, idx)), idx, atol=1e-9)

    def test_point_outside_grid_is_not_clamped(self):
        vol = Volume3(data=np.zeros((4, 4, 4), dtype=np.uint8), spacing=(1, 1, 1), origin=(0, 0, 0))
        np.testing.assert_allclose(world_to_index(vol, (-2.5, 7, 1)), (-2.5, 7, 1))
        self.assertIsNone(sample_trilinear(vol, (-2.5, 7, 1)))

    def test_invalid_geometry_rejected(self):
        with self.assertRaises(InvalidInputError):
            Volume3(data=np.zeros((1, 4, 4), dtype=np.uint8), spacing=(1, 1, 1), origin=(0, 0, 0))
        with self.assertRaises(InvalidInputError):
            Volume3(data=np.zeros((4, 4, 4), dtype=np.uint8), spacing=(1, 0, 1), origin=(0, 0, 0))
        with self.assertRaises(InvalidInputError):
            Volume3(
                data=np.zeros((4, 4, 4), dtype=np.uint8), spacing=(1, 1, 1), origin=(0, 0, 0),
                direction=np.diag([1.0, 2.0, 1.0]),
            )


class TrilinearSamplingTests(SimpleTestCase):
    def test_voxel_centers_reproduce_data(self):
        data = np.arange(4 * 5 * 6, dtype=np.float32).reshape(4, 5, 6)
        vol = Volume3(data=data, spacing=(0.5, 1.0, 2.0), origin=(1, 2, 3))
        idx = np.stack(np.meshgrid(*[np.arange(n) for n in data.shape], indexing="ij"), axis=-1).reshape(-1, 3)
        values, inside = sample_points(vol, index_to_world(vol, idx))
        self.assertTrue(inside.all())
        np.testing.assert_allclose(values, data.reshape(-1), atol=1e-6)

    def test_midpoint_between_voxels(self):
        data = np.zeros((2, 2, 2), dtype=np.float32)
        data[0, :, :] = 10
        data[1, :, :] = 20
        vol = Volume3(data=data, spacing=(1, 1, 1), origin=(0, 0, 0))
        self.assertAlmostEqual(sample_trilinear(vol, (0.5, 0, 0)), 15.0)

    def test_affine_field_is_exact(self):
        i, j, k = np.meshgrid(np.arange(10), np.arange(12), np.arange(8), indexing="ij")
        vol = Volume3(data=(2 * i + 3 * j - k).astype(np.float32), spacing=(1, 1, 1), origin=(0, 0, 0))
        points = np.random.default_rng(3).uniform((0, 0, 0), (9, 11, 7), (10000, 3))
        values, inside = sample_points(vol, points, workers=4)
        self.assertTrue(inside.all())
        expected = 2 * points[:, 0] + 3 * points[:, 1] - points[:, 2]
        np.testing.assert_allclose(values, expected, atol=1e-4)

    def test_parallel_sampling_matches_sequential(self):
        vol = Volume3(
            data=np.random.default_rng(1).random((40, 40, 50)).astype(np.float32), spacing=(1, 1, 1), origin=(0, 0, 0),
        )
        points = np.random.default_rng(2).uniform(-5, 45, (200000, 3))
        sequential, inside = sample_points(vol, points, workers=1)
        parallel, _ = sample_points(vol, points, workers=4)
        np.testing.assert_array_equal(np.isnan(sequential), ~inside)
        np.testing.assert_array_equal(sequential[inside], parallel[inside])


class PyramidTests(SimpleTestCase):
    def test_constant_volume_stays_constant(self):
        vol = Volume3(data=np.full((16, 16, 16), 42, dtype=np.uint8), spacing=(1, 1, 1), origin=(0, 0, 0))
        coarse = gaussian_downsample(vol, 2)
        np.testing.assert_allclose(coarse.data, 42.0, atol=1e-4)

    def test_downsample_shape_and_spacing(self):
        vol = Volume3(data=np.zeros((64, 64, 64), dtype=np.float32), spacing=(0.5, 0.5, 0.5), origin=(1, 2, 3))
        coarse = gaussian_downsample(vol, 2)
        self.assertEqual(coarse.dims, (32, 32, 32))
        np.testing.assert_allclose(coarse.spacing, (1, 1, 1))
        np.testing.assert_allclose(coarse.origin, vol.origin)

    def test_factor_below_two_rejected(self):
        vol = Volume3(data=np.zeros((8, 8, 8), dtype=np.float32), spacing=(1, 1, 1), origin=(0, 0, 0))
        with self.assertRaises(InvalidInputError):
            gaussian_downsample(vol, 1)

    def test_pyramid_levels(self):
        vol = Volume3(data=np.zeros((64, 64, 64), dtype=np.uint8), spacing=(1, 1, 1), origin=(0, 0, 0))
        self.assertEqual(len(build_pyramid(vol, 1)), 1)
        pyramid = build_pyramid(vol, 3)
        self.assertEqual([level.dims for level in pyramid.levels], [(64,) * 3, (32,) * 3, (16,) * 3])
        for level in pyramid.levels:
            self.assertTrue(np.all(np.abs(level.extent - vol.extent) <= level.spacing))

    def test_pyramid_too_deep(self):
        vol = Volume3(data=np.zeros((16, 16, 16), dtype=np.uint8), spacing=(1, 1, 1), origin=(0, 0, 0))
        with self.assertRaises(PyramidError):
            build_pyramid(vol, 3)

    def test_downsample_preserves_phantom_mean(self):
        vol, _ = generate_reference(SPECKLE_PHANTOM)
        coarse = gaussian_downsample(vol, 2)
        mean = float(vol.as_float().mean())
        self.assertLess(abs(float(coarse.data.mean()) - mean) / mean, 0.01)

    def test_centroid_stable_across_levels(self):
        vol, _ = generate_reference(SPECKLE_PHANTOM)
        pyramid = build_pyramid(vol, 3)
        fine = intensity_centroid(pyramid[0])
        for level in pyramid.levels[1:]:
            drift = np.linalg.norm(intensity_centroid(level) - fine)
            self.assertLess(drift, float(level.spacing.max()))


class RigidTransformTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(11)

    def test_zero_params_is_identity(self):
        self.assertTrue(from_params(TransformParams()).is_identity())

    def test_quarter_turn_about_z(self):
        T = from_params(TransformParams(r=(0.0, 0.0, math.pi / 2)))
        np.testing.assert_allclose(apply_point(T, (1, 0, 0)), (0, 1, 0), atol=1e-12)

    def test_pure_translation(self):
        T = from_params(TransformParams(t=(5, 0, 0)))
        np.testing.assert_allclose(apply_point(T, (1, 2, 3)), (6, 2, 3))
        np.testing.assert_allclose(invert(from_params(TransformParams(t=(1, 2, 3)))).translation, (-1, -2, -3))

    def test_params_round_trip(self):
        errors = np.zeros((PROPERTY_CASES, 2))
        for k in range(PROPERTY_CASES):
            params = random_params(self.rng)
            back = to_params(from_params(params, self.rng.uniform(-10, 10, 3)))
            errors[k] = (np.abs(np.subtract(back.t, params.t)).max(), np.abs(np.subtract(back.r, params.r)).max())
        self.assertLess(errors.max(), 1e-9)

    def test_gimbal_lock_reported(self):
        with self.assertRaises(GimbalLockError):
            to_params(from_params(TransformParams(r=(0.0, math.pi / 2, 0.0))))

    def test_isometry_and_group_laws(self):
        a = self.rng.uniform(-50, 50, (PROPERTY_CASES, 3))
        b = self.rng.uniform(-50, 50, (PROPERTY_CASES, 3))
        errors = np.zeros((PROPERTY_CASES, 5))
        for k in range(PROPERTY_CASES):
            A = from_params(random_params(self.rng, math.pi), self.rng.uniform(-10, 10, 3))
            B = from_params(random_params(self.rng, math.pi), self.rng.uniform(-10, 10, 3))
            C = from_params(random_params(self.rng, math.pi))
            pa, pb = apply_point(A, a[k]), apply_point(A, b[k])
            identity = compose(A, invert(A))
            errors[k] = (
                abs(np.linalg.norm(pa - pb) - np.linalg.norm(a[k] - b[k])),
                np.abs(apply_point(compose(A, B), a[k]) - apply_point(A, apply_point(B, a[k]))).max(),
                np.abs(
                    apply_point(compose(compose(A, B), C), a[k]) - apply_point(compose(A, compose(B, C)), a[k])
                ).max(),
                np.abs(apply_point(invert(A), pa) - a[k]).max(),
                max(np.abs(identity.rotation - np.eye(3)).max(), np.abs(identity.translation).max()),
            )
        for name, column in zip(("isometry", "compose", "associativity", "invert", "identity"), errors.T):
            self.assertLess(column.max(), 1e-9, msg=name)

    def test_rotation_angle(self):
        self.assertAlmostEqual(RigidTransform.identity().rotation_angle_deg(), 0.0, places=12)
        T = from_params(TransformParams(t=(4, -3, 2), r=(0.0, 0.0, 0.3)), center=(1, 2, 3))
        self.assertAlmostEqual(T.rotation_angle_deg(), math.degrees(0.3), places=9)
        for _ in range(100):
            T = from_params(random_params(self.rng, math.pi))
            cos_angle = np.clip((np.trace(T.rotation) - 1.0) / 2.0, -1.0, 1.0)
            self.assertAlmostEqual(T.rotation_angle_deg(), math.degrees(math.acos(cos_angle)), places=6)
        self.assertIn("angle=17.1887 deg", repr(from_params(TransformParams(r=(0.3, 0.0, 0.0)))))

    def test_improper_rotation_rejected(self):
        with self.assertRaises(InvalidInputError):
            RigidTransform(rotation=np.diag([1.0, 1.0, -1.0]), translation=np.zeros(3), center=np.zeros(3))

    def test_document_round_trip(self):
        T = from_params(TransformParams(t=(4, -3, 2), r=(0.05, -0.03, 0.07)), center=(1, 2, 3))
        document = to_document(T)
        self.assertEqual(document["schema_version"], "1.0")
        back = from_document(document)
        np.testing.assert_allclose(back.rotation, T.rotation, atol=1e-12)
        np.testing.assert_allclose(back.offset, T.offset, atol=1e-12)


class MetaImageTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_float_round_trip_is_bit_exact(self):
        data = np.random.default_rng(5).standard_normal((16, 16, 16)).astype(np.float32)
        direction = Rotation.from_euler("z", 30, degrees=True).as_matrix()
        vol = Volume3(data=data, spacing=(0.5, 0.7, 1.1), origin=(-3.25, 1.0, 7.5), direction=direction)
        for name in ("vol.mha", "vol.mhd"):
            back = read_mha(write_mha(vol, self.dir / name))
            np.testing.assert_array_equal(back.data, vol.data)
            self.assertEqual(back.intensity_type, "float32")
            np.testing.assert_allclose(back.spacing, vol.spacing, atol=1e-12)
            np.testing.assert_allclose(back.origin, vol.origin, atol=1e-12)
            np.testing.assert_allclose(back.direction, vol.direction, atol=1e-12)

    def test_uint8_file_size(self):
        vol = Volume3(data=np.zeros((8, 6, 4), dtype=np.uint8), spacing=(1, 1, 1), origin=(0, 0, 0))
        path = write_mha(vol, self.dir / "small.mha")
        self.assertEqual(path.stat().st_size, len(header_text(vol).encode("ascii")) + 8 * 6 * 4)

    def test_int16_x_fastest_order(self):
        data = np.arange(24, dtype=np.int16).reshape(2, 3, 4)
        vol = Volume3(data=data, spacing=(1, 1, 1), origin=(0, 0, 0))
        path = write_mha(vol, self.dir / "order.mha")
        payload = path.read_bytes()[len(header_text(vol)):]
        flat = np.frombuffer(payload, dtype="<i2")
        np.testing.assert_array_equal(flat, vol.flat())

    def _write_raw(self, header, payload=b""):
        path = self.dir / "broken.mha"
        path.write_bytes(header.encode("ascii") + payload)
        return path

    def test_missing_spacing(self):
        path = self._write_raw(
            "NDims = 3\nDimSize = 2 2 2\nElementType = MET_UCHAR\nElementDataFile = LOCAL\n", b"\0" * 8,
        )
        with self.assertRaises(MetaImageHeaderError):
            read_mha(path)

    def test_data_length_mismatch(self):
        path = self._write_raw(
            "NDims = 3\nDimSize = 2 2 2\nElementSpacing = 1 1 1\nElementType = MET_UCHAR\nElementDataFile = LOCAL\n",
            b"\0" * 7,
        )
        with self.assertRaises(MetaImageDataError):
            read_mha(path)

    def test_unsupported_element_type(self):
        path = self._write_raw(
            "NDims = 3\nDimSize = 2 2 2\nElementSpacing = 1 1 1\nElementType = MET_DOUBLE\nElementDataFile = LOCAL\n",
            b"\0" * 64,
        )
        with self.assertRaises(UnsupportedElementTypeError):
            read_mha(path)

    def test_unknown_key_ignored_with_warning(self):
        path = self._write_raw(
            "NDims = 3\nDimSize = 2 2 2\nElementSpacing = 1 1 1\nElementType = MET_UCHAR\n"
            "Modality = MET_MOD_US\nElementDataFile = LOCAL\n",
            bytes(range(8)),
        )
        with self.assertLogs("core.metaimage", level="WARNING"):
            vol = read_mha(path)
        self.assertEqual(vol.dims, (2, 2, 2))
        self.assertEqual(int(vol.data[1, 0, 0]), 1)


class DocumentTests(SimpleTestCase):
    def test_transform_schema(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_document(Path(tmp) / "t.json", {"translation_mm": [1, 2, 3], "rotation_zyx_deg": [0, 0, 0]})
            data = read_document(path, TransformDocumentSerializer)
            self.assertEqual(data["schema_version"], "1.0")
            self.assertEqual(data["center_mm"], [0.0, 0.0, 0.0])

            write_document(path, {"translation_mm": [1, 2], "rotation_zyx_deg": [0, 0, 0]})
            with self.assertRaises(SchemaError):
                read_document(path, TransformDocumentSerializer)

            write_document(path, {"schema_version": "2.0", "translation_mm": [1, 2, 3], "rotation_zyx_deg": [0, 0, 0]})
            with self.assertRaises(SchemaError):
                read_document(path, TransformDocumentSerializer)

            path.write_text("{not json", encoding="utf-8")
            with self.assertRaises(FormatError):
                read_document(path)

    def test_invalid_utf8_is_format_error(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "s.json"
            path.write_bytes(b'{"patient_id": "\xff\xfe"}')
            with self.assertRaises(FormatError):
                read_document(path)
