import tempfile
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase
from scipy.spatial.transform import Rotation

from core.documents import read_document, write_document
from core.exceptions import EXIT_IO, InvalidInputError, SchemaError
from core.transform import (
    RigidTransform,
    TransformParams,
    apply_point,
    compose,
    from_params,
    invert,
    to_document,
)

from .api.serializers import fiducials_to_document, load_fiducials, tre_to_document
from .tre import FiducialPair, tre

REFERENCE_POINTS = np.array([
    [0.0, 0.0, 0.0],
    [10.0, -4.0, 3.0],
    [-6.0, 8.0, 12.0],
    [3.5, 2.5, -9.0],
    [-11.0, -7.0, 1.0],
])


def exact_pairs(T):
    moving = apply_point(invert(T), REFERENCE_POINTS)
    return [FiducialPair(id=f"f{i + 1}", p_ref=p, p_mov=q) for i, (p, q) in enumerate(zip(REFERENCE_POINTS, moving))]


class TreTests(SimpleTestCase):
    def test_exact_correspondence(self):
        T = from_params(TransformParams(t=(4.0, -3.0, 2.0), r=(0.05, -0.03, 0.07)), center=(1.0, 2.0, 3.0))
        summary = tre(exact_pairs(T), T)
        self.assertEqual(summary.n, 5)
        self.assertLess(summary.max, 1e-9)
        self.assertLess(summary.mean, 1e-9)

    def test_constant_offset(self):
        pairs = [FiducialPair(id=f"f{i}", p_ref=p, p_mov=p + (3.0, 0.0, 0.0)) for i, p in enumerate(REFERENCE_POINTS)]
        summary = tre(pairs, RigidTransform.identity())
        for _, distance in summary.per_pair:
            self.assertAlmostEqual(distance, 3.0)
        self.assertAlmostEqual(summary.mean, 3.0)
        self.assertAlmostEqual(summary.max, 3.0)

    def test_mean_bounded_by_max(self):
        rng = np.random.default_rng(7)
        pairs = [
            FiducialPair(id=str(i), p_ref=rng.normal(size=3) * 20, p_mov=rng.normal(size=3) * 20)
            for i in range(25)
        ]
        summary = tre(pairs, RigidTransform.identity())
        self.assertGreaterEqual(summary.mean, 0.0)
        self.assertLessEqual(summary.mean, summary.max)
        self.assertEqual([pair_id for pair_id, _ in summary.per_pair], [str(i) for i in range(25)])

    def test_invariant_under_global_motion(self):
        rng = np.random.default_rng(11)
        T = from_params(TransformParams(t=(2.0, 1.0, -1.0), r=(0.1, 0.2, -0.1)))
        pairs = [
            FiducialPair(id=f"f{i}", p_ref=p, p_mov=q + rng.normal(scale=0.5, size=3))
            for i, (p, q) in enumerate(zip(REFERENCE_POINTS, apply_point(invert(T), REFERENCE_POINTS)))
        ]
        G = RigidTransform(
            rotation=Rotation.from_rotvec((0.3, -0.4, 0.2)).as_matrix(),
            translation=np.array([15.0, -20.0, 5.0]),
            center=np.zeros(3),
        )
        moved_pairs = [
            FiducialPair(id=pair.id, p_ref=apply_point(G, pair.p_ref), p_mov=apply_point(G, pair.p_mov))
            for pair in pairs
        ]
        before = tre(pairs, T)
        after = tre(moved_pairs, compose(compose(G, T), invert(G)))
        np.testing.assert_allclose(
            [d for _, d in after.per_pair], [d for _, d in before.per_pair], atol=1e-9,
        )
        self.assertAlmostEqual(after.mean, before.mean, delta=1e-9)

    def test_empty_pairs(self):
        with self.assertRaises(InvalidInputError):
            tre([], RigidTransform.identity())

    def test_invalid_point(self):
        with self.assertRaises(InvalidInputError):
            FiducialPair(id="f1", p_ref=(0.0, 0.0), p_mov=(0.0, 0.0, 0.0))
        with self.assertRaises(InvalidInputError):
            FiducialPair(id="f1", p_ref=(0.0, float("nan"), 0.0), p_mov=(0.0, 0.0, 0.0))

    def test_tre_document(self):
        document = tre_to_document(tre(exact_pairs(RigidTransform.identity()), RigidTransform.identity()))
        self.assertEqual(document["aggregation"], "pooled")
        self.assertEqual(document["n"], 5)
        self.assertEqual([pair["id"] for pair in document["pairs"]], ["f1", "f2", "f3", "f4", "f5"])


class ValidateCommandTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.T = from_params(TransformParams(t=(5.0, 0.0, -2.0), r=(0.0, 0.1, 0.0)))
        self.fiducials = write_document(self.dir / "fiducials.json", fiducials_to_document(exact_pairs(self.T)))
        self.transform = write_document(self.dir / "T.json", to_document(self.T))

    def tearDown(self):
        self.tmp.cleanup()

    def test_validate(self):
        out = self.dir / "tre.json"
        call_command("validate", fiducials=str(self.fiducials), transform=str(self.transform), out=str(out))
        document = read_document(out)
        self.assertEqual(document["n"], 5)
        self.assertLess(document["max_mm"], 1e-6)

    def test_fiducials_round_trip(self):
        pairs = load_fiducials(self.fiducials)
        self.assertEqual([pair.id for pair in pairs], ["f1", "f2", "f3", "f4", "f5"])
        np.testing.assert_array_equal(pairs[1].p_ref, REFERENCE_POINTS[1])

    def test_duplicate_ids(self):
        document = fiducials_to_document(exact_pairs(self.T))
        document["pairs"][1]["id"] = "f1"
        path = write_document(self.dir / "dup.json", document)
        with self.assertRaises(SchemaError):
            load_fiducials(path)
        with self.assertRaises(CommandError) as ctx:
            call_command("validate", fiducials=str(path), transform=str(self.transform), out=str(self.dir / "x.json"))
        self.assertEqual(ctx.exception.returncode, EXIT_IO)

    def test_empty_pairs_rejected(self):
        path = write_document(self.dir / "empty.json", {"schema_version": "1.0", "pairs": []})
        with self.assertRaises(SchemaError):
            load_fiducials(path)
