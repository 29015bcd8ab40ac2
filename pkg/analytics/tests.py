import csv
import io
import math
import tempfile
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase
from rest_framework import status
from rest_framework.test import APITestCase

from biopsy.api.serializers import MappedSessionDocumentSerializer, mapped_session_to_document
from biopsy.mapping import BiopsyRecord, MappedBiopsy, MappedSession, NeedleSegment, Session
from biopsy.sectors import ANALYSIS_LABELS, RAW_LABELS, TargetLabel, build_grid
from core.documents import read_document, write_document
from core.exceptions import EXIT_INVALID_INPUT, EXIT_IO, InvalidInputError

from .export import TOTALS_LABEL, check_consistency, report_to_csv, report_to_document
from .stats import (
    Report, TargetStats, aggregate, chi2_2x2, chi2_sf_df1, learning_curve, per_target_stats, session_report,
)

GRID = build_grid([[0.0, 40.0], [0.0, 30.0], [0.0, 30.0]])

# Число биопсий и попаданий по строкам таблицы точности (порядок ANALYSIS_LABELS)
TABLE_ONE = (
    (33, 23), (31, 17), (31, 20), (32, 21), (32, 26),
    (30, 23), (32, 32), (31, 28), (60, 31), (59, 27),
)

# Половины серии: (биопсий, попаданий) - 59.7% и 72.2%
FIRST_HALF = ((80, 48), (79, 47))
SECOND_HALF = ((106, 77), (106, 76))


def planned_biopsy(index, target, hit, success=True):
    """
    Перенесённая биопсия длиной 20 мм вдоль оси y.

    Попадание проходит через центр цели целиком, промах - через
    зеркальный сектор другой стороны.
    """
    label = TargetLabel.parse(target)
    center = GRID.center(label if hit else label.mirrored())
    entry, tip = center + (0.0, 10.0, 0.0), center - (0.0, 10.0, 0.0)
    record = BiopsyRecord(
        index=index,
        intended_target=label,
        needle=NeedleSegment(entry=entry, tip=tip, volume_id=f"moving_{index:03d}.mha"),
    )
    if not success:
        return MappedBiopsy(record=record, registration_success=False, score=0.2)
    return MappedBiopsy(
        record=record,
        segment_ref=NeedleSegment(entry=entry, tip=tip, volume_id="reference.mha"),
        registration_success=True,
        score=0.9,
    )


def mapped_session(biopsies, rank=1):
    session = Session(
        patient_id=f"P-{rank:03d}",
        reference_volume_id="reference.mha",
        records=tuple(biopsy.record for biopsy in biopsies),
        chronological_rank=rank,
        grid=GRID,
    )
    return MappedSession(session=session, biopsies=tuple(biopsies))


def table_one_biopsies():
    """Биопсии, воспроизводящие таблицу точности построчно; apex-цели чередуют AL и AS."""
    biopsies = []
    for label, (n, hits) in zip(ANALYSIS_LABELS, TABLE_ONE):
        for k in range(n):
            target = label.constituents()[k % len(label.constituents())]
            biopsies.append(planned_biopsy(len(biopsies) + 1, target.code, hit=k < hits))
    return biopsies


def counted_session(rank, n, hits):
    biopsies = [
        planned_biopsy(k + 1, RAW_LABELS[k % len(RAW_LABELS)].code, hit=k < hits)
        for k in range(n)
    ]
    return mapped_session(biopsies, rank=rank)


def learning_curve_series():
    halves = FIRST_HALF + SECOND_HALF
    return [counted_session(rank, n, hits) for rank, (n, hits) in enumerate(halves, start=1)]


class PerTargetStatsTests(SimpleTestCase):
    def test_single_hit(self):
        report = per_target_stats([planned_biopsy(1, "MS-R", hit=True)], GRID)
        row = report.row("MS-R")
        self.assertEqual((row.n_biopsies, row.n_hits, row.hit_pct), (1, 1, 100.0))
        self.assertAlmostEqual(row.mean_inner_length, 20.0)
        self.assertEqual(report.row("BL-R").n_biopsies, 0)
        self.assertIsNone(report.row("BL-R").hit_pct)

    def test_single_miss(self):
        row = per_target_stats([planned_biopsy(1, "BL-L", hit=False)], GRID).row("BL-L")
        self.assertEqual((row.n_biopsies, row.n_hits, row.hit_pct, row.mean_inner_length), (1, 0, 0.0, 0.0))
        self.assertIsNone(row.mean_hit_length)

    def test_apex_targets_are_fused(self):
        report = per_target_stats(
            [planned_biopsy(1, "AL-R", hit=True), planned_biopsy(2, "AS-R", hit=True)], GRID,
        )
        self.assertEqual(len(report.rows), 10)
        self.assertEqual(report.row("A-R").n_hits, 2)

    def test_unmapped_biopsies_excluded(self):
        report = per_target_stats(
            [planned_biopsy(1, "ML-L", hit=True), planned_biopsy(2, "ML-L", hit=True, success=False)], GRID,
        )
        self.assertEqual(report.row("ML-L").n_biopsies, 1)

    def test_threshold_changes_hits(self):
        biopsy = planned_biopsy(1, "MS-L", hit=True)
        self.assertEqual(per_target_stats([biopsy], GRID, min_len=20.5).row("MS-L").n_hits, 0)
        self.assertEqual(per_target_stats([biopsy], GRID, min_len=0.0).row("MS-L").n_hits, 1)
        with self.assertRaises(InvalidInputError):
            per_target_stats([biopsy], GRID, min_len=-0.5)

    def test_each_biopsy_counted_once(self):
        biopsies = [planned_biopsy(i + 1, label.code, hit=i % 3 != 0) for i, label in enumerate(RAW_LABELS)]
        report = per_target_stats(biopsies, GRID)
        self.assertEqual(sum(row.n_biopsies for row in report.rows), 12)


class TableOneTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.report = per_target_stats(table_one_biopsies(), GRID, min_len=1.0)

    def test_rows_match(self):
        for label, (n, hits) in zip(ANALYSIS_LABELS, TABLE_ONE):
            row = self.report.row(label)
            self.assertEqual((row.n_biopsies, row.n_hits), (n, hits), msg=label.code)
        self.assertEqual(self.report.row("MS-L").n_hits, 28)

    def test_totals(self):
        totals = aggregate(self.report)
        self.assertEqual((totals.n, totals.hits), (371, 248))
        self.assertAlmostEqual(totals.pct, 66.846, places=2)
        self.assertAlmostEqual(totals.mean_inner_length, 20.0 * 248 / 371)
        self.assertAlmostEqual(totals.mean_hit_length, 20.0)

    def test_session_order_does_not_matter(self):
        biopsies = table_one_biopsies()
        split = [mapped_session(biopsies[:200], rank=1), mapped_session(biopsies[200:], rank=2)]
        reversed_split = list(reversed(split))
        self.assertEqual(aggregate(session_report(split)), aggregate(session_report(reversed_split)))

    def test_csv(self):
        text = report_to_csv(self.report)
        lines = text.splitlines()
        self.assertTrue(lines[0].startswith("# mean_len_all_mm"))
        rows = list(csv.reader(lines[1:]))
        self.assertEqual(rows[0], ["target", "side", "n", "hits", "hit_pct", "mean_len_all_mm", "mean_len_hits_mm"])
        self.assertEqual(rows[1], ["BL", "R", "33", "23", "69.7", f"{20.0 * 23 / 33:.2f}", "20.00"])
        self.assertEqual(rows[8], ["MS", "L", "31", "28", "90.3", f"{20.0 * 28 / 31:.2f}", "20.00"])
        self.assertEqual(rows[10][:2], ["A", "L"])
        self.assertEqual(lines[-1], f"{TOTALS_LABEL},,371,248,66.8,13.37,20.00")

    def test_json(self):
        document = report_to_document(self.report)
        self.assertEqual(document["totals"]["n"], 371)
        self.assertEqual(document["rows"][8]["code"], "A-R")
        self.assertEqual(document["rows"][8]["target"], "A")
        self.assertEqual(document["min_len_mm"], 1.0)

    def test_empty_report(self):
        with self.assertRaises(InvalidInputError):
            aggregate(per_target_stats([], GRID))

    def test_single_row_report(self):
        row = TargetStats(label=ANALYSIS_LABELS[0], n_biopsies=4, n_hits=3, inner_length_sum=50.0, hit_length_sum=48.0)
        totals = aggregate(Report(rows=(row,)))
        self.assertEqual((totals.n, totals.hits, totals.pct), (4, 3, 75.0))
        self.assertEqual((totals.mean_inner_length, totals.mean_hit_length), (12.5, 16.0))

    def test_inconsistent_row(self):
        with self.assertRaises(InvalidInputError):
            TargetStats(label=ANALYSIS_LABELS[0], n_biopsies=2, n_hits=3)

    def test_report_counts_mapped_biopsies(self):
        biopsies = table_one_biopsies()
        biopsies.append(planned_biopsy(len(biopsies) + 1, RAW_LABELS[0].code, hit=True, success=False))
        report = session_report([mapped_session(biopsies)])
        self.assertEqual(report.n_mapped, 371)
        self.assertEqual(check_consistency(report).n, 371)

    def test_rows_disagree_with_mapped_count(self):
        row = TargetStats(label=ANALYSIS_LABELS[0], n_biopsies=4, n_hits=3, inner_length_sum=50.0, hit_length_sum=48.0)
        with self.assertRaises(InvalidInputError):
            report_to_csv(Report(rows=(row,), n_mapped=5))
        self.assertEqual(check_consistency(Report(rows=(row,), n_mapped=4)).n, 4)

    def test_hit_lengths_exceed_all_lengths(self):
        row = TargetStats(label=ANALYSIS_LABELS[0], n_biopsies=4, n_hits=3, inner_length_sum=40.0, hit_length_sum=48.0)
        with self.assertRaises(InvalidInputError):
            report_to_document(Report(rows=(row,)))

    def test_hit_mean_below_threshold(self):
        row = TargetStats(label=ANALYSIS_LABELS[0], n_biopsies=2, n_hits=2, inner_length_sum=1.0, hit_length_sum=1.0)
        with self.assertRaises(InvalidInputError):
            check_consistency(Report(rows=(row,), min_len=1.0))


class ChiSquareTests(SimpleTestCase):
    def test_independence(self):
        self.assertEqual(chi2_2x2(10, 10, 10, 10), 0.0)

    def test_hand_value(self):
        self.assertAlmostEqual(chi2_2x2(20, 10, 10, 20), 6.667, delta=1e-3)

    def test_yates(self):
        # N (|ad - bc| - N/2)^2 / (30 * 30 * 30 * 30) = 60 * 270^2 / 810000
        self.assertAlmostEqual(chi2_2x2(20, 10, 10, 20, yates=True), 5.4, places=9)
        self.assertLess(chi2_2x2(95, 64, 153, 59, yates=True), chi2_2x2(95, 64, 153, 59))

    def test_symmetry(self):
        self.assertEqual(chi2_2x2(95, 64, 153, 59), chi2_2x2(153, 59, 95, 64))
        self.assertEqual(chi2_2x2(95, 64, 153, 59), chi2_2x2(95, 153, 64, 59))

    def test_invalid_tables(self):
        for cells in ((0, 0, 5, 5), (5, 0, 5, 0), (-1, 2, 3, 4), (1.5, 2, 3, 4)):
            with self.subTest(cells=cells), self.assertRaises(InvalidInputError):
                chi2_2x2(*cells)

    def test_survival_function(self):
        self.assertEqual(chi2_sf_df1(0.0), 1.0)
        self.assertAlmostEqual(chi2_sf_df1(5.89), 0.01523, delta=1e-4)
        self.assertAlmostEqual(chi2_sf_df1(3.841), 0.0500, delta=2e-4)
        with self.assertRaises(InvalidInputError):
            chi2_sf_df1(-1.0)

    def test_survival_is_decreasing(self):
        values = [chi2_sf_df1(x) for x in np.linspace(0.0, 20.0, 41)]
        self.assertTrue(all(a > b for a, b in zip(values, values[1:])))
        self.assertTrue(all(0.0 < v <= 1.0 for v in values))


class LearningCurveTests(SimpleTestCase):
    def test_series_split(self):
        result = learning_curve(learning_curve_series(), split_index=2)
        self.assertEqual(result.first, (159, 95))
        self.assertEqual(result.second, (212, 153))
        self.assertAlmostEqual(result.rate_first, 0.597, places=3)
        self.assertAlmostEqual(result.rate_second, 0.722, places=3)
        self.assertGreaterEqual(result.chi2, 5.4)
        self.assertLessEqual(result.chi2, 6.4)
        self.assertLess(result.p_value, 0.02)
        self.assertAlmostEqual(result.p_value, chi2_sf_df1(result.chi2))

    def test_identical_halves(self):
        sessions = [counted_session(1, 12, 8), counted_session(2, 12, 8)]
        result = learning_curve(sessions, split_index=1)
        self.assertEqual(result.chi2, 0.0)
        self.assertEqual(result.p_value, 1.0)

    def test_swapped_halves(self):
        first, second = counted_session(1, 24, 10), counted_session(2, 24, 20)
        forward = learning_curve([first, second], split_index=1)
        backward = learning_curve([second, first], split_index=1)
        self.assertEqual((forward.chi2, forward.p_value), (backward.chi2, backward.p_value))

    def test_invalid_split(self):
        sessions = learning_curve_series()
        for split in (0, 4, -1):
            with self.subTest(split=split), self.assertRaises(InvalidInputError):
                learning_curve(sessions, split)

    def test_all_hits_has_zero_marginal(self):
        with self.assertRaises(InvalidInputError):
            learning_curve([counted_session(1, 12, 12), counted_session(2, 12, 12)], split_index=1)


class ReportCommandTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write_session(self, name, session):
        return write_document(self.dir / name, mapped_session_to_document(session))

    def test_table_one_report(self):
        path = self.write_session("mapped.json", mapped_session(table_one_biopsies()))
        out = self.dir / "out" / "report.csv"
        json_out = self.dir / "report.json"
        call_command("report", mapped=[str(path)], out=str(out), json=str(json_out))

        lines = out.read_text(encoding="utf-8").splitlines()
        self.assertEqual(len(lines), 13)
        self.assertTrue(lines[-1].startswith("Sum/Average,,371,248,66.8,"))
        self.assertEqual(read_document(json_out)["totals"]["hits"], 248)

    def test_report_is_deterministic(self):
        path = self.write_session("mapped.json", counted_session(1, 30, 20))
        first, second = self.dir / "a.csv", self.dir / "b.csv"
        call_command("report", mapped=[str(path)], out=str(first), min_len=2.0)
        call_command("report", mapped=[str(path)], out=str(second), min_len=2.0)
        self.assertEqual(first.read_bytes(), second.read_bytes())
        self.assertIn("min_len_mm=2", first.read_text(encoding="utf-8"))

    def test_learning_curve_command(self):
        names = []
        # список намеренно не в хронологическом порядке
        for session in reversed(learning_curve_series()):
            name = f"mapped_{session.session.chronological_rank:02d}.json"
            self.write_session(name, session)
            names.append(name)
        listing = self.dir / "sessions.txt"
        listing.write_text("# серия\n\n" + "\n".join(names) + "\n", encoding="utf-8")
        out = self.dir / "lc.json"

        call_command("learning_curve", mapped_list=str(listing), split=2, out=str(out))

        document = read_document(out)
        self.assertEqual(document["first"]["n"], 159)
        self.assertEqual(document["second"]["hits"], 153)
        self.assertLess(document["p_value"], 0.02)
        self.assertFalse(document["yates"])
        self.assertEqual(document["min_len_mm"], 1.0)

    def test_learning_curve_duplicate_rank(self):
        path = self.write_session("mapped.json", counted_session(1, 12, 6))
        listing = self.dir / "sessions.txt"
        listing.write_text(f"{path.name}\n{path.name}\n", encoding="utf-8")
        with self.assertRaises(CommandError) as ctx:
            call_command("learning_curve", mapped_list=str(listing), split=1, out=str(self.dir / "lc.json"))
        self.assertEqual(ctx.exception.returncode, EXIT_INVALID_INPUT)

    def test_list_not_utf8(self):
        listing = self.dir / "sessions.txt"
        listing.write_bytes(b"mapped_\xff\xfe.json\n")
        with self.assertRaises(CommandError) as ctx:
            call_command("learning_curve", mapped_list=str(listing), split=1, out=str(self.dir / "lc.json"))
        self.assertEqual(ctx.exception.returncode, EXIT_IO)

    def test_mapped_not_utf8(self):
        path = self.dir / "mapped.json"
        path.write_bytes(b'{"patient_id": "\xff\xfe"}')
        with self.assertRaises(CommandError) as ctx:
            call_command("report", mapped=[str(path)], out=str(self.dir / "report.csv"))
        self.assertEqual(ctx.exception.returncode, EXIT_IO)


class AnalyticsApiTests(APITestCase):
    def setUp(self):
        for session in learning_curve_series():
            serializer = MappedSessionDocumentSerializer(data=mapped_session_to_document(session))
            serializer.is_valid(raise_exception=True)
            serializer.save()

    def test_report(self):
        response = self.client.get("/api/analytics/report/")
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(response.data["totals"]["n"], 371)
        self.assertEqual(response.data["totals"]["hits"], 248)
        self.assertEqual(response.data["min_len_mm"], 1.0)

    def test_report_rejects_negative_threshold(self):
        response = self.client.get("/api/analytics/report/", {"min_len": -1})
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)

    def test_learning_curve(self):
        response = self.client.get("/api/analytics/learning-curve/", {"split": 2})
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(response.data["first"]["n"], 159)
        self.assertTrue(math.isclose(response.data["chi2"], chi2_2x2(95, 64, 153, 59)))

    def test_learning_curve_default_split(self):
        response = self.client.get("/api/analytics/learning-curve/", {"yates": "true"})
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(response.data["split_index"], 2)
        self.assertTrue(response.data["yates"])

    def test_learning_curve_invalid_split(self):
        response = self.client.get("/api/analytics/learning-curve/", {"split": 4})
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)


class ReportStreamTests(SimpleTestCase):
    def test_csv_parses_with_csv_module(self):
        report = per_target_stats([planned_biopsy(1, "BL-R", hit=True)], GRID)
        reader = csv.DictReader(io.StringIO(report_to_csv(report).split("\n", 1)[1]))
        rows = list(reader)
        self.assertEqual(len(rows), 11)
        self.assertEqual(rows[1]["hit_pct"], "")
