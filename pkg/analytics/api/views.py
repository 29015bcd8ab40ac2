from drf_spectacular.utils import extend_schema
from rest_framework.exceptions import ValidationError
from rest_framework.response import Response
from rest_framework.views import APIView

from biopsy.models import BiopsySession
from core.exceptions import TrusmapError

from ..export import learning_curve_to_document, report_to_document
from ..stats import learning_curve, session_report
from .serializers import LearningCurveQuerySerializer, LearningCurveSerializer, ReportQuerySerializer, ReportSerializer


def stored_sessions():
    """Сохранённые сессии в хронологическом порядке."""
    queryset = BiopsySession.objects.prefetch_related("biopsies").order_by("chronological_rank")
    return [session.to_mapped_session() for session in queryset]


class ReportView(APIView):
    """
    Сводная таблица точности прицеливания по всем сохранённым сессиям.

    Usage:
        GET /api/analytics/report/?min_len=1.0
    """

    @extend_schema(parameters=[ReportQuerySerializer], responses=ReportSerializer)
    def get(self, request):
        query = ReportQuerySerializer(data=request.query_params)
        query.is_valid(raise_exception=True)
        try:
            report = session_report(stored_sessions(), query.validated_data["min_len"])
            return Response(report_to_document(report))
        except TrusmapError as exc:
            raise ValidationError({"detail": str(exc)}) from exc


class LearningCurveView(APIView):
    """
    Кривая обучения по сохранённым сессиям.

    Сессии упорядочены по порядковому номеру пациента; без split серия
    делится пополам (первая половина - меньшая при нечётном числе).

    Usage:
        GET /api/analytics/learning-curve/?split=16&min_len=1.0&yates=false
    """

    @extend_schema(parameters=[LearningCurveQuerySerializer], responses=LearningCurveSerializer)
    def get(self, request):
        query = LearningCurveQuerySerializer(data=request.query_params)
        query.is_valid(raise_exception=True)
        params = query.validated_data
        sessions = stored_sessions()
        split = params.get("split", len(sessions) // 2)
        try:
            result = learning_curve(sessions, split, params["min_len"], yates=params["yates"])
        except TrusmapError as exc:
            raise ValidationError({"detail": str(exc)}) from exc
        return Response(learning_curve_to_document(result, params["min_len"]))
