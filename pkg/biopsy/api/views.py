from drf_spectacular.utils import OpenApiParameter, extend_schema
from rest_framework import status
from rest_framework.decorators import action
from rest_framework.exceptions import ValidationError
from rest_framework.response import Response
from rest_framework.viewsets import ModelViewSet, ReadOnlyModelViewSet

from analytics.api.serializers import ReportQuerySerializer, ReportSerializer
from analytics.export import report_to_document
from analytics.stats import per_target_stats
from core.exceptions import TrusmapError

from ..models import Biopsy, BiopsySession
from .filters import BiopsyFilter, BiopsySessionFilter
from .serializers import BiopsySerializer, BiopsySessionSerializer, MappedSessionDocumentSerializer


class BiopsySessionViewSet(ModelViewSet):
    """
    ViewSet сохранённых сессий биопсий.

    Сессия создаётся из документа перенесённой сессии (выход команды map)
    и после этого не изменяется: доступны просмотр, импорт и удаление.

    Endpoints:
        - GET /api/sessions/ - список сессий с фильтрацией
        - POST /api/sessions/ - импорт перенесённой сессии (требует аутентификации)
        - POST /api/sessions/import/ - то же
        - GET /api/sessions/{id}/ - детали сессии
        - DELETE /api/sessions/{id}/ - удаление сессии с биопсиями
        - GET /api/sessions/{id}/report/?min_len=1.0 - таблица точности по сессии

    Filters:
        - patient_id: Точный идентификатор пациента
        - rank_min, rank_max: Диапазон порядковых номеров
    """
    queryset = BiopsySession.objects.prefetch_related("biopsies").all()
    filterset_class = BiopsySessionFilter
    http_method_names = ["get", "post", "delete", "head", "options"]

    def get_serializer_class(self):
        if self.action in ("create", "import_session"):
            return MappedSessionDocumentSerializer
        return BiopsySessionSerializer

    def get_serializer_context(self):
        context = super().get_serializer_context()
        context["check_unique_rank"] = True
        return context

    def create(self, request, *args, **kwargs):
        """
        Импорт перенесённой сессии.

        Returns:
            Response: Созданная сессия (201)
        """
        serializer = self.get_serializer(data=request.data)
        serializer.is_valid(raise_exception=True)
        try:
            # доменная проверка: сетка, метки и сегменты собираются без ошибок
            serializer.to_mapped_session()
        except TrusmapError as exc:
            raise ValidationError({"detail": str(exc)}) from exc
        session = serializer.save()
        return Response(BiopsySessionSerializer(session).data, status=status.HTTP_201_CREATED)

    @extend_schema(request=MappedSessionDocumentSerializer, responses=BiopsySessionSerializer)
    @action(detail=False, methods=["post"], url_path="import")
    def import_session(self, request):
        return self.create(request)

    @extend_schema(parameters=[ReportQuerySerializer], responses=ReportSerializer)
    @action(detail=True, methods=["get"])
    def report(self, request, pk=None):
        """
        Таблица точности прицеливания по одной сессии.

        Returns:
            Response: Документ отчёта; 400, если в сессии нет перенесённых биопсий
        """
        query = ReportQuerySerializer(data=request.query_params)
        query.is_valid(raise_exception=True)
        mapped_session = self.get_object().to_mapped_session()
        try:
            report = per_target_stats(
                mapped_session.mapped, mapped_session.session.grid, query.validated_data["min_len"],
            )
            return Response(report_to_document(report))
        except TrusmapError as exc:
            raise ValidationError({"detail": str(exc)}) from exc


@extend_schema(
    parameters=[
        OpenApiParameter(
            name='session_pk',
            type={'type': 'integer'},
            location=OpenApiParameter.PATH,
            description='Идентификатор сессии-родителя.',
        ),
    ]
)
class BiopsyViewSet(ReadOnlyModelViewSet):
    """
    Биопсии сессии (вложенный ресурс, только чтение).

    Endpoints:
        - GET /api/sessions/{session_id}/biopsies/
        - GET /api/sessions/{session_id}/biopsies/{id}/

    Filters:
        - intended_target: Код цели ("AL-L")
        - registration_success: true / false
    """
    serializer_class = BiopsySerializer
    filterset_class = BiopsyFilter

    def get_queryset(self):
        return (
            Biopsy.objects
            .select_related("session")
            .filter(session=self.kwargs["session_pk"])
        )
