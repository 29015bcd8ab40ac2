from django_filters import rest_framework as filters

from ..models import TARGET_CHOICES, Biopsy, BiopsySession


class BiopsySessionFilter(filters.FilterSet):
    """
    Фильтр сохранённых сессий.

    Filters:
        patient_id (CharField): Точный идентификатор пациента
        rank_min, rank_max (NumberFilter): Диапазон порядковых номеров пациентов

    Usage:
        GET /api/sessions/?rank_min=1&rank_max=16
    """
    patient_id = filters.CharFilter(help_text="Идентификатор пациента")
    rank_min = filters.NumberFilter(
        field_name="chronological_rank",
        lookup_expr="gte",
        help_text="Минимальный порядковый номер пациента",
    )
    rank_max = filters.NumberFilter(
        field_name="chronological_rank",
        lookup_expr="lte",
        help_text="Максимальный порядковый номер пациента",
    )

    class Meta:
        model = BiopsySession
        fields = ["patient_id", "rank_min", "rank_max"]


class BiopsyFilter(filters.FilterSet):
    """
    Фильтр биопсий сессии.

    Usage:
        GET /api/sessions/3/biopsies/?intended_target=AL-L
        GET /api/sessions/3/biopsies/?registration_success=false
    """
    intended_target = filters.ChoiceFilter(choices=TARGET_CHOICES, help_text="Код цели")
    registration_success = filters.BooleanFilter(help_text="Успех регистрации")

    class Meta:
        model = Biopsy
        fields = ["intended_target", "registration_success"]
