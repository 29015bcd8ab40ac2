from django.conf import settings
from rest_framework import serializers

from core.api.serializers import VersionedDocumentSerializer

from ..stats import MEAN_LENGTH_NOTE


class TargetStatsSerializer(serializers.Serializer):
    """
    Строка отчёта.

    Fields:
        code (str): Код цели ("BL-R", "A-L")
        target (str): Ряд и столбец ("BL", "MS", "A")
        side (str): "L" или "R"
        n (int): Число биопсий
        hits (int): Число попаданий
        hit_pct (float | None): Процент попаданий
        mean_len_all_mm (float | None): Средняя длина внутри цели по всем биопсиям
        mean_len_hits_mm (float | None): Средняя длина внутри цели по попаданиям
    """
    code = serializers.CharField(source="label.code")
    target = serializers.SerializerMethodField()
    side = serializers.SerializerMethodField()
    n = serializers.IntegerField(source="n_biopsies")
    hits = serializers.IntegerField(source="n_hits")
    hit_pct = serializers.FloatField(allow_null=True)
    mean_len_all_mm = serializers.FloatField(source="mean_inner_length", allow_null=True)
    mean_len_hits_mm = serializers.FloatField(source="mean_hit_length", allow_null=True)

    def get_target(self, obj):
        return obj.label.code.split("-")[0]

    def get_side(self, obj):
        return obj.label.side.value


class TotalsSerializer(serializers.Serializer):
    n = serializers.IntegerField()
    hits = serializers.IntegerField()
    hit_pct = serializers.FloatField(source="pct")
    mean_len_all_mm = serializers.FloatField(source="mean_inner_length")
    mean_len_hits_mm = serializers.FloatField(source="mean_hit_length", allow_null=True)


class ReportSerializer(VersionedDocumentSerializer):
    """
    Схема JSON отчёта точности прицеливания.

    Fields:
        min_len_mm (float): Порог попадания
        mean_len_all_note (str): Как усреднена длина mean_len_all_mm
        rows (list): 10 строк TargetStatsSerializer
        totals (TotalsSerializer): Итоговая строка
    """
    min_len_mm = serializers.FloatField(source="min_len")
    mean_len_all_note = serializers.SerializerMethodField()
    rows = TargetStatsSerializer(many=True)
    totals = TotalsSerializer()

    def get_mean_len_all_note(self, obj):
        return MEAN_LENGTH_NOTE


class LearningCurveSerializer(VersionedDocumentSerializer):
    """
    Схема JSON кривой обучения.

    Fields:
        split_index (int): Число сессий в первой половине
        first, second (dict): n, hits и доля попаданий (rate) половин
        chi2 (float): Статистика хи-квадрат
        p_value (float): Уровень значимости
        yates (bool): Поправка Йейтса
    """
    split_index = serializers.IntegerField(min_value=1)
    first = serializers.SerializerMethodField()
    second = serializers.SerializerMethodField()
    chi2 = serializers.FloatField(min_value=0.0)
    p_value = serializers.FloatField(min_value=0.0, max_value=1.0)
    yates = serializers.BooleanField()

    def _half(self, counts, rate):
        n, hits = counts
        return {"n": n, "hits": hits, "rate": rate}

    def get_first(self, obj):
        return self._half(obj.first, obj.rate_first)

    def get_second(self, obj):
        return self._half(obj.second, obj.rate_second)


def default_min_len():
    return settings.TRUSMAP_MIN_LEN_MM


class ReportQuerySerializer(serializers.Serializer):
    """Параметры запроса отчёта: ?min_len=1.0"""
    min_len = serializers.FloatField(min_value=0.0, default=default_min_len)


class LearningCurveQuerySerializer(ReportQuerySerializer):
    """Параметры запроса кривой обучения: ?split=16&min_len=1.0&yates=false"""
    split = serializers.IntegerField(min_value=1, required=False)
    yates = serializers.BooleanField(default=False)
