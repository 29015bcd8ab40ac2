from rest_framework import serializers

from core.api.serializers import TransformDocumentSerializer, VersionedDocumentSerializer
from core.documents import read_document
from core.exceptions import SchemaError
from core.transform import from_document

from ..config import RegistrationConfig
from ..engine import RegistrationResult


class RegistrationConfigSerializer(serializers.Serializer):
    """
    Схема файла --config для команды register.

    Все поля необязательны: отсутствующие берутся из
    settings.TRUSMAP['REGISTRATION'] и встроенных умолчаний.

    Validation:
        - допуски и диапазоны строго положительны
        - success_min_score лежит в [-1, 1]
        - неизвестные ключи отклоняются
    """
    n_levels = serializers.IntegerField(min_value=1, max_value=6, required=False)
    sampling_step = serializers.ListField(
        child=serializers.IntegerField(min_value=1), min_length=1, required=False,
    )
    coarse_search = serializers.BooleanField(required=False)
    coarse_range_mm = serializers.FloatField(min_value=1e-9, required=False)
    coarse_step_mm = serializers.FloatField(min_value=1e-9, required=False)
    param_tolerance = serializers.FloatField(min_value=1e-12, required=False)
    function_tolerance = serializers.FloatField(min_value=1e-15, required=False)
    max_iterations = serializers.IntegerField(min_value=1, required=False)
    success_min_score = serializers.FloatField(min_value=-1.0, max_value=1.0, required=False)
    success_max_translation = serializers.FloatField(min_value=1e-9, required=False)
    success_max_rotation = serializers.FloatField(min_value=1e-9, required=False)
    angle_scale = serializers.FloatField(min_value=1e-9, required=False)
    speckle_smoothing_mm = serializers.FloatField(min_value=0.0, required=False)

    def validate(self, attrs):
        unknown = set(self.initial_data) - set(self.fields) - {"schema_version"}
        if unknown:
            raise serializers.ValidationError(
                f"Неизвестные параметры регистрации: {', '.join(sorted(unknown))}"
            )
        return attrs

    def to_config(self, **extra):
        """RegistrationConfig из провалидированных данных поверх умолчаний."""
        overrides = dict(self.validated_data)
        overrides.update(extra)
        return RegistrationConfig.from_settings(**overrides)


class RegistrationMetricsSerializer(VersionedDocumentSerializer):
    """
    Схема строки метрик регистрации (--metrics).

    Fields:
        score (float): Корреляция, [-1, 1]
        success (bool): Признак успеха
        elapsed_seconds (float): Время регистрации (только в --metrics)
        iterations (int): Итерации оптимизатора
        overlap_fraction (float): Доля перекрытия, [0, 1]
        volume_id (str): Имя файла подвижного объёма
    """
    score = serializers.FloatField(min_value=-1.0, max_value=1.0)
    success = serializers.BooleanField()
    elapsed_seconds = serializers.FloatField(min_value=0.0, required=False)
    iterations = serializers.IntegerField(min_value=0)
    overlap_fraction = serializers.FloatField(min_value=0.0, max_value=1.0)
    volume_id = serializers.CharField(required=False)


class RegisteredTransformSerializer(TransformDocumentSerializer):
    """
    Файл результата команды register: преобразование и метрики регистрации.

    Fields:
        registration (RegistrationMetricsSerializer): Необязательный блок
            с корреляцией и признаком успеха; без него преобразование
            считается успешным (например, заданным вручную)
    """
    registration = RegistrationMetricsSerializer(required=False)


def load_registration_config(path=None, workers=1):
    """
    RegistrationConfig из JSON-файла --config поверх умолчаний.

    Args:
        path (str | None): Путь к файлу; None - только умолчания из settings
        workers (int): Число потоков вычисления метрики

    Raises:
        SchemaError: Файл не соответствует RegistrationConfigSerializer
    """
    payload = read_document(path) if path else {}
    serializer = RegistrationConfigSerializer(data=payload)
    if not serializer.is_valid():
        raise SchemaError(f"{path}: некорректные параметры регистрации: {serializer.errors}", serializer.errors)
    return serializer.to_config(workers=workers)


def load_registration_result(path):
    """
    RegistrationResult из файла команды register.

    Файл без блока "registration" считается успешным преобразованием
    с неизвестной корреляцией.

    Raises:
        FormatError, SchemaError: Некорректный файл
    """
    data = read_document(path, RegisteredTransformSerializer)
    block = data.get("registration") or {}
    return RegistrationResult(
        transform=from_document(data),
        score=block.get("score"),
        success=block.get("success", True),
        iterations=block.get("iterations", 0),
        overlap_fraction=block.get("overlap_fraction", 1.0),
        elapsed_seconds=block.get("elapsed_seconds", 0.0),
        volume_id=block.get("volume_id"),
    )
