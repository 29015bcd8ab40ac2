import math

from rest_framework import serializers


class TripleField(serializers.ListField):
    """
    Тройка конечных чисел (координаты в мм, LPS).

    Используется во всех JSON-схемах: преобразования, сессии, фидуциалы.
    """
    child = serializers.FloatField()

    def __init__(self, **kwargs):
        kwargs.setdefault("min_length", 3)
        kwargs.setdefault("max_length", 3)
        super().__init__(**kwargs)

    def to_internal_value(self, data):
        values = super().to_internal_value(data)
        if not all(math.isfinite(v) for v in values):
            raise serializers.ValidationError("Координаты должны быть конечными числами")
        return values


class VersionedDocumentSerializer(serializers.Serializer):
    """
    Базовый сериализатор JSON-документов с обязательной версией схемы.

    Fields:
        schema_version (str): Версия схемы документа (например "1.0")
    """
    SCHEMA_VERSION = "1.0"

    schema_version = serializers.CharField(default=SCHEMA_VERSION)

    def validate_schema_version(self, value):
        if value.split(".")[0] != self.SCHEMA_VERSION.split(".")[0]:
            raise serializers.ValidationError(
                f"Неподдерживаемая версия схемы {value}, ожидается {self.SCHEMA_VERSION}"
            )
        return value


class TransformDocumentSerializer(VersionedDocumentSerializer):
    """
    Схема JSON жёсткого преобразования (подвижный -> опорный).

    Fields:
        translation_mm (list): Сдвиг, мм
        rotation_zyx_deg (list): Углы r_z, r_y, r_x в градусах
        center_mm (list): Центр поворота, мм

    Validation:
        - каждый угол по модулю не больше 180 градусов
    """
    translation_mm = TripleField()
    rotation_zyx_deg = TripleField()
    center_mm = TripleField(default=[0.0, 0.0, 0.0])

    def validate_rotation_zyx_deg(self, value):
        if any(abs(v) > 180.0 for v in value):
            raise serializers.ValidationError("Углы должны лежать в [-180, 180] градусов")
        return value
