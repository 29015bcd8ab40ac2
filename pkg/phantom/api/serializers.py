from rest_framework import serializers

from core.api.serializers import TripleField, VersionedDocumentSerializer
from core.documents import read_document
from core.exceptions import SchemaError
from core.transform import to_document
from validation.api.serializers import fiducials_to_document
from validation.tre import FiducialPair

from ..generator import SEED_LIMIT, PhantomConfig


class PositiveTripleField(TripleField):
    def to_internal_value(self, data):
        values = super().to_internal_value(data)
        if min(values) <= 0:
            raise serializers.ValidationError("Значения должны быть положительными")
        return values


class PhantomConfigSerializer(serializers.Serializer):
    """
    Схема файла --config команды phantom gen.

    Все поля необязательны; отсутствующие берутся из PhantomConfig.
    Инварианты, связывающие поля (эллипсоид помещается в объём),
    проверяет сам PhantomConfig.
    """
    dims = serializers.ListField(
        child=serializers.IntegerField(min_value=2), min_length=3, max_length=3, required=False,
    )
    spacing = PositiveTripleField(required=False)
    semi_axes = PositiveTripleField(required=False)
    prostate_mean = serializers.FloatField(min_value=0.0, max_value=255.0, required=False)
    background_mean = serializers.FloatField(min_value=0.0, max_value=255.0, required=False)
    speckle_sigma = serializers.FloatField(min_value=0.0, required=False)
    n_fiducials = serializers.IntegerField(min_value=3, required=False)
    fiducial_radius = serializers.FloatField(min_value=1e-6, required=False)
    fiducial_intensity = serializers.FloatField(min_value=0.0, max_value=255.0, required=False)
    tissue_texture = serializers.FloatField(min_value=0.0, required=False)
    texture_scale_mm = serializers.FloatField(min_value=1e-6, required=False)
    boundary_ramp_mm = serializers.FloatField(min_value=1e-6, required=False)
    core_length_mm = serializers.FloatField(min_value=1e-6, required=False)
    seed = serializers.IntegerField(min_value=0, max_value=SEED_LIMIT - 1, required=False)

    def validate(self, attrs):
        unknown = set(self.initial_data) - set(self.fields) - {"schema_version"}
        if unknown:
            raise serializers.ValidationError(f"Неизвестные параметры фантома: {', '.join(sorted(unknown))}")
        return attrs

    def to_config(self, **extra):
        overrides = dict(self.validated_data)
        overrides.update({key: value for key, value in extra.items() if value is not None})
        return PhantomConfig().with_overrides(**overrides)


def load_phantom_config(path=None, **extra):
    """
    PhantomConfig из файла поверх умолчаний; extra (не None) имеют приоритет.

    Raises:
        SchemaError: Файл не соответствует PhantomConfigSerializer
        InvalidInputError: Нарушены инварианты конфигурации
    """
    payload = read_document(path) if path else {}
    serializer = PhantomConfigSerializer(data=payload)
    if not serializer.is_valid():
        raise SchemaError(f"{path}: некорректные параметры фантома: {serializer.errors}", serializer.errors)
    return serializer.to_config(**extra)


def truth_pairs(truth):
    """Пары фидуциалов эталона."""
    return [
        FiducialPair(id=fiducial_id, p_ref=p_ref, p_mov=p_mov)
        for fiducial_id, p_ref, p_mov in zip(truth.fiducial_ids, truth.fiducials_ref, truth.fiducials_mov)
    ]


def truth_to_document(truth, volume):
    """Эталон одного подвижного объёма: преобразование и фидуциалы."""
    return {
        "volume": volume,
        "transform": to_document(truth.transform),
        "fiducials": fiducials_to_document(truth_pairs(truth))["pairs"],
    }


def ground_truth_document(cfg, fiducials_ref, volumes=()):
    """
    Содержимое ground_truth.json.

    Args:
        cfg (PhantomConfig): Параметры фантома (эхо конфигурации)
        fiducials_ref (ndarray): Фидуциалы опорного объёма
        volumes (iterable): Пары (имя объёма, GroundTruth)
    """
    return {
        "schema_version": VersionedDocumentSerializer.SCHEMA_VERSION,
        "config": cfg.to_document(),
        "reference": {
            "volume": "reference.mha",
            "fiducials_mm": [[float(v) for v in point] for point in fiducials_ref],
        },
        "volumes": [truth_to_document(truth, name) for name, truth in volumes],
    }
