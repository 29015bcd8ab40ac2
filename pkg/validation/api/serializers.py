from rest_framework import serializers

from core.api.serializers import TripleField, VersionedDocumentSerializer
from core.documents import read_document

from ..tre import FiducialPair


class FiducialPairSerializer(serializers.Serializer):
    """
    Пара фидуциалов.

    Fields:
        id (str): Идентификатор ("f1")
        ref_mm (list): Положение в опорном объёме, мм (LPS)
        mov_mm (list): Положение в подвижном объёме, мм (LPS)
    """
    id = serializers.CharField(max_length=64)
    ref_mm = TripleField()
    mov_mm = TripleField()


class FiducialDocumentSerializer(VersionedDocumentSerializer):
    """
    Схема файла фидуциалов: {"schema_version", "pairs": [...]}.

    Validation:
        - хотя бы одна пара
        - идентификаторы уникальны
    """
    pairs = FiducialPairSerializer(many=True, allow_empty=False)

    def validate_pairs(self, value):
        ids = [pair["id"] for pair in value]
        if len(set(ids)) != len(ids):
            raise serializers.ValidationError("Идентификаторы фидуциалов повторяются")
        return value


def fiducials_to_document(pairs):
    return {
        "schema_version": FiducialDocumentSerializer.SCHEMA_VERSION,
        "pairs": [
            {"id": pair.id, "ref_mm": pair.p_ref.tolist(), "mov_mm": pair.p_mov.tolist()}
            for pair in pairs
        ],
    }


def load_fiducials(path):
    """
    Пары фидуциалов из файла.

    Raises:
        FormatError, SchemaError: Некорректный файл
    """
    data = read_document(path, FiducialDocumentSerializer)
    return [FiducialPair(id=pair["id"], p_ref=pair["ref_mm"], p_mov=pair["mov_mm"]) for pair in data["pairs"]]


def tre_to_document(summary):
    """JSON результата проверки; среднее - по всем парам набора."""
    return {
        "schema_version": "1.0",
        "aggregation": "pooled",
        "n": summary.n,
        "mean_mm": summary.mean,
        "max_mm": summary.max,
        "pairs": [{"id": pair_id, "distance_mm": distance} for pair_id, distance in summary.per_pair],
    }
