import math

from django.db import transaction
from rest_framework import serializers

from core.api.serializers import TripleField, VersionedDocumentSerializer
from core.documents import read_document
from core.exceptions import InvalidInputError, SchemaError

from ..mapping import BiopsyRecord, MappedBiopsy, MappedSession, NeedleSegment, Session, volume_id_for
from ..models import Biopsy, BiopsySession
from ..sectors import ORIENTATION, TargetLabel, clip_length, fuse_apex, grid_from_document


class IntervalField(serializers.ListField):
    """Пара конечных чисел [min, max] с min < max, мм."""
    child = serializers.FloatField()

    def __init__(self, **kwargs):
        kwargs.setdefault("min_length", 2)
        kwargs.setdefault("max_length", 2)
        super().__init__(**kwargs)

    def to_internal_value(self, data):
        values = super().to_internal_value(data)
        if not all(math.isfinite(v) for v in values):
            raise serializers.ValidationError("Границы должны быть конечными числами")
        if values[0] >= values[1]:
            raise serializers.ValidationError("Нижняя граница должна быть меньше верхней")
        return values


class BoundingBoxSerializer(serializers.Serializer):
    x = IntervalField()
    y = IntervalField()
    z = IntervalField()


class SectorGridSerializer(serializers.Serializer):
    """
    Схема Grid JSON.

    Fields:
        bbox_mm (dict): {"x": [x0, x1], "y": [y0, y1], "z": [z0, z1]}, мм (LPS)
        orientation (str): Всегда "z_cranial_x_left": Base при большем z
    """
    bbox_mm = BoundingBoxSerializer()
    orientation = serializers.ChoiceField(choices=[ORIENTATION], default=ORIENTATION)


def validate_target_code(value):
    """Код одного из 12 секторов; возвращается в каноническом виде."""
    try:
        label = TargetLabel.parse(value)
    except InvalidInputError as exc:
        raise serializers.ValidationError(str(exc)) from exc
    if label.is_fused:
        raise serializers.ValidationError(f"{value}: ожидался один из 12 секторов, а не объединённая цель")
    return label.code


class BiopsyEntrySerializer(serializers.Serializer):
    """
    Биопсия в файле сессии.

    Fields:
        index (int): Хронологический номер, с 1
        intended_target (str): Код цели ("BL-R", "MS-L", "AL-L", ...)
        volume (str): Путь к объёму биопсии
        needle_entry_mm, needle_tip_mm (list): Сегмент иглы в системе объёма, мм
    """
    index = serializers.IntegerField(min_value=1)
    intended_target = serializers.CharField()
    volume = serializers.CharField()
    needle_entry_mm = TripleField()
    needle_tip_mm = TripleField()

    def validate_intended_target(self, value):
        return validate_target_code(value)

    def validate(self, attrs):
        if attrs["needle_entry_mm"] == attrs["needle_tip_mm"]:
            raise serializers.ValidationError("Сегмент иглы имеет нулевую длину")
        return attrs


class SessionFileSerializer(VersionedDocumentSerializer):
    """
    Схема файла сессии (вход команды map).

    Fields:
        patient_id (str): Идентификатор пациента
        chronological_rank (int): Порядковый номер пациента
        reference_volume (str): Путь к опорному объёму
        grid (SectorGridSerializer): Планировочная сетка
        biopsies (list): Биопсии, не менее одной

    Validation:
        - номера биопсий уникальны
    """
    biopsy_serializer_class = BiopsyEntrySerializer

    patient_id = serializers.CharField(max_length=64)
    chronological_rank = serializers.IntegerField(min_value=1)
    reference_volume = serializers.CharField()
    grid = SectorGridSerializer()

    def get_fields(self):
        fields = super().get_fields()
        fields["biopsies"] = self.biopsy_serializer_class(many=True, allow_empty=False)
        return fields

    def validate_biopsies(self, value):
        indices = [entry["index"] for entry in value]
        if len(set(indices)) != len(indices):
            raise serializers.ValidationError("Номера биопсий повторяются")
        return value

    def to_session(self):
        """
        Доменная сессия из провалидированных данных.

        Returns:
            Session
        """
        data = self.validated_data
        records = [
            BiopsyRecord(
                index=entry["index"],
                intended_target=TargetLabel.parse(entry["intended_target"]),
                needle=NeedleSegment(
                    entry=entry["needle_entry_mm"],
                    tip=entry["needle_tip_mm"],
                    volume_id=volume_id_for(entry["volume"]),
                ),
            )
            for entry in data["biopsies"]
        ]
        return Session(
            patient_id=data["patient_id"],
            reference_volume_id=volume_id_for(data["reference_volume"]),
            records=tuple(records),
            chronological_rank=data["chronological_rank"],
            grid=grid_from_document(data["grid"]),
        )


class MappedBiopsyEntrySerializer(BiopsyEntrySerializer):
    """
    Биопсия в файле перенесённой сессии (выход команды map).

    Fields:
        registration_success (bool): Успех регистрации
        score (float | None): Корреляция регистрации
        mapped_entry_mm, mapped_tip_mm (list | None): Сегмент в опорном объёме

    Validation:
        - при успехе оба конца сегмента заданы, при неуспехе - отсутствуют
    """
    registration_success = serializers.BooleanField()
    score = serializers.FloatField(min_value=-1.0, max_value=1.0, allow_null=True, required=False, default=None)
    mapped_entry_mm = TripleField(allow_null=True, required=False, default=None)
    mapped_tip_mm = TripleField(allow_null=True, required=False, default=None)

    def validate(self, attrs):
        attrs = super().validate(attrs)
        mapped = (attrs.get("mapped_entry_mm"), attrs.get("mapped_tip_mm"))
        if attrs["registration_success"] and None in mapped:
            raise serializers.ValidationError("Успешно перенесённая биопсия должна иметь сегмент")
        if not attrs["registration_success"] and mapped != (None, None):
            raise serializers.ValidationError("Биопсия с неуспешной регистрацией не может иметь сегмент")
        return attrs


class MappedSessionDocumentSerializer(SessionFileSerializer):
    """
    Схема перенесённой сессии: вход report, learning_curve и import_mapped.

    save() сохраняет сессию и биопсии в базу одной транзакцией.
    """
    biopsy_serializer_class = MappedBiopsyEntrySerializer

    def validate_chronological_rank(self, value):
        if self.context.get("check_unique_rank") and BiopsySession.objects.filter(chronological_rank=value).exists():
            raise serializers.ValidationError(f"Сессия с порядковым номером {value} уже импортирована")
        return value

    def to_mapped_session(self):
        """
        Доменная перенесённая сессия.

        Returns:
            MappedSession
        """
        session = self.to_session()
        entries = {entry["index"]: entry for entry in self.validated_data["biopsies"]}
        biopsies = []
        for record in session.records:
            entry = entries[record.index]
            segment = None
            if entry["registration_success"]:
                segment = NeedleSegment(
                    entry=entry["mapped_entry_mm"],
                    tip=entry["mapped_tip_mm"],
                    volume_id=session.reference_volume_id,
                )
            biopsies.append(MappedBiopsy(
                record=record,
                segment_ref=segment,
                registration_success=entry["registration_success"],
                score=entry["score"],
            ))
        return MappedSession(session=session, biopsies=tuple(biopsies))

    @transaction.atomic
    def create(self, validated_data):
        """
        Сохраняет сессию и её биопсии.

        Returns:
            BiopsySession: Созданная сессия
        """
        box = validated_data["grid"]["bbox_mm"]
        session = BiopsySession.objects.create(
            patient_id=validated_data["patient_id"],
            chronological_rank=validated_data["chronological_rank"],
            reference_volume=volume_id_for(validated_data["reference_volume"]),
            bbox_x0=box["x"][0], bbox_x1=box["x"][1],
            bbox_y0=box["y"][0], bbox_y1=box["y"][1],
            bbox_z0=box["z"][0], bbox_z1=box["z"][1],
        )
        Biopsy.objects.bulk_create([
            Biopsy(
                session=session,
                index=entry["index"],
                intended_target=entry["intended_target"],
                volume=volume_id_for(entry["volume"]),
                needle_entry_mm=entry["needle_entry_mm"],
                needle_tip_mm=entry["needle_tip_mm"],
                registration_success=entry["registration_success"],
                score=entry["score"],
                mapped_entry_mm=entry["mapped_entry_mm"],
                mapped_tip_mm=entry["mapped_tip_mm"],
            )
            for entry in validated_data["biopsies"]
        ])
        return session


def _triple(point):
    return None if point is None else [float(v) for v in point]


def session_to_document(session):
    """
    JSON файла сессии (вход команды map).

    Returns:
        dict: Документ по схеме SessionFileSerializer
    """
    return {
        "schema_version": SessionFileSerializer.SCHEMA_VERSION,
        "patient_id": session.patient_id,
        "chronological_rank": session.chronological_rank,
        "reference_volume": session.reference_volume_id,
        "grid": session.grid.to_document(),
        "biopsies": [
            {
                "index": record.index,
                "intended_target": record.intended_target.code,
                "volume": record.needle.volume_id,
                "needle_entry_mm": _triple(record.needle.entry),
                "needle_tip_mm": _triple(record.needle.tip),
            }
            for record in session.records
        ],
    }


def mapped_session_to_document(mapped_session):
    """
    JSON перенесённой сессии (выход команды map).

    Returns:
        dict: Документ по схеме MappedSessionDocumentSerializer
    """
    document = session_to_document(mapped_session.session)
    for entry, biopsy in zip(document["biopsies"], mapped_session.biopsies):
        segment = biopsy.segment_ref
        entry.update({
            "registration_success": biopsy.registration_success,
            "score": biopsy.score,
            "mapped_entry_mm": _triple(segment.entry) if segment else None,
            "mapped_tip_mm": _triple(segment.tip) if segment else None,
        })
    return document


class BiopsySerializer(serializers.ModelSerializer):
    """
    Биопсия сохранённой сессии (только чтение).

    Fields:
        inner_length_mm (float | None): Длина иглы внутри объединённой цели;
            None для неперенесённых биопсий
    """
    inner_length_mm = serializers.SerializerMethodField()

    class Meta:
        model = Biopsy
        fields = (
            "id", "index", "intended_target", "volume", "needle_entry_mm", "needle_tip_mm",
            "registration_success", "score", "mapped_entry_mm", "mapped_tip_mm", "inner_length_mm",
        )
        read_only_fields = fields

    def get_inner_length_mm(self, obj):
        if not obj.registration_success:
            return None
        mapped = obj.to_mapped(obj.session.reference_volume)
        label = fuse_apex(mapped.record.intended_target)
        return clip_length(mapped.segment_ref, obj.session.grid(), label)


class BiopsySessionSerializer(serializers.ModelSerializer):
    """
    Сохранённая сессия биопсий.

    Fields:
        grid (dict): Grid JSON сессии
        biopsies_count (int): Число биопсий
        mapped_count (int): Число успешно перенесённых биопсий
    """
    grid = serializers.SerializerMethodField()
    biopsies_count = serializers.IntegerField(source="biopsies.count", read_only=True)
    mapped_count = serializers.SerializerMethodField()

    class Meta:
        model = BiopsySession
        fields = (
            "id", "patient_id", "chronological_rank", "reference_volume", "grid",
            "biopsies_count", "mapped_count", "created_at",
        )
        read_only_fields = fields

    def get_grid(self, obj):
        return obj.grid().to_document()

    def get_mapped_count(self, obj):
        return obj.biopsies.filter(registration_success=True).count()


def load_validated(serializer_class, path, **kwargs):
    """
    Провалидированный сериализатор JSON-файла.

    Raises:
        FormatError, SchemaError: Некорректный файл
    """
    payload = read_document(path)
    serializer = serializer_class(data=payload, **kwargs)
    if not serializer.is_valid():
        raise SchemaError(f"{path}: документ не соответствует схеме: {serializer.errors}", serializer.errors)
    return serializer


def load_mapped_session(path):
    """MappedSession из файла перенесённой сессии (выход команды map)."""
    return load_validated(MappedSessionDocumentSerializer, path).to_mapped_session()
