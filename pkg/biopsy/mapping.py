"""
Сессии биопсий и перенос сегментов игл в систему опорного объёма.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from core.exceptions import InvalidInputError, MappingError
from core.transform import apply_point

logger = logging.getLogger(__name__)

# Типичная длина столбика ткани, мм; вне диапазона - предупреждение
CORE_LENGTH_RANGE = (15.0, 25.0)


def volume_id_for(path):
    """Идентификатор объёма - имя файла без каталога."""
    return Path(str(path)).name


def _point(value, name):
    point = np.array(value, dtype=np.float64)
    if point.shape != (3,) or not np.all(np.isfinite(point)):
        raise InvalidInputError(f"{name} должна быть тройкой конечных чисел: {value}")
    point.flags.writeable = False
    return point


@dataclass(frozen=True, eq=False)
class NeedleSegment:
    """
    Сегмент иглы, размеченный вручную в объёме.

    Attributes:
        entry (ndarray): Вход иглы, мм (мировые координаты своего объёма)
        tip (ndarray): Кончик иглы, мм
        volume_id (str): Объём, в координатах которого заданы точки

    Raises:
        InvalidInputError: Нулевая длина или нечисловые координаты
    """
    entry: np.ndarray
    tip: np.ndarray
    volume_id: str

    def __post_init__(self):
        object.__setattr__(self, "entry", _point(self.entry, "entry"))
        object.__setattr__(self, "tip", _point(self.tip, "tip"))
        if not self.length > 0:
            raise InvalidInputError(f"Сегмент иглы в {self.volume_id} имеет нулевую длину")

    @property
    def length(self):
        return float(np.linalg.norm(self.tip - self.entry))


@dataclass(frozen=True)
class BiopsyRecord:
    """
    Одна биопсия сессии.

    Attributes:
        index (int): Хронологический номер, с 1
        intended_target (TargetLabel): Запланированная цель (исходная метка)
        needle (NeedleSegment): Сегмент иглы в системе своего объёма
    """
    index: int
    intended_target: object
    needle: NeedleSegment

    def __post_init__(self):
        if self.index < 1:
            raise InvalidInputError(f"Номер биопсии должен быть >= 1: {self.index}")
        if self.intended_target.is_fused:
            raise InvalidInputError(f"Биопсия {self.index}: цель должна быть одним из 12 секторов")
        low, high = CORE_LENGTH_RANGE
        if not low <= self.needle.length <= high:
            logger.warning(
                "Биопсия %d: длина сегмента %.1f мм вне типичного диапазона %.0f-%.0f мм",
                self.index, self.needle.length, low, high,
            )


@dataclass(frozen=True)
class Session:
    """
    Сессия биопсий одного пациента.

    Attributes:
        patient_id (str): Идентификатор пациента
        reference_volume_id (str): Опорный объём
        records (tuple): BiopsyRecord в хронологическом порядке
        chronological_rank (int): Порядковый номер пациента в серии
        grid (SectorGrid): Планировочная сетка в системе опорного объёма
    """
    patient_id: str
    reference_volume_id: str
    records: tuple
    chronological_rank: int
    grid: object = field(default=None, compare=False)

    def __post_init__(self):
        records = tuple(sorted(self.records, key=lambda record: record.index))
        if not records:
            raise InvalidInputError(f"Сессия {self.patient_id} не содержит биопсий")
        indices = [record.index for record in records]
        if len(set(indices)) != len(indices):
            raise InvalidInputError(f"Сессия {self.patient_id}: номера биопсий повторяются")
        if self.chronological_rank < 1:
            raise InvalidInputError(f"Порядковый номер пациента должен быть >= 1: {self.chronological_rank}")
        object.__setattr__(self, "records", records)


@dataclass(frozen=True)
class MappedBiopsy:
    """
    Биопсия после переноса в опорный объём.

    Attributes:
        record (BiopsyRecord): Исходная запись
        segment_ref (NeedleSegment | None): Сегмент в системе опорного объёма;
            None при неуспешной регистрации
        registration_success (bool): Признак успешной регистрации
        score (float | None): Корреляция регистрации
    """
    record: BiopsyRecord
    segment_ref: NeedleSegment = None
    registration_success: bool = False
    score: float = None

    def __post_init__(self):
        if self.registration_success and self.segment_ref is None:
            raise InvalidInputError(f"Биопсия {self.record.index}: успешная регистрация без сегмента")
        if not self.registration_success and self.segment_ref is not None:
            raise InvalidInputError(f"Биопсия {self.record.index}: сегмент при неуспешной регистрации")

    @property
    def is_mapped(self):
        return self.registration_success


@dataclass(frozen=True)
class MappedSession:
    """Сессия с перенесёнными биопсиями (результат команды map)."""
    session: Session
    biopsies: tuple

    @property
    def mapped(self):
        """Только успешно перенесённые биопсии."""
        return tuple(biopsy for biopsy in self.biopsies if biopsy.is_mapped)

    def __iter__(self):
        return iter(self.biopsies)

    def __len__(self):
        return len(self.biopsies)

    def __getitem__(self, position):
        return self.biopsies[position]


def map_biopsy(record, reg, reference_volume_id=None):
    """
    Переносит сегмент иглы в систему опорного объёма.

    Args:
        record (BiopsyRecord): Биопсия
        reg (RegistrationResult): Регистрация её объёма
        reference_volume_id (str): Идентификатор опорного объёма для сегмента

    Returns:
        MappedBiopsy: При неуспешной регистрации - без сегмента

    Raises:
        MappingError: Регистрация относится к другому объёму
    """
    volume_id = getattr(reg, "volume_id", None)
    if volume_id is not None and volume_id != record.needle.volume_id:
        raise MappingError(
            f"Биопсия {record.index}: регистрация для {volume_id}, а игла размечена в {record.needle.volume_id}"
        )
    if not reg.success:
        logger.info("Биопсия %d исключена: регистрация неуспешна (%.4f)", record.index, reg.score)
        return MappedBiopsy(record=record, registration_success=False, score=reg.score)

    entry, tip = apply_point(reg.transform, np.stack([record.needle.entry, record.needle.tip]))
    segment = NeedleSegment(entry=entry, tip=tip, volume_id=reference_volume_id)
    return MappedBiopsy(record=record, segment_ref=segment, registration_success=True, score=reg.score)


def map_session(session, regs):
    """
    Поэлементный map_biopsy в хронологическом порядке.

    Args:
        session (Session): Сессия
        regs (sequence): RegistrationResult в порядке session.records

    Raises:
        MappingError: Число регистраций не совпадает с числом биопсий
    """
    regs = list(regs)
    if len(regs) != len(session.records):
        raise MappingError(
            f"Сессия {session.patient_id}: {len(session.records)} биопсий, но {len(regs)} регистраций"
        )
    biopsies = tuple(
        map_biopsy(record, reg, session.reference_volume_id)
        for record, reg in zip(session.records, regs)
    )
    logger.info(
        "Сессия %s: перенесено %d из %d биопсий",
        session.patient_id, sum(b.is_mapped for b in biopsies), len(biopsies),
    )
    return MappedSession(session=session, biopsies=biopsies)
