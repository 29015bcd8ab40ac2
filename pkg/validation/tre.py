"""
Ошибка регистрации по парам фидуциалов (TRE).

Фидуциал - точечный ориентир (кальцинат), размеченный в обоих объёмах.
Расстояние пары - норма разности apply_point(T, p_mov) и p_ref.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from core.exceptions import InvalidInputError
from core.transform import apply_point

logger = logging.getLogger(__name__)


def _point(value, name):
    point = np.array(value, dtype=np.float64)
    if point.shape != (3,) or not np.all(np.isfinite(point)):
        raise InvalidInputError(f"{name} должна быть тройкой конечных чисел: {value}")
    point.flags.writeable = False
    return point


@dataclass(frozen=True, eq=False)
class FiducialPair:
    """
    Пара соответствующих фидуциалов.

    Attributes:
        id (str): Идентификатор
        p_ref (ndarray): Положение в опорном объёме, мм
        p_mov (ndarray): Положение в подвижном объёме, мм
    """
    id: str
    p_ref: np.ndarray
    p_mov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p_ref", _point(self.p_ref, f"{self.id}: ref_mm"))
        object.__setattr__(self, "p_mov", _point(self.p_mov, f"{self.id}: mov_mm"))


@dataclass(frozen=True)
class TreSummary:
    """
    Итог проверки по фидуциалам.

    Attributes:
        per_pair (tuple): (id, расстояние в мм) в порядке входа
        mean (float): Среднее расстояние по всем парам, мм
        max (float): Наибольшее расстояние, мм
        n (int): Число пар
    """
    per_pair: tuple
    mean: float
    max: float
    n: int


def tre(pairs, T):
    """
    Расстояния между фидуциалами после применения преобразования.

    Args:
        pairs (sequence): FiducialPair
        T (RigidTransform): Подвижный -> опорный

    Returns:
        TreSummary

    Raises:
        InvalidInputError: Нет ни одной пары
    """
    pairs = list(pairs)
    if not pairs:
        raise InvalidInputError("Нет пар фидуциалов")
    moved = apply_point(T, np.stack([pair.p_mov for pair in pairs]))
    reference = np.stack([pair.p_ref for pair in pairs])
    distances = np.linalg.norm(moved - reference, axis=1)

    mean = math.fsum(distances) / len(pairs)
    per_pair = tuple((pair.id, float(distance)) for pair, distance in zip(pairs, distances))
    summary = TreSummary(
        per_pair=per_pair,
        mean=min(mean, float(distances.max())),
        max=float(distances.max()),
        n=len(pairs),
    )
    logger.info("TRE по %d парам: среднее %.3f мм, максимум %.3f мм", summary.n, summary.mean, summary.max)
    return summary
