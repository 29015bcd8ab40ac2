"""
Планировочная сетка 12-точечной биопсии.

Корональная плоскость (x, z) ограничивающего бокса простаты делится на
3 ряда (Apex, Mid, Base по возрастанию z) и 4 столбца (Lateral-L,
Parasagittal-L, Parasagittal-R, Lateral-R по возрастанию x); каждый сектор -
призма над своей ячейкой на всю передне-заднюю протяжённость (y).
"""
from dataclasses import dataclass
from enum import Enum

import numpy as np

from core.exceptions import InvalidInputError

ORIENTATION = "z_cranial_x_left"

# Порог попадания по умолчанию, мм
DEFAULT_MIN_LEN = 1.0


class Row(Enum):
    BASE = "B"
    MID = "M"
    APEX = "A"


class Column(Enum):
    LATERAL = "L"
    PARASAGITTAL = "S"
    # объединённые apex-сектора одной стороны (только для анализа)
    FUSED = "F"


class Side(Enum):
    LEFT = "L"
    RIGHT = "R"


# Номер ряда снизу вверх по z и номер столбца по возрастанию x (левая доля у x0)
ROW_INDEX = {Row.APEX: 0, Row.MID: 1, Row.BASE: 2}
COLUMN_INDEX = {
    (Column.LATERAL, Side.LEFT): 0,
    (Column.PARASAGITTAL, Side.LEFT): 1,
    (Column.PARASAGITTAL, Side.RIGHT): 2,
    (Column.LATERAL, Side.RIGHT): 3,
}


@dataclass(frozen=True)
class TargetLabel:
    """
    Цель биопсии (сектор сетки) или объединённая apex-цель анализа.

    Attributes:
        row (Row): Base, Mid или Apex
        column (Column): Lateral, Parasagittal или Fused (только Apex)
        side (Side): Left или Right

    Коды: "BL-R", "MS-L", "AL-L" - 12 исходных меток, "A-R", "A-L" - объединённые.
    """
    row: Row
    column: Column
    side: Side

    def __post_init__(self):
        if self.column is Column.FUSED and self.row is not Row.APEX:
            raise InvalidInputError("Объединённой может быть только apex-цель")

    @property
    def is_fused(self):
        return self.column is Column.FUSED

    @property
    def code(self):
        if self.is_fused:
            return f"{self.row.value}-{self.side.value}"
        return f"{self.row.value}{self.column.value}-{self.side.value}"

    @classmethod
    def parse(cls, code):
        """
        Разбирает код цели.

        Принимает исходные коды ("BL-R", "MS-L"), букву P как синоним S
        ("BP-R") и объединённые apex-коды ("A-L").

        Raises:
            InvalidInputError: Неизвестный код
        """
        text = str(code).strip().upper()
        try:
            head, side = text.split("-")
            side = Side(side)
            if len(head) == 1:
                return cls(Row(head), Column.FUSED, side)
            if len(head) != 2:
                raise ValueError(text)
            column = Column.PARASAGITTAL if head[1] == "P" else Column(head[1])
            if column is Column.FUSED:
                raise ValueError(text)
            return cls(Row(head[0]), column, side)
        except ValueError as exc:
            raise InvalidInputError(f"Неизвестный код цели: {code!r}") from exc

    def constituents(self):
        """Исходные сектора, из которых состоит цель."""
        if self.is_fused:
            return (
                TargetLabel(Row.APEX, Column.LATERAL, self.side),
                TargetLabel(Row.APEX, Column.PARASAGITTAL, self.side),
            )
        return (self,)

    def mirrored(self):
        """Та же цель на противоположной стороне."""
        other = Side.RIGHT if self.side is Side.LEFT else Side.LEFT
        return TargetLabel(self.row, self.column, other)

    def __str__(self):
        return self.code


# 12 исходных меток в стандартном порядке взятия биопсий (сначала правая доля)
RAW_LABELS = tuple(
    TargetLabel(row, column, side)
    for side in (Side.RIGHT, Side.LEFT)
    for row in (Row.BASE, Row.MID, Row.APEX)
    for column in (Column.LATERAL, Column.PARASAGITTAL)
)

# 10 целей анализа в порядке строк отчёта
ANALYSIS_LABELS = tuple(
    TargetLabel(row, column, side)
    for row in (Row.BASE, Row.MID)
    for column in (Column.LATERAL, Column.PARASAGITTAL)
    for side in (Side.RIGHT, Side.LEFT)
) + (
    TargetLabel(Row.APEX, Column.FUSED, Side.RIGHT),
    TargetLabel(Row.APEX, Column.FUSED, Side.LEFT),
)


def fuse_apex(label):
    """Apex-метки стороны переходят в объединённую цель; остальные не меняются."""
    if label.row is Row.APEX:
        return TargetLabel(Row.APEX, Column.FUSED, label.side)
    return label


@dataclass(frozen=True, eq=False)
class SectorGrid:
    """
    Равномерная сетка 3x4 секторов в боксе простаты.

    Attributes:
        bbox (ndarray): Бокс (3, 2): [[x0, x1], [y0, y1], [z0, z1]], мм
        row_edges (ndarray): 4 границы рядов по z (Apex, Mid, Base снизу вверх)
        col_edges (ndarray): 5 границ столбцов по x (LL, PL, PR, LR)
    """
    bbox: np.ndarray
    row_edges: np.ndarray
    col_edges: np.ndarray

    def sector_box(self, label):
        """
        Замкнутый бокс (lo, hi) исходного сектора.

        Raises:
            InvalidInputError: Для объединённой метки
        """
        if label.is_fused:
            raise InvalidInputError(f"Объединённая цель {label} не является одним сектором")
        row = ROW_INDEX[label.row]
        col = COLUMN_INDEX[(label.column, label.side)]
        lo = np.array([self.col_edges[col], self.bbox[1, 0], self.row_edges[row]])
        hi = np.array([self.col_edges[col + 1], self.bbox[1, 1], self.row_edges[row + 1]])
        return lo, hi

    def label_at(self, point):
        """Исходная метка сектора, содержащего точку, или None вне бокса."""
        point = np.asarray(point, dtype=np.float64)
        if np.any(point < self.bbox[:, 0]) or np.any(point > self.bbox[:, 1]):
            return None
        col = min(int(np.searchsorted(self.col_edges, point[0], side="right")) - 1, 3)
        row = min(int(np.searchsorted(self.row_edges, point[2], side="right")) - 1, 2)
        for label in RAW_LABELS:
            if ROW_INDEX[label.row] == row and COLUMN_INDEX[(label.column, label.side)] == col:
                return label
        return None

    def center(self, label):
        """Центр сектора (для объединённой цели - центр объединения)."""
        boxes = [self.sector_box(part) for part in label.constituents()]
        lo = np.min([box[0] for box in boxes], axis=0)
        hi = np.max([box[1] for box in boxes], axis=0)
        return (lo + hi) / 2.0

    def mirror(self, point):
        """Отражение точки относительно срединной сагиттальной плоскости бокса."""
        point = np.array(point, dtype=np.float64)
        point[0] = self.bbox[0, 0] + self.bbox[0, 1] - point[0]
        return point

    def to_document(self):
        """
        Grid JSON.

        Поле orientation сохраняет принятое имя схемы "z_cranial_x_left", но
        столбцы нумеруются как в разбиении бокса: LL, PL, PR, LR по
        возрастанию x, то есть левая доля лежит у x0. При строгом LPS
        (+x к левому боку пациента) левая доля была бы у x1; производители
        файлов должны ориентировать бокс так, чтобы x0 был слева в смысле
        разметки сетки.
        """
        return {
            "bbox_mm": {
                axis: [float(self.bbox[i, 0]), float(self.bbox[i, 1])]
                for i, axis in enumerate("xyz")
            },
            "orientation": ORIENTATION,
        }


def build_grid(bbox):
    """
    Равномерное разбиение бокса: ряды - трети по z, столбцы - четверти по x.

    Args:
        bbox: [[x0, x1], [y0, y1], [z0, z1]] в мм

    Returns:
        SectorGrid

    Raises:
        InvalidInputError: Вырожденный бокс
    """
    box = np.array(bbox, dtype=np.float64)
    if box.shape != (3, 2) or not np.all(np.isfinite(box)):
        raise InvalidInputError(f"Бокс должен иметь вид [[x0, x1], [y0, y1], [z0, z1]]: {bbox}")
    if np.any(box[:, 1] <= box[:, 0]):
        raise InvalidInputError(f"Бокс должен иметь положительную протяжённость по всем осям: {bbox}")
    box.flags.writeable = False
    row_edges = np.linspace(box[2, 0], box[2, 1], 4)
    col_edges = np.linspace(box[0, 0], box[0, 1], 5)
    row_edges.flags.writeable = False
    col_edges.flags.writeable = False
    return SectorGrid(bbox=box, row_edges=row_edges, col_edges=col_edges)


def grid_from_document(document):
    """SectorGrid из провалидированного Grid JSON."""
    box = document["bbox_mm"]
    return build_grid([box["x"], box["y"], box["z"]])


def clip_segment(entry, tip, lo, hi):
    """
    Длина части отрезка entry-tip внутри замкнутого бокса [lo, hi].

    Параметрическое отсечение по слоям: для каждой оси интервал параметра
    t, при котором точка лежит между плоскостями бокса, пересекается с [0, 1].

    Returns:
        float: Длина в мм, 0 при отсутствии пересечения
    """
    entry = np.asarray(entry, dtype=np.float64)
    direction = np.asarray(tip, dtype=np.float64) - entry
    t_enter, t_exit = 0.0, 1.0
    for axis in range(3):
        if direction[axis] == 0.0:
            if entry[axis] < lo[axis] or entry[axis] > hi[axis]:
                return 0.0
            continue
        t_lo = (lo[axis] - entry[axis]) / direction[axis]
        t_hi = (hi[axis] - entry[axis]) / direction[axis]
        if t_lo > t_hi:
            t_lo, t_hi = t_hi, t_lo
        t_enter = max(t_enter, t_lo)
        t_exit = min(t_exit, t_hi)
        if t_enter >= t_exit:
            return 0.0
    return float((t_exit - t_enter) * np.linalg.norm(direction))


def clip_length(seg, grid, label):
    """
    Длина иглы внутри цели, мм.

    Для объединённой apex-цели суммируются длины в двух её секторах.

    Args:
        seg (NeedleSegment): Отрезок в системе опорного объёма
        grid (SectorGrid): Сетка
        label (TargetLabel): Цель
    """
    return sum(
        clip_segment(seg.entry, seg.tip, *grid.sector_box(part))
        for part in label.constituents()
    )


def is_hit(seg, grid, label, min_len=DEFAULT_MIN_LEN):
    """Попадание: длина внутри цели не меньше min_len."""
    if min_len < 0:
        raise InvalidInputError(f"Порог попадания не может быть отрицательным: {min_len}")
    return clip_length(seg, grid, label) >= min_len
