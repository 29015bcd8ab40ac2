"""
Статистика попаданий по целям и кривая обучения.

Каждая биопсия попадает ровно в одну строку отчёта - строку своей
(объединённой) запланированной цели. Биопсии с неуспешной регистрацией в
статистике не участвуют.
"""
import logging
import math
from dataclasses import dataclass, field

from scipy.special import erfc

from biopsy.sectors import ANALYSIS_LABELS, DEFAULT_MIN_LEN, clip_length, fuse_apex
from core.exceptions import InvalidInputError

logger = logging.getLogger(__name__)

MEAN_LENGTH_NOTE = "mean_len_all_mm averages over all planned biopsies (misses count 0 mm)"


@dataclass(frozen=True)
class TargetStats:
    """
    Строка отчёта по одной цели анализа.

    Attributes:
        label (TargetLabel): Цель (apex - объединённая)
        n_biopsies (int): Число перенесённых биопсий, запланированных в цель
        n_hits (int): Число попаданий
        inner_length_sum (float): Сумма длин внутри цели по всем биопсиям, мм
        hit_length_sum (float): Та же сумма только по попаданиям, мм
    """
    label: object
    n_biopsies: int = 0
    n_hits: int = 0
    inner_length_sum: float = 0.0
    hit_length_sum: float = 0.0

    def __post_init__(self):
        if not 0 <= self.n_hits <= self.n_biopsies:
            raise InvalidInputError(f"{self.label}: попаданий {self.n_hits} из {self.n_biopsies}")

    @property
    def hit_pct(self):
        if not self.n_biopsies:
            return None
        return 100.0 * self.n_hits / self.n_biopsies

    @property
    def mean_inner_length(self):
        """Средняя длина внутри цели по всем биопсиям (промахи дают 0 мм)."""
        if not self.n_biopsies:
            return None
        return self.inner_length_sum / self.n_biopsies

    @property
    def mean_hit_length(self):
        """Средняя длина внутри цели только по попаданиям."""
        if not self.n_hits:
            return None
        return self.hit_length_sum / self.n_hits


@dataclass(frozen=True)
class Totals:
    """Итоговая строка отчёта."""
    n: int
    hits: int
    pct: float
    mean_inner_length: float
    mean_hit_length: float = None


@dataclass(frozen=True)
class Report:
    """
    Таблица точности прицеливания: 10 строк в порядке ANALYSIS_LABELS.

    Attributes:
        rows (tuple): TargetStats
        min_len (float): Порог попадания, мм
        n_mapped (int | None): Число перенесённых биопсий, учтённых при построении
    """
    rows: tuple
    min_len: float = DEFAULT_MIN_LEN
    n_mapped: int = None
    _by_code: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_by_code", {row.label.code: row for row in self.rows})

    def row(self, label):
        """Строка по метке или коду ("BL-R", "A-L")."""
        code = label if isinstance(label, str) else label.code
        try:
            return self._by_code[code]
        except KeyError:
            raise InvalidInputError(f"В отчёте нет цели {code}") from None

    @property
    def totals(self):
        return aggregate(self)


def aggregate(report):
    """
    Итоги отчёта: суммы числа биопсий и попаданий, взвешенные средние длин.

    Raises:
        InvalidInputError: В отчёте нет ни одной биопсии
    """
    n = sum(row.n_biopsies for row in report.rows)
    hits = sum(row.n_hits for row in report.rows)
    if n == 0:
        raise InvalidInputError("Отчёт пуст: нет перенесённых биопсий")
    inner = math.fsum(row.inner_length_sum for row in report.rows)
    hit_inner = math.fsum(row.hit_length_sum for row in report.rows)
    return Totals(
        n=n,
        hits=hits,
        pct=100.0 * hits / n,
        mean_inner_length=inner / n,
        mean_hit_length=hit_inner / hits if hits else None,
    )


def _build_report(pairs, min_len):
    """Отчёт по парам (MappedBiopsy, SectorGrid); неперенесённые пропускаются."""
    if min_len < 0:
        raise InvalidInputError(f"Порог попадания не может быть отрицательным: {min_len}")
    lengths = {label.code: [] for label in ANALYSIS_LABELS}
    hit_lengths = {label.code: [] for label in ANALYSIS_LABELS}
    n_mapped = 0
    for biopsy, grid in pairs:
        if not biopsy.is_mapped:
            continue
        n_mapped += 1
        label = fuse_apex(biopsy.record.intended_target)
        if label.code not in lengths:
            raise InvalidInputError(f"Неизвестная цель анализа: {label}")
        inner = clip_length(biopsy.segment_ref, grid, label)
        lengths[label.code].append(inner)
        if inner >= min_len:
            hit_lengths[label.code].append(inner)

    rows = tuple(
        TargetStats(
            label=label,
            n_biopsies=len(lengths[label.code]),
            n_hits=len(hit_lengths[label.code]),
            # fsum не зависит от порядка слагаемых
            inner_length_sum=math.fsum(lengths[label.code]),
            hit_length_sum=math.fsum(hit_lengths[label.code]),
        )
        for label in ANALYSIS_LABELS
    )
    return Report(rows=rows, min_len=min_len, n_mapped=n_mapped)


def per_target_stats(mapped, grid, min_len=DEFAULT_MIN_LEN):
    """
    Отчёт по перенесённым биопсиям одной сетки.

    Args:
        mapped (iterable): MappedBiopsy
        grid (SectorGrid): Сетка в системе опорного объёма
        min_len (float): Порог попадания, мм

    Returns:
        Report
    """
    return _build_report(((biopsy, grid) for biopsy in mapped), min_len)


def session_report(sessions, min_len=DEFAULT_MIN_LEN):
    """Сводный отчёт по нескольким сессиям, каждая со своей сеткой."""
    return _build_report(
        ((biopsy, mapped_session.session.grid) for mapped_session in sessions for biopsy in mapped_session),
        min_len,
    )


def chi2_2x2(a, b, c, d, yates=False):
    """
    Статистика хи-квадрат Пирсона для таблицы [[a, b], [c, d]].

    Args:
        a, b, c, d (int): Неотрицательные частоты
        yates (bool): Поправка Йейтса на непрерывность

    Returns:
        float: N (ad - bc)^2 / ((a+b)(c+d)(a+c)(b+d))

    Raises:
        InvalidInputError: Отрицательная частота или нулевая маргинальная сумма
    """
    cells = (a, b, c, d)
    if any(int(v) != v or v < 0 for v in cells):
        raise InvalidInputError(f"Частоты должны быть неотрицательными целыми: {cells}")
    a, b, c, d = (int(v) for v in cells)
    marginals = (a + b, c + d, a + c, b + d)
    if min(marginals) == 0:
        raise InvalidInputError(f"Нулевая маргинальная сумма в таблице {cells}")
    n = a + b + c + d
    difference = abs(a * d - b * c)
    if yates:
        difference = max(0.0, difference - n / 2.0)
    denominator = marginals[0] * marginals[1] * marginals[2] * marginals[3]
    return n * float(difference) ** 2 / denominator


def chi2_sf_df1(x):
    """
    Функция выживания хи-квадрат с одной степенью свободы: erfc(sqrt(x / 2)).

    Raises:
        InvalidInputError: Отрицательный аргумент
    """
    if x < 0:
        raise InvalidInputError(f"Аргумент должен быть неотрицательным: {x}")
    return float(erfc(math.sqrt(x / 2.0)))


@dataclass(frozen=True)
class LearningCurveResult:
    """
    Сравнение частоты попаданий двух хронологических половин серии.

    Attributes:
        split_index (int): Число сессий в первой половине
        first (tuple): (n, hits) первой половины
        second (tuple): (n, hits) второй половины
        rate_first (float): Доля попаданий первой половины, [0, 1]
        rate_second (float): Доля попаданий второй половины, [0, 1]
        chi2 (float): Статистика хи-квадрат
        p_value (float): Уровень значимости, (0, 1]
        yates (bool): Применена ли поправка Йейтса
    """
    split_index: int
    first: tuple
    second: tuple
    rate_first: float
    rate_second: float
    chi2: float
    p_value: float
    yates: bool = False


def _half_counts(sessions, min_len):
    n = hits = 0
    for mapped_session in sessions:
        grid = mapped_session.session.grid
        for biopsy in mapped_session.mapped:
            n += 1
            label = fuse_apex(biopsy.record.intended_target)
            hits += clip_length(biopsy.segment_ref, grid, label) >= min_len
    return n, int(hits)


def learning_curve(sessions, split_index, min_len=DEFAULT_MIN_LEN, yates=False):
    """
    Хронологическое разбиение серии и тест хи-квадрат "половина x попадание".

    Args:
        sessions (sequence): MappedSession в хронологическом порядке
        split_index (int): Число сессий в первой половине
        min_len (float): Порог попадания, мм
        yates (bool): Поправка Йейтса

    Returns:
        LearningCurveResult

    Raises:
        InvalidInputError: Неверный split_index, пустая половина или нулевая маргинальная сумма
    """
    sessions = list(sessions)
    if not 1 <= split_index < len(sessions):
        raise InvalidInputError(f"split_index должен лежать в [1, {len(sessions) - 1}]: {split_index}")
    first = _half_counts(sessions[:split_index], min_len)
    second = _half_counts(sessions[split_index:], min_len)
    if first[0] == 0 or second[0] == 0:
        raise InvalidInputError("Одна из половин не содержит перенесённых биопсий")

    chi2 = chi2_2x2(first[1], first[0] - first[1], second[1], second[0] - second[1], yates=yates)
    result = LearningCurveResult(
        split_index=split_index,
        first=first,
        second=second,
        rate_first=first[1] / first[0],
        rate_second=second[1] / second[0],
        chi2=chi2,
        p_value=chi2_sf_df1(chi2),
        yates=yates,
    )
    logger.info(
        "Кривая обучения: %.1f%% -> %.1f%%, chi2 = %.3f, p = %.5f",
        100 * result.rate_first, 100 * result.rate_second, result.chi2, result.p_value,
    )
    return result
