"""
Жёсткая регистрация объёма биопсии с опорным объёмом.

Метрика - коэффициент корреляции Пирсона по области перекрытия,
оптимизатор - метод направлений Пауэлла (scipy.optimize), схема - от грубого
уровня пирамиды к полному разрешению.
"""
import itertools
import logging
import time
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from core.exceptions import DegenerateIntensityError, InsufficientOverlapError, SimilarityError
from core.transform import TransformParams, apply_point, from_params, invert
from core.volume import build_pyramid, sample_points, smooth, strided_grid

from .config import RegistrationConfig

logger = logging.getLogger(__name__)

MIN_OVERLAP = 0.1

# Значение целевой функции для недопустимых положений: хуже любой корреляции
INFEASIBLE = 2.0


@dataclass(frozen=True)
class RegistrationResult:
    """
    Итог регистрации.

    Attributes:
        transform (RigidTransform): Подвижный -> опорный
        score (float): Корреляция на полном разрешении, [-1, 1]
        success (bool): Автоматический критерий успеха
        iterations (int): Сумма итераций Пауэлла по уровням
        overlap_fraction (float): Доля выборки, попавшая в подвижный объём
        elapsed_seconds (float): Время регистрации без загрузки объёмов
        volume_id (str): Имя файла подвижного объёма, если известно
    """
    transform: object
    score: float
    success: bool
    iterations: int
    overlap_fraction: float
    elapsed_seconds: float
    volume_id: str = None

    def metrics(self, include_timing=True):
        """
        Строка метрик для --metrics.

        Без include_timing результат детерминирован и пишется в файл
        преобразования.
        """
        metrics = {
            "schema_version": "1.0",
            "score": self.score,
            "success": self.success,
            "iterations": self.iterations,
            "overlap_fraction": self.overlap_fraction,
        }
        if self.volume_id is not None:
            metrics["volume_id"] = self.volume_id
        if include_timing:
            metrics["elapsed_seconds"] = self.elapsed_seconds
        return metrics


def pearson_correlation(a, b):
    """
    Коэффициент корреляции Пирсона двух выборок.

    Raises:
        DegenerateIntensityError: Если одна из выборок постоянна
    """
    if len(a) < 2 or np.ptp(a) == 0 or np.ptp(b) == 0:
        raise DegenerateIntensityError("Нулевая дисперсия интенсивностей в области перекрытия")
    da = a - a.mean()
    db = b - b.mean()
    denominator = np.sqrt(np.dot(da, da) * np.dot(db, db))
    if denominator == 0:
        raise DegenerateIntensityError("Нулевая дисперсия интенсивностей в области перекрытия")
    return float(np.clip(np.dot(da, db) / denominator, -1.0, 1.0))


class SimilarityProblem:
    """
    Метрика сходства для пары объёмов на одном уровне.

    Точки опорной сетки с шагом step вычисляются один раз; каждое вычисление
    переводит их в индексы подвижного объёма одним аффинным отображением.
    """

    def __init__(self, ref, mov, step, center, workers=1, metric=pearson_correlation):
        if step < 1:
            raise SimilarityError(f"Шаг выборки должен быть >= 1: {step}")
        self.mov = mov
        self.center = np.asarray(center, dtype=np.float64)
        self.workers = workers
        self.metric = metric
        self.points, self.ref_values = strided_grid(ref, step)

    def evaluate(self, T):
        """
        Returns:
            tuple: (score, overlap)

        Raises:
            InsufficientOverlapError: Перекрытие меньше MIN_OVERLAP
            DegenerateIntensityError: Нулевая дисперсия
        """
        mov_points = apply_point(invert(T), self.points)
        mov_values, inside = sample_points(self.mov, mov_points, workers=self.workers)
        overlap = float(inside.mean())
        if overlap < MIN_OVERLAP:
            raise InsufficientOverlapError(f"Недостаточное перекрытие объёмов: {overlap:.3f}")
        score = self.metric(self.ref_values[inside], mov_values[inside])
        return score, overlap

    def evaluate_params(self, params):
        return self.evaluate(from_params(params, self.center))


def similarity(ref, mov, T, step, workers=1):
    """
    Корреляция опорного объёма (сетка с шагом step) и подвижного в точках T^-1(p).

    Returns:
        tuple: (score в [-1, 1], доля перекрытия в [0, 1])
    """
    return SimilarityProblem(ref, mov, step, T.center, workers=workers).evaluate(T)


@dataclass(frozen=True)
class LevelOutcome:
    params: TransformParams
    score: float
    overlap: float
    iterations: int


def _optimize(problem, T_init, cfg):
    initial_score, initial_overlap = problem.evaluate_params(T_init)

    def objective(vector):
        try:
            score, _ = problem.evaluate_params(TransformParams.from_vector(vector, cfg.angle_scale))
        except SimilarityError:
            return INFEASIBLE
        return -score

    result = minimize(
        objective,
        T_init.as_vector(cfg.angle_scale),
        method="Powell",
        options={
            "xtol": cfg.param_tolerance,
            "ftol": cfg.function_tolerance,
            "maxiter": cfg.max_iterations,
        },
    )
    params = TransformParams.from_vector(result.x, cfg.angle_scale)
    try:
        score, overlap = problem.evaluate_params(params)
    except SimilarityError:
        score, overlap = -np.inf, 0.0
    if score < initial_score:
        # Пауэлл не ухудшает начальную точку
        return LevelOutcome(T_init, initial_score, initial_overlap, int(result.nit))
    return LevelOutcome(params, score, overlap, int(result.nit))


def optimize_level(ref, mov, T_init, cfg, level=0, center=None):
    """
    Максимизация корреляции по 6 параметрам на одном уровне пирамиды.

    Args:
        ref (Volume3): Опорный объём уровня
        mov (Volume3): Подвижный объём уровня
        T_init (TransformParams): Начальное приближение
        cfg (RegistrationConfig): Параметры
        level (int): Номер уровня (определяет шаг выборки)
        center (array-like): Центр поворота; по умолчанию - центр опорного объёма

    Returns:
        TransformParams: Параметры с корреляцией не ниже начальной

    Raises:
        SimilarityError: Если метрика не вычисляется в начальной точке
    """
    center = ref.world_center() if center is None else center
    problem = SimilarityProblem(ref, mov, cfg.step_for_level(level), center, workers=cfg.workers)
    return _optimize(problem, T_init, cfg).params


def coarse_translation_search(problem, cfg):
    """
    Перебор сдвигов на сетке +-coarse_range_mm с шагом coarse_step_mm.

    Кандидаты перебираются по возрастанию длины сдвига, поэтому при равенстве
    метрики выигрывает меньший сдвиг (в частности, тождественное положение).

    Returns:
        TransformParams: Лучший сдвиг (без поворота)
    """
    n = int(np.floor(cfg.coarse_range_mm / cfg.coarse_step_mm + 1e-9))
    offsets = np.arange(-n, n + 1) * cfg.coarse_step_mm
    candidates = sorted(itertools.product(offsets, repeat=3), key=lambda t: (np.dot(t, t), t))
    best, best_score = TransformParams(), -np.inf
    for translation in candidates:
        params = TransformParams(t=translation)
        try:
            score, _ = problem.evaluate_params(params)
        except SimilarityError:
            continue
        if score > best_score:
            best, best_score = params, score
    logger.debug("Грубый перебор: сдвиг %s, корреляция %.4f", best.t, best_score)
    return best


def is_plausible(transform, score, cfg):
    """Автоматический критерий успеха регистрации."""
    return (
        score >= cfg.success_min_score
        and float(np.linalg.norm(transform.translation)) <= cfg.success_max_translation
        and transform.rotation_angle_deg() <= cfg.success_max_rotation
    )


def register(ref, mov, cfg=None):
    """
    Многомасштабная жёсткая регистрация подвижного объёма с опорным.

    Этапы:
        1. сглаживание спекла (speckle_smoothing_mm) и построение пирамид;
        2. на грубом уровне - перебор сдвигов (если включён), иначе тождество;
        3. оптимизация Пауэлла от грубого уровня к полному разрешению;
        4. проверка критерия успеха.

    Returns:
        RegistrationResult

    Raises:
        PyramidError: Объёмы слишком малы для n_levels
        SimilarityError: Метрика не вычисляется на старте уровня
    """
    cfg = cfg or RegistrationConfig()
    started = time.perf_counter()
    center = ref.world_center()

    ref_pyramid = build_pyramid(smooth(ref, cfg.speckle_smoothing_mm), cfg.n_levels)
    mov_pyramid = build_pyramid(smooth(mov, cfg.speckle_smoothing_mm), cfg.n_levels)

    params = TransformParams()
    iterations = 0
    outcome = None
    for level in reversed(range(cfg.n_levels)):
        problem = SimilarityProblem(
            ref_pyramid[level], mov_pyramid[level], cfg.step_for_level(level), center,
            workers=cfg.workers,
        )
        if cfg.coarse_search and level == cfg.n_levels - 1:
            params = coarse_translation_search(problem, cfg)
        outcome = _optimize(problem, params, cfg)
        params = outcome.params
        iterations += outcome.iterations
        logger.info(
            "Уровень %d: корреляция %.4f, итераций %d, t=%s мм",
            level, outcome.score, outcome.iterations, np.round(params.t, 3).tolist(),
        )

    transform = from_params(params, center)
    success = is_plausible(transform, outcome.score, cfg)
    result = RegistrationResult(
        transform=transform,
        score=outcome.score,
        success=success,
        iterations=iterations,
        overlap_fraction=outcome.overlap,
        elapsed_seconds=time.perf_counter() - started,
    )
    log = logger.info if success else logger.warning
    log(
        "Регистрация %s: корреляция %.4f, %.2f с",
        "успешна" if success else "неуспешна", result.score, result.elapsed_seconds,
    )
    return result


