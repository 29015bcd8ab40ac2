from dataclasses import dataclass, fields, replace

from core.exceptions import InvalidInputError


@dataclass(frozen=True)
class RegistrationConfig:
    """
    Параметры жёсткой регистрации.

    Attributes:
        n_levels (int): Число уровней пирамиды
        sampling_step (tuple): Шаг выборки опорной сетки по уровням (уровень 0 первым);
            для уровней сверх длины кортежа берётся последний элемент
        coarse_search (bool): Перебор сдвигов на грубом уровне перед оптимизацией
        coarse_range_mm (float): Диапазон перебора сдвигов, +- мм
        coarse_step_mm (float): Шаг перебора сдвигов, мм
        param_tolerance (float): Допуск по параметрам (мм / масштабированные радианы)
        function_tolerance (float): Относительный допуск по значению метрики
        max_iterations (int): Максимум итераций Пауэлла на уровень
        success_min_score (float): Минимальная корреляция для успеха
        success_max_translation (float): Максимальный правдоподобный сдвиг, мм
        success_max_rotation (float): Максимальный правдоподобный поворот, градусы
        angle_scale (float): Мм на радиан при обусловливании углов
        speckle_smoothing_mm (float): Сигма предварительного сглаживания спекла, мм (0 - выкл.)
        workers (int): Число потоков для вычисления метрики
    """
    n_levels: int = 3
    sampling_step: tuple = (2, 1)
    coarse_search: bool = True
    coarse_range_mm: float = 15.0
    coarse_step_mm: float = 5.0
    param_tolerance: float = 0.01
    function_tolerance: float = 1e-5
    max_iterations: int = 100
    success_min_score: float = 0.6
    success_max_translation: float = 25.0
    success_max_rotation: float = 20.0
    angle_scale: float = 50.0
    speckle_smoothing_mm: float = 1.0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "sampling_step", tuple(int(s) for s in self.sampling_step))
        if self.n_levels < 1:
            raise InvalidInputError("n_levels должно быть >= 1")
        if not self.sampling_step or min(self.sampling_step) < 1:
            raise InvalidInputError("Шаги выборки должны быть >= 1")
        positive = (
            "coarse_range_mm", "coarse_step_mm", "param_tolerance", "function_tolerance",
            "max_iterations", "success_max_translation", "success_max_rotation", "angle_scale",
            "workers",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise InvalidInputError(f"{name} должно быть > 0")
        if self.speckle_smoothing_mm < 0:
            raise InvalidInputError("speckle_smoothing_mm не может быть отрицательным")
        if not -1.0 <= self.success_min_score <= 1.0:
            raise InvalidInputError("success_min_score должно лежать в [-1, 1]")

    def step_for_level(self, level):
        return self.sampling_step[min(level, len(self.sampling_step) - 1)]

    def with_overrides(self, **overrides):
        """Копия с изменёнными полями; неизвестные ключи - ошибка."""
        known = {f.name for f in fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise InvalidInputError(f"Неизвестные параметры регистрации: {', '.join(sorted(unknown))}")
        return replace(self, **overrides)

    @classmethod
    def from_settings(cls, **overrides):
        """Умолчания из settings.TRUSMAP['REGISTRATION'] поверх встроенных."""
        from django.conf import settings

        defaults = dict(getattr(settings, "TRUSMAP", {}).get("REGISTRATION", {}))
        defaults.update(overrides)
        return cls().with_overrides(**defaults)
