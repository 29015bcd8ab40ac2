"""
Трёхмерный скалярный объём с геометрией в мировых координатах.

Соглашения:
    - мировые координаты в миллиметрах, система LPS;
    - узловая модель вокселя: origin - центр вокселя (0, 0, 0);
    - массив данных индексируется как data[i, j, k] = (x, y, z),
      то есть в файле и в плоском представлении быстрее всего меняется x.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .exceptions import InvalidInputError, PyramidError

logger = logging.getLogger(__name__)

INTENSITY_TYPES = {
    "uint8": np.uint8,
    "int16": np.int16,
    "float32": np.float32,
}

# Допуск на попадание дробного индекса в сетку
INDEX_EPS = 1e-9

# Размер блока точек для параллельной интерполяции; разбиение не зависит
# от числа потоков, поэтому результат совпадает с последовательным
SAMPLE_CHUNK = 1 << 16


def _frozen(array, dtype=np.float64):
    """Возвращает неизменяемую копию массива."""
    result = np.array(array, dtype=dtype)
    result.flags.writeable = False
    return result


@dataclass(frozen=True, eq=False)
class Volume3:
    """
    Объём УЗИ (опорный или снятый после выстрела биопсийного пистолета).

    Attributes:
        data (ndarray): Интенсивности формы (nx, ny, nz)
        spacing (ndarray): Размер вокселя по осям, мм
        origin (ndarray): Мировая позиция центра вокселя (0, 0, 0), мм
        direction (ndarray): Матрица 3x3 направляющих косинусов (столбец - ось индекса)
        intensity_type (str): uint8, int16 или float32

    Raises:
        InvalidInputError: Если нарушены инварианты геометрии
    """
    data: np.ndarray
    spacing: np.ndarray
    origin: np.ndarray
    direction: np.ndarray = None
    intensity_type: str = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise InvalidInputError(f"Ожидался трёхмерный массив, получено измерений: {data.ndim}")
        if min(data.shape) < 2:
            raise InvalidInputError(f"Каждое измерение объёма должно быть >= 2, получено {data.shape}")

        intensity_type = self.intensity_type or data.dtype.name
        if intensity_type not in INTENSITY_TYPES:
            raise InvalidInputError(f"Неподдерживаемый тип интенсивности: {intensity_type}")
        data = data.astype(INTENSITY_TYPES[intensity_type], copy=False).view()
        data.flags.writeable = False

        spacing = _frozen(self.spacing)
        if spacing.shape != (3,) or np.any(spacing <= 0):
            raise InvalidInputError(f"Шаг сетки должен быть тройкой положительных чисел: {spacing}")
        origin = _frozen(self.origin)
        if origin.shape != (3,):
            raise InvalidInputError(f"origin должен быть тройкой чисел: {origin}")

        direction = _frozen(np.eye(3) if self.direction is None else self.direction)
        if direction.shape != (3, 3):
            raise InvalidInputError("direction должна быть матрицей 3x3")
        if not np.allclose(direction.T @ direction, np.eye(3), atol=1e-6) \
                or abs(abs(np.linalg.det(direction)) - 1.0) > 1e-6:
            raise InvalidInputError("direction должна быть ортонормированной")

        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "direction", direction)
        object.__setattr__(self, "intensity_type", intensity_type)
        object.__setattr__(self, "_inverse_direction", _frozen(np.linalg.inv(direction)))

    @property
    def dims(self):
        return tuple(int(n) for n in self.data.shape)

    @property
    def extent(self):
        """Мировая протяжённость между центрами крайних вокселей, мм."""
        return (np.asarray(self.dims) - 1) * self.spacing

    def as_float(self):
        """Данные, приведённые к float32 для арифметики."""
        return self.data.astype(np.float32, copy=False)

    def flat(self):
        """Плоское представление длины nx*ny*nz с быстрым x."""
        return self.data.ravel(order="F")

    def world_center(self):
        return index_to_world(self, (np.asarray(self.dims) - 1) / 2.0)

    def with_data(self, data, intensity_type=None):
        """Новый объём с той же геометрией и другими данными."""
        return Volume3(
            data=data,
            spacing=self.spacing,
            origin=self.origin,
            direction=self.direction,
            intensity_type=intensity_type,
        )

    def __repr__(self):
        return (
            f"Volume3(dims={self.dims}, spacing={tuple(self.spacing)}, "
            f"origin={tuple(self.origin)}, type={self.intensity_type})"
        )


@dataclass(frozen=True)
class Pyramid:
    """
    Многомасштабная пирамида: уровень 0 - полное разрешение.

    Attributes:
        levels (tuple): Объёмы от мелкого к грубому
        factor (int): Коэффициент прореживания между уровнями
    """
    levels: tuple
    factor: int = 2

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, level):
        return self.levels[level]


def index_to_world(vol, idx):
    """
    Переводит (дробные) индексы вокселей в мировые координаты.

    Args:
        vol (Volume3): Объём
        idx (array-like): Тройка или массив (N, 3)

    Returns:
        ndarray: origin + direction . (idx * spacing)
    """
    idx = np.asarray(idx, dtype=np.float64)
    return (idx * vol.spacing) @ vol.direction.T + vol.origin


def world_to_index(vol, p):
    """
    Обратное к index_to_world преобразование, без ограничения сеткой.

    Args:
        vol (Volume3): Объём
        p (array-like): Тройка или массив (N, 3), мм

    Returns:
        ndarray: Дробные индексы
    """
    p = np.asarray(p, dtype=np.float64)
    return ((p - vol.origin) @ vol._inverse_direction.T) / vol.spacing


def inside_mask(vol, idx):
    """Маска индексов, лежащих в [0, dims - 1] по всем осям."""
    upper = np.asarray(vol.dims, dtype=np.float64) - 1.0
    return np.all((idx >= -INDEX_EPS) & (idx <= upper + INDEX_EPS), axis=-1)


def _interpolate(data, idx):
    return ndimage.map_coordinates(
        data, idx.T, order=1, mode="nearest", prefilter=False, output=np.float64,
    )


def sample_points(vol, points, workers=1):
    """
    Трилинейная интерполяция объёма в наборе мировых точек.

    Точки вне сетки получают NaN - маркер "вне объёма", отличимый от
    любой интенсивности.

    Args:
        vol (Volume3): Объём
        points (ndarray): Мировые точки (N, 3), мм
        workers (int): Число потоков; результат от него не зависит

    Returns:
        tuple: (values float64 (N,), inside bool (N,))
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    idx = world_to_index(vol, points)
    inside = inside_mask(vol, idx)
    values = np.full(len(points), np.nan)
    if not inside.any():
        return values, inside

    data = vol.as_float()
    inner_idx = idx[inside]
    chunks = [inner_idx[i:i + SAMPLE_CHUNK] for i in range(0, len(inner_idx), SAMPLE_CHUNK)]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda chunk: _interpolate(data, chunk), chunks))
    else:
        parts = [_interpolate(data, chunk) for chunk in chunks]
    values[inside] = np.concatenate(parts)
    return values, inside


def sample_trilinear(vol, p):
    """
    Значение объёма в одной мировой точке.

    Returns:
        float or None: Интерполированная интенсивность или None вне сетки
    """
    values, inside = sample_points(vol, np.asarray(p, dtype=np.float64).reshape(1, 3))
    if not inside[0]:
        return None
    return float(values[0])


def strided_grid(vol, step):
    """
    Мировые точки и интенсивности прореженной с шагом step сетки объёма.

    Returns:
        tuple: (points (N, 3), values float64 (N,))
    """
    if step < 1:
        raise InvalidInputError(f"Шаг выборки должен быть >= 1: {step}")
    axes = [np.arange(0, n, step, dtype=np.float64) for n in vol.dims]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    values = vol.as_float()[::step, ::step, ::step].astype(np.float64).reshape(-1)
    return index_to_world(vol, grid), values


def smooth(vol, sigma_mm):
    """Изотропное гауссово сглаживание с сигмой в миллиметрах."""
    if sigma_mm <= 0:
        return vol
    sigma_vox = [sigma_mm / s for s in vol.spacing]
    data = ndimage.gaussian_filter(vol.as_float(), sigma=sigma_vox, mode="nearest", truncate=3.0)
    return vol.with_data(data.astype(np.float32), intensity_type="float32")


def gaussian_downsample(vol, factor):
    """
    Сглаживание (sigma = 0.5 * factor вокселей, усечение 3 sigma, края
    зажаты) и прореживание в factor раз.

    Центр вокселя (0, 0, 0) остаётся на месте, поэтому origin не меняется,
    а шаг растёт в factor раз.

    Raises:
        InvalidInputError: Если factor < 2
    """
    if factor < 2:
        raise InvalidInputError(f"Коэффициент прореживания должен быть >= 2: {factor}")
    smoothed = ndimage.gaussian_filter(
        vol.as_float(), sigma=0.5 * factor, mode="nearest", truncate=3.0,
    )
    return Volume3(
        data=smoothed[::factor, ::factor, ::factor].astype(np.float32),
        spacing=vol.spacing * factor,
        origin=vol.origin,
        direction=vol.direction,
        intensity_type="float32",
    )


def build_pyramid(vol, n_levels, factor=2, min_dim=8):
    """
    Строит гауссову пирамиду из n_levels уровней.

    Raises:
        PyramidError: Если на грубом уровне какое-то измерение < min_dim
    """
    if n_levels < 1:
        raise PyramidError(f"Число уровней должно быть >= 1: {n_levels}")
    dims = list(vol.dims)
    for _ in range(n_levels - 1):
        dims = [math.ceil(n / factor) for n in dims]
    if min(dims) < min_dim:
        raise PyramidError(
            f"Объём {vol.dims} слишком мал для {n_levels} уровней: грубый уровень {tuple(dims)}"
        )

    levels = [vol]
    for _ in range(n_levels - 1):
        levels.append(gaussian_downsample(levels[-1], factor))
    logger.debug("Пирамида: %s", [lvl.dims for lvl in levels])
    return Pyramid(levels=tuple(levels), factor=factor)
