"""
Синтетические объёмы, похожие на 3D ТРУЗИ.

Модель:
    - эллипсоидальная простата в центре объёма (мировой центр - начало
      координат) с плавным переходом к фону на границе;
    - гладкая эхотекстура ткани, движущаяся вместе с тканью;
    - точечные фидуциалы (кальцинаты) - шарики высокой интенсивности;
    - мультипликативный логнормальный спекл, новый для каждого объёма.

Случайные числа берутся из Philox (numpy): ключ - seed, старшие слова
счётчика - номер потока и номер z-слоя. Каждый слой генерируется
независимо, поэтому результат не зависит от числа потоков.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

from biopsy.mapping import BiopsyRecord, NeedleSegment, Session
from biopsy.sectors import RAW_LABELS, build_grid
from core.exceptions import InvalidInputError
from core.transform import RigidTransform, apply_point, invert
from core.volume import Volume3, index_to_world

logger = logging.getLogger(__name__)

SEED_LIMIT = 1 << 64

# Номера независимых потоков Philox
STREAM_SPECKLE = 1
STREAM_TEXTURE = 2
STREAM_FIDUCIALS = 3
STREAM_MOTION = 4
STREAM_AIM = 5
STREAM_NOISE_SEEDS = 6

# Границы правдоподобного движения между объёмами
MAX_TRANSLATION_MM = 25.0
MAX_ROTATION_DEG = 20.0

ELLIPSOID_MARGIN_MM = 2.0
FIDUCIAL_MIN_DISTANCE_MM = 5.0
# Фидуциалы размещаются в уменьшенном эллипсоиде, чтобы шарик целиком был в ткани
FIDUCIAL_SHELL = 0.8
MAX_PLACEMENT_ATTEMPTS = 10000


def philox(seed, stream, slab=0):
    """
    Генератор Philox для потока stream и слоя slab.

    Raises:
        InvalidInputError: seed вне [0, 2^64)
    """
    if not 0 <= int(seed) < SEED_LIMIT:
        raise InvalidInputError(f"seed должен лежать в [0, 2^64): {seed}")
    counter = np.array([0, 0, slab, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=int(seed), counter=counter))


@dataclass(frozen=True)
class PhantomConfig:
    """
    Параметры фантома.

    Attributes:
        dims (tuple): Размер сетки, воксели
        spacing (tuple): Шаг сетки, мм
        semi_axes (tuple): Полуоси эллипсоида простаты, мм
        prostate_mean (float): Средняя интенсивность простаты, 0-255
        background_mean (float): Средняя интенсивность фона, 0-255
        speckle_sigma (float): Сигма логнормального спекла
        n_fiducials (int): Число фидуциалов, не меньше 3
        fiducial_radius (float): Радиус фидуциала, мм
        fiducial_intensity (float): Интенсивность фидуциала
        tissue_texture (float): Относительная амплитуда эхотекстуры
        texture_scale_mm (float): Сигма сглаживания эхотекстуры, мм
        boundary_ramp_mm (float): Ширина перехода на границе простаты, мм
        core_length_mm (float): Длина столбика ткани биопсии, мм
        seed (int): 64-битный seed анатомии и спекла опорного объёма
    """
    dims: tuple = (128, 128, 128)
    spacing: tuple = (0.5, 0.5, 0.5)
    semi_axes: tuple = (25.0, 20.0, 21.5)
    prostate_mean: float = 120.0
    background_mean: float = 60.0
    speckle_sigma: float = 0.25
    n_fiducials: int = 5
    fiducial_radius: float = 1.0
    fiducial_intensity: float = 230.0
    tissue_texture: float = 0.15
    texture_scale_mm: float = 2.0
    boundary_ramp_mm: float = 1.5
    core_length_mm: float = 18.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "semi_axes", tuple(float(a) for a in self.semi_axes))
        if len(self.dims) != 3 or min(self.dims) < 2:
            raise InvalidInputError(f"dims должно быть тройкой чисел >= 2: {self.dims}")
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise InvalidInputError(f"spacing должно быть тройкой положительных чисел: {self.spacing}")
        if len(self.semi_axes) != 3 or min(self.semi_axes) <= 0:
            raise InvalidInputError(f"semi_axes должно быть тройкой положительных чисел: {self.semi_axes}")
        half_extent = (np.asarray(self.dims) - 1) * np.asarray(self.spacing) / 2.0
        if np.any(np.asarray(self.semi_axes) + ELLIPSOID_MARGIN_MM > half_extent):
            raise InvalidInputError(
                f"Эллипсоид {self.semi_axes} не помещается в объём с отступом {ELLIPSOID_MARGIN_MM} мм"
            )
        if self.n_fiducials < 3:
            raise InvalidInputError(f"n_fiducials должно быть >= 3: {self.n_fiducials}")
        for name in ("fiducial_radius", "texture_scale_mm", "boundary_ramp_mm", "core_length_mm"):
            if getattr(self, name) <= 0:
                raise InvalidInputError(f"{name} должно быть > 0")
        if self.speckle_sigma < 0 or self.tissue_texture < 0:
            raise InvalidInputError("speckle_sigma и tissue_texture не могут быть отрицательными")
        for name in ("prostate_mean", "background_mean", "fiducial_intensity"):
            if not 0 <= getattr(self, name) <= 255:
                raise InvalidInputError(f"{name} должно лежать в [0, 255]")
        if not 0 <= int(self.seed) < SEED_LIMIT:
            raise InvalidInputError(f"seed должен лежать в [0, 2^64): {self.seed}")

    @property
    def volume_ml(self):
        """Аналитический объём эллипсоида, мл."""
        a, b, c = self.semi_axes
        return 4.0 / 3.0 * math.pi * a * b * c / 1000.0

    @property
    def origin(self):
        """Мировая позиция вокселя (0, 0, 0): центр сетки совпадает с началом координат."""
        return -(np.asarray(self.dims) - 1) * np.asarray(self.spacing) / 2.0

    @property
    def bbox(self):
        """Бокс простаты [[x0, x1], [y0, y1], [z0, z1]], мм."""
        return [[-a, a] for a in self.semi_axes]

    def with_overrides(self, **overrides):
        known = {f.name for f in fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise InvalidInputError(f"Неизвестные параметры фантома: {', '.join(sorted(unknown))}")
        return replace(self, **overrides)

    def to_document(self):
        document = asdict(self)
        for name in ("dims", "spacing", "semi_axes"):
            document[name] = list(document[name])
        return document


@dataclass(frozen=True)
class GroundTruth:
    """
    Эталон для пары объёмов.

    Attributes:
        transform (RigidTransform): Подвижный -> опорный
        fiducials_ref (ndarray): Фидуциалы в опорном объёме (N, 3), мм
        fiducials_mov (ndarray): Фидуциалы в подвижном объёме (N, 3), мм
        config (PhantomConfig): Параметры фантома
    """
    transform: RigidTransform
    fiducials_ref: np.ndarray
    fiducials_mov: np.ndarray
    config: PhantomConfig

    @property
    def fiducial_ids(self):
        return tuple(f"f{i + 1}" for i in range(len(self.fiducials_ref)))


@dataclass(frozen=True)
class Anatomy:
    """Неслучайная по отношению к спеклу часть фантома: текстура и фидуциалы."""
    config: PhantomConfig
    texture: np.ndarray = field(repr=False)
    fiducials: np.ndarray


def place_fiducials(cfg):
    """
    Центры фидуциалов: равномерно внутри уменьшенного эллипсоида,
    попарно не ближе FIDUCIAL_MIN_DISTANCE_MM.

    Raises:
        InvalidInputError: Не удалось разместить n_fiducials точек
    """
    rng = philox(cfg.seed, STREAM_FIDUCIALS)
    axes = np.asarray(cfg.semi_axes) * FIDUCIAL_SHELL
    points = []
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        unit = rng.uniform(-1.0, 1.0, size=3)
        if np.dot(unit, unit) >= 1.0:
            continue
        candidate = unit * axes
        if all(np.linalg.norm(candidate - p) >= FIDUCIAL_MIN_DISTANCE_MM for p in points):
            points.append(candidate)
            if len(points) == cfg.n_fiducials:
                return np.array(points)
    raise InvalidInputError(f"Не удалось разместить {cfg.n_fiducials} фидуциалов в эллипсоиде {cfg.semi_axes}")


def _map_slabs(function, n_slabs, workers):
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(function, range(n_slabs)))
    return [function(k) for k in range(n_slabs)]


def _normal_field(seed, stream, dims, workers):
    nx, ny, nz = dims
    slabs = _map_slabs(lambda k: philox(seed, stream, k).standard_normal((nx, ny)), nz, workers)
    return np.stack(slabs, axis=2)


def build_anatomy(cfg, workers=1):
    """Эхотекстура единичной дисперсии и центры фидуциалов для seed конфигурации."""
    noise = _normal_field(cfg.seed, STREAM_TEXTURE, cfg.dims, workers)
    sigma = [cfg.texture_scale_mm / s for s in cfg.spacing]
    texture = ndimage.gaussian_filter(noise, sigma=sigma, mode="reflect")
    texture /= texture.std()
    texture.flags.writeable = False
    return Anatomy(config=cfg, texture=texture, fiducials=place_fiducials(cfg))


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def evaluate_field(anatomy, points):
    """
    Незашумлённая интенсивность в мировых точках опорной системы.

    Args:
        anatomy (Anatomy): Анатомия фантома
        points (ndarray): Точки (N, 3), мм

    Returns:
        ndarray: Интенсивности (N,)
    """
    cfg = anatomy.config
    axes = np.asarray(cfg.semi_axes)
    scaled = points / axes
    r = np.sqrt(np.einsum("ij,ij->i", scaled, scaled))
    # расстояние до поверхности в первом приближении: (r - 1) / |grad r|
    grad = np.linalg.norm(points / axes ** 2, axis=1) / np.maximum(r, 1e-12)
    distance = (r - 1.0) / np.maximum(grad, 1e-12)
    inside = _smoothstep(0.5 - distance / cfg.boundary_ramp_mm)
    values = cfg.background_mean + (cfg.prostate_mean - cfg.background_mean) * inside

    idx = (points - cfg.origin) / np.asarray(cfg.spacing)
    texture = ndimage.map_coordinates(anatomy.texture, idx.T, order=1, mode="nearest", prefilter=False)
    values = values * (1.0 + cfg.tissue_texture * texture)

    # частичный объём на границе шарика шириной в один воксель
    edge = min(cfg.spacing)
    for center in anatomy.fiducials:
        d = np.linalg.norm(points - center, axis=1)
        weight = np.clip((cfg.fiducial_radius + edge / 2.0 - d) / edge, 0.0, 1.0)
        values = values * (1.0 - weight) + cfg.fiducial_intensity * weight
    return values


def render(anatomy, transform, noise_seed, workers=1):
    """
    Объём в системе, переведённой в опорную преобразованием transform.

    Воксель с мировой позицией q получает значение поля в transform(q)
    и независимый спекл из потока noise_seed.

    Returns:
        Volume3: uint8
    """
    cfg = anatomy.config
    nx, ny, nz = cfg.dims
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    plane = np.column_stack([i.ravel(), j.ravel(), np.zeros(i.size)])
    geometry = Volume3(data=np.zeros((2, 2, 2), dtype=np.uint8), spacing=cfg.spacing, origin=cfg.origin)
    sigma = cfg.speckle_sigma

    def slab(k):
        idx = plane.copy()
        idx[:, 2] = k
        points = apply_point(transform, index_to_world(geometry, idx))
        clean = evaluate_field(anatomy, points).reshape(nx, ny)
        speckle = np.exp(sigma * philox(noise_seed, STREAM_SPECKLE, k).standard_normal((nx, ny)) - sigma ** 2 / 2)
        return np.clip(np.rint(clean * speckle), 0, 255).astype(np.uint8)

    data = np.stack(_map_slabs(slab, nz, workers), axis=2)
    return Volume3(data=data, spacing=cfg.spacing, origin=cfg.origin, intensity_type="uint8")


def check_motion(transform):
    """
    Raises:
        InvalidInputError: Движение вне границ правдоподобия
    """
    shift = float(np.linalg.norm(transform.translation))
    angle = transform.rotation_angle_deg()
    if shift > MAX_TRANSLATION_MM or angle > MAX_ROTATION_DEG:
        raise InvalidInputError(
            f"Движение вне границ ({MAX_TRANSLATION_MM} мм, {MAX_ROTATION_DEG} град): "
            f"{shift:.2f} мм, {angle:.2f} град"
        )


def generate_reference(cfg, workers=1, anatomy=None):
    """
    Опорный объём фантома.

    Returns:
        tuple: (Volume3, GroundTruth с тождественным преобразованием)
    """
    anatomy = anatomy or build_anatomy(cfg, workers)
    identity = RigidTransform.identity()
    volume = render(anatomy, identity, cfg.seed, workers)
    truth = GroundTruth(
        transform=identity, fiducials_ref=anatomy.fiducials, fiducials_mov=anatomy.fiducials, config=cfg,
    )
    logger.info("Опорный фантом: %s, простата %.1f мл, фидуциалов %d", volume, cfg.volume_ml, cfg.n_fiducials)
    return volume, truth


def generate_moving(cfg, T_true, noise_seed, workers=1, anatomy=None, check_bounds=True):
    """
    Подвижный объём: та же анатомия, сдвинутая T_true^-1, и новый спекл.

    Args:
        cfg (PhantomConfig): Параметры фантома
        T_true (RigidTransform): Эталон подвижный -> опорный
        noise_seed (int): Seed спекла
        check_bounds (bool): Проверять границы правдоподобия движения

    Returns:
        tuple: (Volume3, GroundTruth)

    Raises:
        InvalidInputError: Движение вне границ
    """
    if check_bounds:
        check_motion(T_true)
    anatomy = anatomy or build_anatomy(cfg, workers)
    volume = render(anatomy, T_true, noise_seed, workers)
    truth = GroundTruth(
        transform=T_true,
        fiducials_ref=anatomy.fiducials,
        fiducials_mov=apply_point(invert(T_true), anatomy.fiducials),
        config=cfg,
    )
    return volume, truth


def random_motion(rng, max_translation_mm, max_rotation_deg):
    """Сдвиг равномерно в шаре и поворот с равномерной осью и углом в [0, max]."""
    direction = rng.standard_normal(3)
    direction /= np.linalg.norm(direction)
    translation = direction * max_translation_mm * rng.uniform() ** (1.0 / 3.0)
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    angle = math.radians(max_rotation_deg) * rng.uniform()
    rotation = Rotation.from_rotvec(axis * angle).as_matrix()
    return RigidTransform(rotation=rotation, translation=translation, center=np.zeros(3))


@dataclass(frozen=True)
class PhantomSession:
    """
    Синтетическая сессия биопсий.

    Attributes:
        reference (Volume3): Опорный объём
        volumes (tuple): Подвижные объёмы в порядке биопсий
        session (Session): Сессия с иглами в системах подвижных объёмов
        ground_truths (tuple): GroundTruth каждого подвижного объёма
        aimed (tuple): Сегменты игл в опорной системе (после ошибки прицеливания)
    """
    reference: Volume3
    volumes: tuple
    session: Session
    ground_truths: tuple
    aimed: tuple


def moving_volume_name(index):
    return f"moving_{index:02d}.mha"


def generate_session(cfg, n_biopsies, motion=(10.0, 10.0), seed=None, aim_sigma=0.0,
                     patient_id=None, chronological_rank=1, workers=1):
    """
    Опорный объём, n_biopsies подвижных объёмов и сессия 12-точечной биопсии.

    Цели идут в стандартном порядке (правая сторона BL, BS, ML, MS, AL, AS,
    затем левая) и повторяются, если биопсий больше 12. Запланированный
    сегмент длиной core_length_mm идёт вдоль оси AP через центр сектора
    от задней поверхности к передней; оба конца смещаются гауссовой ошибкой
    прицеливания с сигмой aim_sigma.

    Args:
        cfg (PhantomConfig): Параметры фантома
        n_biopsies (int): Число биопсий, >= 1
        motion (tuple): Границы движения (мм, градусы)
        seed (int): Seed движений, спекла и прицеливания; по умолчанию cfg.seed
        aim_sigma (float): Сигма ошибки прицеливания, мм

    Returns:
        PhantomSession

    Raises:
        InvalidInputError: n_biopsies < 1, отрицательная сигма или движение вне границ
    """
    if n_biopsies < 1:
        raise InvalidInputError(f"Число биопсий должно быть >= 1: {n_biopsies}")
    if aim_sigma < 0:
        raise InvalidInputError(f"Сигма прицеливания не может быть отрицательной: {aim_sigma}")
    seed = cfg.seed if seed is None else seed
    max_translation, max_rotation = motion

    anatomy = build_anatomy(cfg, workers)
    reference, _ = generate_reference(cfg, workers, anatomy=anatomy)
    grid = build_grid(cfg.bbox)
    noise_seeds = philox(seed, STREAM_NOISE_SEEDS).integers(0, 1 << 63, size=n_biopsies, dtype=np.int64)
    half = np.array([0.0, cfg.core_length_mm / 2.0, 0.0])

    volumes, truths, records, aimed = [], [], [], []
    for position in range(n_biopsies):
        index = position + 1
        label = RAW_LABELS[position % len(RAW_LABELS)]
        T_true = random_motion(philox(seed, STREAM_MOTION, index), max_translation, max_rotation)
        volume, truth = generate_moving(cfg, T_true, int(noise_seeds[position]), workers, anatomy=anatomy)

        center = grid.center(label)
        offsets = philox(seed, STREAM_AIM, index).standard_normal((2, 3)) * aim_sigma
        entry_ref = center + half + offsets[0]
        tip_ref = center - half + offsets[1]
        entry_mov, tip_mov = apply_point(invert(T_true), np.stack([entry_ref, tip_ref]))

        volumes.append(volume)
        truths.append(truth)
        aimed.append((entry_ref, tip_ref))
        records.append(BiopsyRecord(
            index=index,
            intended_target=label,
            needle=NeedleSegment(entry=entry_mov, tip=tip_mov, volume_id=moving_volume_name(index)),
        ))
        logger.debug("Биопсия %d (%s): %r", index, label, T_true)

    session = Session(
        patient_id=patient_id or f"phantom-{seed}",
        reference_volume_id="reference.mha",
        records=tuple(records),
        chronological_rank=chronological_rank,
        grid=grid,
    )
    logger.info(
        "Фантомная сессия %s: %d биопсий, сигма прицеливания %.2f мм",
        session.patient_id, n_biopsies, aim_sigma,
    )
    return PhantomSession(
        reference=reference,
        volumes=tuple(volumes),
        session=session,
        ground_truths=tuple(truths),
        aimed=tuple(aimed),
    )
