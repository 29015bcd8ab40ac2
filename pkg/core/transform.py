"""
Алгебра жёстких преобразований (6 степеней свободы).

Преобразование переводит мировые координаты подвижного объёма в мировые
координаты опорного: apply(q) = R (q - center) + center + t.
Параметризация - внутренние углы Эйлера ZYX: R = Rz(r_z) Ry(r_y) Rx(r_x).
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .exceptions import GimbalLockError, InvalidInputError

# Порог вырождения: |cos(r_y)| меньше него считается блокировкой осей
GIMBAL_EPS = 1e-9


def _frozen(array):
    result = np.array(array, dtype=np.float64)
    result.flags.writeable = False
    return result


@dataclass(frozen=True)
class TransformParams:
    """
    Вектор параметров оптимизатора.

    Attributes:
        t (tuple): Сдвиг (tx, ty, tz), мм
        r (tuple): Углы (r_x, r_y, r_z), радианы; применяются Z, затем Y, затем X
    """
    t: tuple = (0.0, 0.0, 0.0)
    r: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "t", tuple(float(v) for v in self.t))
        object.__setattr__(self, "r", tuple(float(v) for v in self.r))
        if any(abs(v) > math.pi for v in self.r):
            raise InvalidInputError(f"Углы должны лежать в [-pi, pi]: {self.r}")

    def as_vector(self, angle_scale=1.0):
        """Вектор из 6 чисел; углы умножены на angle_scale (мм на радиан)."""
        return np.concatenate([self.t, np.asarray(self.r) * angle_scale])

    @classmethod
    def from_vector(cls, vector, angle_scale=1.0):
        vector = np.asarray(vector, dtype=np.float64)
        angles = (vector[3:] / angle_scale + math.pi) % (2 * math.pi) - math.pi
        return cls(t=tuple(vector[:3]), r=tuple(angles))


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """
    Жёсткое преобразование подвижный -> опорный.

    Attributes:
        rotation (ndarray): Собственная ортогональная матрица 3x3
        translation (ndarray): Сдвиг, мм
        center (ndarray): Неподвижный центр поворота, мм
    """
    rotation: np.ndarray
    translation: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        rotation = _frozen(self.rotation)
        if rotation.shape != (3, 3):
            raise InvalidInputError("Матрица поворота должна быть 3x3")
        if not np.allclose(rotation.T @ rotation, np.eye(3), atol=1e-9) \
                or abs(np.linalg.det(rotation) - 1.0) > 1e-9:
            raise InvalidInputError("Матрица не является собственным поворотом")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", _frozen(self.translation).reshape(3))
        object.__setattr__(self, "center", _frozen(self.center).reshape(3))
        # apply(q) = R q + offset; при R = I и t = 0 offset точно равен нулю
        offset = self.center + self.translation - rotation @ self.center
        object.__setattr__(self, "offset", _frozen(offset))

    @classmethod
    def identity(cls, center=(0.0, 0.0, 0.0)):
        return cls(rotation=np.eye(3), translation=np.zeros(3), center=center)

    @classmethod
    def from_matrix(cls, rotation, offset, center=(0.0, 0.0, 0.0)):
        """Строит преобразование q -> R q + offset с заданным центром."""
        rotation = np.asarray(rotation, dtype=np.float64)
        center = np.asarray(center, dtype=np.float64)
        translation = np.asarray(offset, dtype=np.float64) - center + rotation @ center
        return cls(rotation=rotation, translation=translation, center=center)

    def rotation_angle_deg(self):
        """Угол поворота (ось-угол) в градусах."""
        # from_matrix не принимает read-only буфер
        return math.degrees(Rotation.from_matrix(np.array(self.rotation)).magnitude())

    def is_identity(self, atol=0.0):
        return np.allclose(self.rotation, np.eye(3), atol=atol, rtol=0) \
            and np.allclose(self.translation, 0.0, atol=atol, rtol=0)

    def __repr__(self):
        return (
            f"RigidTransform(t={np.round(self.translation, 4).tolist()}, "
            f"angle={self.rotation_angle_deg():.4f} deg, center={self.center.tolist()})"
        )


def from_params(p, center=(0.0, 0.0, 0.0)):
    """
    Преобразование из параметров: R = Rz Ry Rx, поворот вокруг center.

    Args:
        p (TransformParams): Сдвиг и углы
        center (array-like): Центр поворота, мм

    Returns:
        RigidTransform
    """
    rx, ry, rz = p.r
    rotation = Rotation.from_euler("ZYX", [rz, ry, rx]).as_matrix()
    return RigidTransform(rotation=rotation, translation=p.t, center=center)


def to_params(T):
    """
    Обратное к from_params на невырожденной области.

    Raises:
        GimbalLockError: Если |r_y| = pi/2 (cos r_y = 0)
    """
    R = T.rotation
    cos_ry = math.hypot(R[0, 0], R[1, 0])
    if cos_ry < GIMBAL_EPS:
        raise GimbalLockError("Блокировка осей: r_y = +-pi/2, углы ZYX не определены")
    ry = math.atan2(-R[2, 0], cos_ry)
    rx = math.atan2(R[2, 1], R[2, 2])
    rz = math.atan2(R[1, 0], R[0, 0])
    return TransformParams(t=tuple(T.translation), r=(rx, ry, rz))


def apply_point(T, q):
    """
    Применяет преобразование к точке или массиву точек (N, 3).

    Returns:
        ndarray: R (q - center) + center + t
    """
    q = np.asarray(q, dtype=np.float64)
    return q @ T.rotation.T + T.offset


def compose(A, B):
    """
    Композиция: apply(compose(A, B), q) = apply(A, apply(B, q)).

    Центр результата берётся из B.
    """
    rotation = A.rotation @ B.rotation
    offset = A.rotation @ B.offset + A.offset
    return RigidTransform.from_matrix(_orthonormalize(rotation), offset, center=B.center)


def invert(T):
    """Обратное преобразование с тем же центром поворота."""
    rotation = T.rotation.T
    offset = -(rotation @ T.offset)
    return RigidTransform.from_matrix(rotation, offset, center=T.center)


def _orthonormalize(rotation):
    # накопленная погрешность произведения не должна выводить матрицу из SO(3)
    u, _, vt = np.linalg.svd(rotation)
    return u @ vt


def to_document(T):
    """
    JSON-представление преобразования (углы в градусах, порядок Z, Y, X).

    Returns:
        dict: {"schema_version", "translation_mm", "rotation_zyx_deg", "center_mm"}
    """
    params = to_params(T)
    rx, ry, rz = params.r
    return {
        "schema_version": "1.0",
        "translation_mm": [float(v) for v in params.t],
        "rotation_zyx_deg": [math.degrees(rz), math.degrees(ry), math.degrees(rx)],
        "center_mm": [float(v) for v in T.center],
    }


def from_document(document):
    """Обратное к to_document; документ должен быть уже провалидирован."""
    rz, ry, rx = (math.radians(v) for v in document["rotation_zyx_deg"])
    params = TransformParams(t=tuple(document["translation_mm"]), r=(rx, ry, rz))
    return from_params(params, center=document["center_mm"])
