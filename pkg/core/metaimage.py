"""
Чтение и запись объёмов в формате MetaImage (.mha / .mhd + .raw).

Поддерживается NDims = 3, ElementType MET_UCHAR / MET_SHORT / MET_FLOAT,
несжатые данные в порядке little-endian. TransformMatrix перечисляет
направляющие векторы осей индекса подряд (столбцы матрицы direction),
Offset - мировая позиция центра первого вокселя (LPS, мм).
"""
import logging
from pathlib import Path

import numpy as np

from .exceptions import MetaImageDataError, MetaImageHeaderError, UnsupportedElementTypeError
from .volume import Volume3

logger = logging.getLogger(__name__)

ELEMENT_TYPES = {
    "MET_UCHAR": np.dtype("<u1"),
    "MET_SHORT": np.dtype("<i2"),
    "MET_FLOAT": np.dtype("<f4"),
}
INTENSITY_TO_ELEMENT = {
    "uint8": "MET_UCHAR",
    "int16": "MET_SHORT",
    "float32": "MET_FLOAT",
}

# Ключи, которые читатель понимает; прочие игнорируются с предупреждением
KNOWN_KEYS = {
    "ObjectType", "NDims", "BinaryData", "BinaryDataByteOrderMSB", "ElementByteOrderMSB",
    "CompressedData", "TransformMatrix", "Offset", "Position", "Origin",
    "CenterOfRotation", "AnatomicalOrientation", "ElementSpacing", "DimSize",
    "ElementType", "ElementDataFile", "ElementNumberOfChannels",
}
REQUIRED_KEYS = ("NDims", "DimSize", "ElementType", "ElementSpacing", "ElementDataFile")

# Заголовок MetaImage короткий; ограничение защищает от чтения бинарного мусора
MAX_HEADER_LINES = 64


def _format_number(value):
    # repr даёт кратчайшую запись, восстанавливающую float без потерь
    return repr(float(value))


def _parse_floats(header, key, count):
    try:
        values = [float(v) for v in header[key].split()]
    except ValueError as exc:
        raise MetaImageHeaderError(f"Поле {key} содержит нечисловые значения: {header[key]!r}") from exc
    if len(values) != count:
        raise MetaImageHeaderError(f"Поле {key} должно содержать {count} чисел, получено {len(values)}")
    return values


def _read_header(stream):
    header = {}
    for _ in range(MAX_HEADER_LINES):
        raw = stream.readline()
        if not raw:
            break
        try:
            line = raw.decode("ascii").strip()
        except UnicodeDecodeError as exc:
            raise MetaImageHeaderError("Заголовок содержит не-ASCII данные") from exc
        if not line:
            continue
        if "=" not in line:
            raise MetaImageHeaderError(f"Строка заголовка без '=': {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        header[key] = value
        if key == "ElementDataFile":
            return header
    raise MetaImageHeaderError("В заголовке нет поля ElementDataFile")


def _parse_geometry(header):
    missing = [key for key in REQUIRED_KEYS if key not in header]
    if missing:
        raise MetaImageHeaderError(f"В заголовке отсутствуют поля: {', '.join(missing)}")

    if header["NDims"].strip() != "3":
        raise MetaImageHeaderError(f"Поддерживаются только трёхмерные объёмы, NDims = {header['NDims']}")
    if header.get("CompressedData", "False").strip().lower() == "true":
        raise MetaImageHeaderError("Сжатые данные (CompressedData = True) не поддерживаются")
    if header.get("BinaryDataByteOrderMSB", header.get("ElementByteOrderMSB", "False")).strip().lower() == "true":
        raise MetaImageHeaderError("Поддерживается только порядок байт little-endian")
    if header.get("ElementNumberOfChannels", "1").strip() != "1":
        raise MetaImageHeaderError("Поддерживаются только скалярные объёмы")

    element_type = header["ElementType"].strip()
    if element_type not in ELEMENT_TYPES:
        raise UnsupportedElementTypeError(f"Неподдерживаемый ElementType: {element_type}")

    try:
        dims = tuple(int(v) for v in header["DimSize"].split())
    except ValueError as exc:
        raise MetaImageHeaderError(f"DimSize должен содержать целые числа: {header['DimSize']!r}") from exc
    if len(dims) != 3 or min(dims) < 1:
        raise MetaImageHeaderError(f"DimSize должен содержать 3 положительных числа: {dims}")

    spacing = _parse_floats(header, "ElementSpacing", 3)
    origin_key = next((k for k in ("Offset", "Position", "Origin") if k in header), None)
    origin = _parse_floats(header, origin_key, 3) if origin_key else [0.0, 0.0, 0.0]
    if "TransformMatrix" in header:
        columns = _parse_floats(header, "TransformMatrix", 9)
        direction = np.asarray(columns, dtype=np.float64).reshape(3, 3).T
    else:
        direction = np.eye(3)

    for key in header:
        if key not in KNOWN_KEYS:
            logger.warning("Неизвестное поле заголовка MetaImage проигнорировано: %s", key)
    return dims, spacing, origin, direction, ELEMENT_TYPES[element_type]


def read_mha(path):
    """
    Читает объём MetaImage.

    Args:
        path (str | Path): .mha с ElementDataFile = LOCAL или .mhd с соседним .raw

    Returns:
        Volume3

    Raises:
        MetaImageHeaderError: Некорректный заголовок
        UnsupportedElementTypeError: Неподдерживаемый тип элементов
        MetaImageDataError: Длина данных не совпадает с DimSize
    """
    path = Path(path)
    with path.open("rb") as stream:
        header = _read_header(stream)
        dims, spacing, origin, direction, dtype = _parse_geometry(header)
        data_file = header["ElementDataFile"].strip()
        if data_file.upper() == "LOCAL":
            payload = stream.read()
        else:
            payload = (path.parent / data_file).read_bytes()

    expected = dims[0] * dims[1] * dims[2] * dtype.itemsize
    if len(payload) != expected:
        raise MetaImageDataError(
            f"{path.name}: ожидалось {expected} байт данных для DimSize {dims}, получено {len(payload)}"
        )
    # в файле быстрее всего меняется x: читаем как (nz, ny, nx) и транспонируем
    data = np.frombuffer(payload, dtype=dtype).reshape(dims[::-1]).transpose(2, 1, 0)
    try:
        return Volume3(
            data=data.astype(dtype.newbyteorder("="), copy=False),
            spacing=spacing,
            origin=origin,
            direction=direction,
        )
    except ValueError as exc:
        raise MetaImageHeaderError(f"{path.name}: {exc}") from exc


def header_text(vol, data_file="LOCAL"):
    """Текст заголовка MetaImage для объёма."""
    columns = vol.direction.T.reshape(-1)
    lines = [
        ("ObjectType", "Image"),
        ("NDims", "3"),
        ("BinaryData", "True"),
        ("BinaryDataByteOrderMSB", "False"),
        ("CompressedData", "False"),
        ("TransformMatrix", " ".join(_format_number(v) for v in columns)),
        ("Offset", " ".join(_format_number(v) for v in vol.origin)),
        ("ElementSpacing", " ".join(_format_number(v) for v in vol.spacing)),
        ("DimSize", " ".join(str(n) for n in vol.dims)),
        ("ElementType", INTENSITY_TO_ELEMENT[vol.intensity_type]),
        ("ElementDataFile", data_file),
    ]
    return "".join(f"{key} = {value}\n" for key, value in lines)


def write_mha(vol, path):
    """
    Записывает объём: .mha - одним файлом, .mhd - заголовок + соседний .raw.

    Returns:
        Path: Путь к записанному заголовку
    """
    path = Path(path)
    dtype = ELEMENT_TYPES[INTENSITY_TO_ELEMENT[vol.intensity_type]]
    # транспонированный вид сериализуется в C-порядке (nz, ny, nx), то есть x быстрее всех
    payload = vol.data.astype(dtype, copy=False).transpose(2, 1, 0).tobytes()

    if path.suffix.lower() == ".mhd":
        raw_path = path.with_suffix(".raw")
        path.write_text(header_text(vol, data_file=raw_path.name), encoding="ascii")
        raw_path.write_bytes(payload)
    else:
        with path.open("wb") as stream:
            stream.write(header_text(vol).encode("ascii"))
            stream.write(payload)
    logger.debug("Записан объём %s -> %s", vol, path)
    return path
