"""
Иерархия исключений trusmap.

Каждый класс знает свой код завершения для команд manage.py,
поэтому команды переводят любое доменное исключение в CommandError
без отдельной таблицы соответствий.

Коды завершения:
    1 - ошибка использования (аргументы командной строки)
    2 - ошибка ввода/вывода или разбора файла
    3 - регистрация признана неуспешной
    4 - нарушение инвариантов во входных данных
"""

EXIT_USAGE = 1
EXIT_IO = 2
EXIT_REGISTRATION_FAILED = 3
EXIT_INVALID_INPUT = 4


class TrusmapError(Exception):
    """Базовое исключение всех доменных ошибок."""
    exit_code = EXIT_INVALID_INPUT


class InvalidInputError(TrusmapError, ValueError):
    """Входные данные нарушают инвариант (геометрия, конфигурация, бокс сетки)."""
    exit_code = EXIT_INVALID_INPUT


class GimbalLockError(InvalidInputError):
    """Поворот с |r_y| = pi/2 не раскладывается на углы ZYX однозначно."""


class PyramidError(InvalidInputError):
    """Объём слишком мал для запрошенного числа уровней пирамиды."""


class MappingError(InvalidInputError):
    """Несоответствие объёма или количества регистраций при переносе биопсий."""


class SimilarityError(TrusmapError, ArithmeticError):
    """Метрика сходства не может быть вычислена."""
    exit_code = EXIT_INVALID_INPUT


class InsufficientOverlapError(SimilarityError):
    """Доля перекрытия объёмов меньше допустимой."""


class DegenerateIntensityError(SimilarityError):
    """Нулевая дисперсия интенсивностей в одной из выборок."""


class FormatError(TrusmapError, ValueError):
    """Файл не удалось разобрать."""
    exit_code = EXIT_IO


class MetaImageHeaderError(FormatError):
    """Некорректный или неполный заголовок MetaImage."""


class MetaImageDataError(FormatError):
    """Размер блока данных не совпадает с DimSize."""


class UnsupportedElementTypeError(FormatError):
    """ElementType не входит в MET_UCHAR / MET_SHORT / MET_FLOAT."""


class SchemaError(FormatError):
    """
    JSON-документ не прошёл валидацию сериализатора.

    Attributes:
        detail: Ошибки DRF в исходном виде (поле -> список сообщений)
    """

    def __init__(self, message, detail=None):
        super().__init__(message)
        self.detail = detail
