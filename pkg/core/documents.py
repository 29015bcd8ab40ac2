"""
Загрузка и сохранение JSON-документов с валидацией через DRF-сериализаторы.
"""
import json
from pathlib import Path

from .exceptions import FormatError, SchemaError


def validate_document(serializer_class, payload, source="<document>", **kwargs):
    """
    Проверяет документ по схеме.

    Args:
        serializer_class: Класс сериализатора DRF
        payload (dict): Разобранный JSON
        source (str): Имя источника для сообщений об ошибках

    Returns:
        dict: validated_data сериализатора

    Raises:
        SchemaError: Если документ не соответствует схеме
    """
    serializer = serializer_class(data=payload, **kwargs)
    if not serializer.is_valid():
        raise SchemaError(f"{source}: документ не соответствует схеме: {serializer.errors}", serializer.errors)
    return serializer.validated_data


def read_document(path, serializer_class=None, **kwargs):
    """
    Читает JSON-файл и, если задан сериализатор, валидирует его.

    Raises:
        FormatError: Некорректный JSON
        SchemaError: Документ не соответствует схеме
        OSError: Файл недоступен
    """
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: некорректный JSON или кодировка: {exc}") from exc
    if serializer_class is None:
        return payload
    return validate_document(serializer_class, payload, source=str(path), **kwargs)


def write_document(path, payload):
    """Пишет JSON детерминированно: отступы, порядок ключей как в payload."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return path
