"""
File handling utilities for the dataset layout
"""

from pathlib import Path
from typing import Iterable, List, Union
import logging

from heliodet.exceptions import DatasetIOError

logger = logging.getLogger(__name__)

IMAGES_DIR = "images"
LABELS_DIR = "labels"
MANIFEST_NAME = "manifest.json"


def save_file(path: Union[str, Path], content: Union[bytes, str]) -> str:
    """
    Write a file, creating parent directories

    Args:
        path: Destination path
        content: Bytes, or text written as UTF-8 with LF line ends

    Returns:
        File path as string

    Raises:
        DatasetIOError: If the file cannot be written
    """
    file_path = Path(path)
    try:
        file_path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(content, str):
            file_path.write_bytes(content.encode("utf-8"))
        else:
            file_path.write_bytes(content)
    except OSError as e:
        logger.error(f"Error saving file: {e}")
        raise DatasetIOError(f"cannot write file ({e.strerror or e})", [str(file_path)])

    logger.debug(f"File saved: {file_path}")
    return str(file_path)


def read_text(path: Union[str, Path]) -> str:
    file_path = Path(path)
    try:
        return file_path.read_bytes().decode("utf-8")
    except FileNotFoundError:
        raise DatasetIOError("file not found", [str(file_path)])


def require_files(paths: Iterable[Union[str, Path]]) -> None:
    """
    Check that every path exists

    Raises:
        DatasetIOError: Listing all missing paths at once
    """
    missing: List[str] = [str(p) for p in paths if not Path(p).is_file()]
    if missing:
        raise DatasetIOError(f"{len(missing)} dataset file(s) missing", missing)


def image_path(stem: str) -> str:
    """Manifest-relative image path for a scene stem"""
    return f"{IMAGES_DIR}/{stem}.ppm"


def label_path(stem: str) -> str:
    return f"{LABELS_DIR}/{stem}.txt"
