"""
Darknet TXT label codec

One object per line: "class_id cx cy w h", coordinates normalized to the
image, written canonically with 6-decimal fixed-point values, single spaces
and LF line ends.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union
import math

from heliodet.exceptions import LabelParseError
from heliodet.utils.file_handler import read_text, save_file
from heliodet.utils.geometry import BBox

# Smallest positive size at six decimals
MIN_WRITTEN_SIZE = 1e-6


@dataclass(frozen=True)
class Annotation:
    class_id: int
    bbox: BBox


def _parse_line(line: str, lineno: int, num_classes: Optional[int]) -> Annotation:
    fields = line.split()
    if len(fields) != 5:
        raise LabelParseError(lineno, f"expected 5 fields, got {len(fields)}")

    try:
        class_id = int(fields[0])
    except ValueError:
        raise LabelParseError(lineno, f"class id '{fields[0]}' is not an integer")
    if class_id < 0 or (num_classes is not None and class_id >= num_classes):
        raise LabelParseError(lineno, f"class id {class_id} out of range")

    values = []
    for name, text in zip(("cx", "cy", "w", "h"), fields[1:]):
        try:
            value = float(text)
        except ValueError:
            raise LabelParseError(lineno, f"{name} '{text}' is not a number")
        if not math.isfinite(value):
            raise LabelParseError(lineno, f"{name} is not finite")
        values.append(value)

    cx, cy, w, h = values
    if not (0.0 <= cx <= 1.0):
        raise LabelParseError(lineno, f"cx {cx} outside [0, 1]")
    if not (0.0 <= cy <= 1.0):
        raise LabelParseError(lineno, f"cy {cy} outside [0, 1]")
    if not (0.0 < w <= 1.0):
        raise LabelParseError(lineno, f"w {w} must be in (0, 1]")
    if not (0.0 < h <= 1.0):
        raise LabelParseError(lineno, f"h {h} must be in (0, 1]")
    return Annotation(class_id, BBox(cx, cy, w, h))


def parse_label_file(text: str, num_classes: Optional[int] = None) -> List[Annotation]:
    """
    Parse label text into annotations

    Args:
        text: File contents; blank lines are ignored
        num_classes: If given, class ids must be below it

    Returns:
        One Annotation per non-empty line, in file order

    Raises:
        LabelParseError: Wrong field count, non-numeric value, coordinate
            outside [0, 1] or non-positive size (with 1-based line number)
    """
    annots = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            annots.append(_parse_line(line, lineno, num_classes))
    return annots


def write_label_file(annots: Sequence[Annotation]) -> str:
    """
    Canonical label text ("" for no annotations)

    Sizes below MIN_WRITTEN_SIZE are written as MIN_WRITTEN_SIZE so that
    every line reads back.
    """
    return "".join(
        f"{a.class_id} {a.bbox.cx:.6f} {a.bbox.cy:.6f} "
        f"{max(a.bbox.w, MIN_WRITTEN_SIZE):.6f} {max(a.bbox.h, MIN_WRITTEN_SIZE):.6f}\n"
        for a in annots
    )


def read_labels(path: Union[str, Path], num_classes: Optional[int] = None) -> List[Annotation]:
    text = read_text(path)
    try:
        return parse_label_file(text, num_classes)
    except LabelParseError as e:
        raise LabelParseError(e.line, f"{path}: {e.detail}")


def save_labels(path: Union[str, Path], annots: Sequence[Annotation]) -> str:
    return save_file(path, write_label_file(annots))
