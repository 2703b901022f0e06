"""
Image buffer and binary PPM/PGM codec

Images are owned uint8 buffers of shape (height, width, channels) with
1 (grey) or 3 (RGB) channels. The codec reads binary P5/P6 files with
maxval 255 (comment lines allowed in the header) and always writes the
canonical header "P6\\n{w} {h}\\n255\\n" (P5 for grey).
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union
import logging

import numpy as np
from PIL import Image as PILImage

from heliodet.exceptions import DecodeError, DatasetIOError
from heliodet.utils.file_handler import save_file

logger = logging.getLogger(__name__)

_WHITESPACE = b" \t\n\r\v\f"


@dataclass(frozen=True, eq=False)
class Image:
    """Row-major 8-bit image, interleaved channels"""

    data: np.ndarray

    def __post_init__(self):
        data = self.data
        if not isinstance(data, np.ndarray) or data.dtype != np.uint8:
            raise ValueError("Image data must be a uint8 numpy array")
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ValueError(f"Image data must be (H, W, 1|3), got {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"Image must be at least 1x1, got {data.shape[1]}x{data.shape[0]}")
        data = np.array(data, dtype=np.uint8, order="C", copy=True)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def size(self) -> Tuple[int, int]:
        """(width, height)"""
        return self.width, self.height

    def __eq__(self, other) -> bool:
        if not isinstance(other, Image):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)

    def __hash__(self):
        return hash((self.data.shape, self.data.tobytes()))

    @classmethod
    def blank(cls, width: int, height: int, channels: int = 3, value: int = 0) -> "Image":
        return cls(np.full((height, width, channels), value, dtype=np.uint8))

    def to_array(self) -> np.ndarray:
        """Writable copy of the pixel buffer"""
        return self.data.copy()

    def to_chw_float(self) -> np.ndarray:
        """Pixels scaled to [0, 1] as float32, channels first (network input layout)"""
        return (self.data.astype(np.float32) / np.float32(255.0)).transpose(2, 0, 1).copy()

    def to_rgb(self) -> "Image":
        if self.channels == 3:
            return self
        return Image(np.repeat(self.data, 3, axis=2))

    def to_pil(self) -> PILImage.Image:
        if self.channels == 1:
            return PILImage.fromarray(self.data[:, :, 0])
        return PILImage.fromarray(self.data)

    @classmethod
    def from_pil(cls, pil_image: PILImage.Image) -> "Image":
        if pil_image.mode not in ("L", "RGB"):
            pil_image = pil_image.convert("RGB")
        return cls(np.asarray(pil_image, dtype=np.uint8).copy())


def _skip_whitespace_and_comments(buf: bytes, pos: int) -> int:
    while pos < len(buf):
        c = buf[pos:pos + 1]
        if c in _WHITESPACE:
            pos += 1
        elif c == b"#":
            end = buf.find(b"\n", pos)
            pos = len(buf) if end < 0 else end + 1
        else:
            break
    return pos


def _read_header_int(buf: bytes, pos: int, name: str) -> Tuple[int, int]:
    pos = _skip_whitespace_and_comments(buf, pos)
    start = pos
    while pos < len(buf) and buf[pos:pos + 1].isdigit():
        pos += 1
    if start == pos:
        raise DecodeError(f"expected {name}", start)
    return int(buf[start:pos]), pos


def decode_ppm(buf: bytes) -> Image:
    """
    Decode a binary PPM (P6) or PGM (P5) file with maxval 255

    Args:
        buf: Raw file bytes

    Returns:
        Image with 3 channels for P6, 1 channel for P5

    Raises:
        DecodeError: Bad magic, unsupported maxval, or truncated pixel data
    """
    magic = buf[:2]
    if magic == b"P6":
        channels = 3
    elif magic == b"P5":
        channels = 1
    else:
        raise DecodeError(f"unknown magic {magic!r}, expected P5 or P6", 0)

    width, pos = _read_header_int(buf, 2, "width")
    height, pos = _read_header_int(buf, pos, "height")
    maxval_at = _skip_whitespace_and_comments(buf, pos)
    maxval, pos = _read_header_int(buf, pos, "maxval")
    if maxval != 255:
        raise DecodeError(f"unsupported maxval {maxval}, only 255 is supported", maxval_at)
    if width < 1 or height < 1:
        raise DecodeError(f"invalid dimensions {width}x{height}", 2)

    # Exactly one whitespace byte separates the header from the raster
    if pos >= len(buf) or buf[pos:pos + 1] not in _WHITESPACE:
        raise DecodeError("missing whitespace after maxval", pos)
    pos += 1

    expected = width * height * channels
    available = len(buf) - pos
    if available < expected:
        raise DecodeError(
            f"truncated pixel data: expected {expected} bytes, found {available}",
            len(buf),
        )
    if available > expected:
        logger.debug(f"Ignoring {available - expected} trailing bytes after raster")

    pixels = np.frombuffer(buf, dtype=np.uint8, count=expected, offset=pos)
    return Image(pixels.reshape(height, width, channels).copy())


def encode_ppm(img: Image) -> bytes:
    """Encode an Image in canonical binary PPM (3 channels) or PGM (1 channel) form"""
    magic = "P6" if img.channels == 3 else "P5"
    header = f"{magic}\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.data.tobytes()


def read_image(path: Union[str, Path]) -> Image:
    """Read a PPM/PGM file from disk"""
    path = Path(path)
    try:
        return decode_ppm(path.read_bytes())
    except FileNotFoundError:
        raise DatasetIOError("image file not found", [str(path)])


def write_image(path: Union[str, Path], img: Image) -> None:
    """Write an Image to disk as canonical PPM/PGM"""
    save_file(path, encode_ppm(img))
