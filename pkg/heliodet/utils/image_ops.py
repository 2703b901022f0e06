"""
Pixel-level image operations
Resampling, letterboxing, orientation, colour adjustments, warps and overlays
"""

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple
import math

import numpy as np
from PIL import Image as PILImage, ImageDraw, ImageFilter

from heliodet.exceptions import ArgumentError
from heliodet.utils.geometry import BBox
from heliodet.utils.image_io import Image

DEFAULT_PAD_VALUE = 114


def round_half_away(values: np.ndarray) -> np.ndarray:
    """Round to nearest integer, halves away from zero"""
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


def to_uint8(values: np.ndarray) -> np.ndarray:
    """Quantize float pixels: round half away from zero, clamp to [0, 255]"""
    return np.clip(round_half_away(values), 0, 255).astype(np.uint8)


def _sample_positions(src: int, dst: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    # Half-pixel centres: dst pixel i samples source coordinate (i + 0.5) * src / dst - 0.5
    coords = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    coords = np.clip(coords, 0.0, src - 1)
    lo = np.floor(coords).astype(np.int64)
    hi = np.minimum(lo + 1, src - 1)
    frac = coords - lo
    return lo, hi, frac


def resize_bilinear(img: Image, new_w: int, new_h: int) -> Image:
    """
    Bilinear resize with half-pixel centres

    Args:
        img: Source image
        new_w: Target width (>= 1)
        new_h: Target height (>= 1)

    Returns:
        Resized image, same channel count; values rounded half away from zero

    Raises:
        ArgumentError: Non-positive target dimension
    """
    if new_w < 1 or new_h < 1:
        raise ArgumentError(f"resize target must be at least 1x1, got {new_w}x{new_h}")
    if (new_w, new_h) == img.size:
        return img

    src = img.data.astype(np.float64)
    y0, y1, fy = _sample_positions(img.height, new_h)
    x0, x1, fx = _sample_positions(img.width, new_w)

    fy = fy[:, None, None]
    rows = src[y0] * (1.0 - fy) + src[y1] * fy
    fx = fx[None, :, None]
    out = rows[:, x0] * (1.0 - fx) + rows[:, x1] * fx
    return Image(to_uint8(out))


@dataclass(frozen=True)
class LetterboxTransform:
    """Maps boxes between a source frame and its letterboxed destination"""

    scale: float
    pad_x: int
    pad_y: int
    src_w: int
    src_h: int
    dst_w: int
    dst_h: int

    @classmethod
    def fit(cls, src_w: int, src_h: int, dst_w: int, dst_h: int) -> "LetterboxTransform":
        scale = min(dst_w / src_w, dst_h / src_h)
        new_w, new_h = cls.content_size_for(src_w, src_h, scale)
        return cls(
            scale=scale,
            pad_x=(dst_w - new_w) // 2,
            pad_y=(dst_h - new_h) // 2,
            src_w=src_w,
            src_h=src_h,
            dst_w=dst_w,
            dst_h=dst_h,
        )

    @staticmethod
    def content_size_for(src_w: int, src_h: int, scale: float) -> Tuple[int, int]:
        new_w = max(1, int(math.floor(src_w * scale + 0.5)))
        new_h = max(1, int(math.floor(src_h * scale + 0.5)))
        return new_w, new_h

    @property
    def content_size(self) -> Tuple[int, int]:
        return self.content_size_for(self.src_w, self.src_h, self.scale)

    def point_to_dst(self, x: float, y: float) -> Tuple[float, float]:
        """Source pixel coordinates -> destination pixel coordinates"""
        return x * self.scale + self.pad_x, y * self.scale + self.pad_y

    def point_to_src(self, x: float, y: float) -> Tuple[float, float]:
        return (x - self.pad_x) / self.scale, (y - self.pad_y) / self.scale

    def box_to_dst(self, b: BBox) -> BBox:
        """Normalized source box -> normalized destination box"""
        cx, cy = self.point_to_dst(b.cx * self.src_w, b.cy * self.src_h)
        return BBox(
            cx / self.dst_w,
            cy / self.dst_h,
            b.w * self.src_w * self.scale / self.dst_w,
            b.h * self.src_h * self.scale / self.dst_h,
        )

    def box_to_src(self, b: BBox) -> BBox:
        """Normalized destination box -> normalized source box (unclamped)"""
        cx, cy = self.point_to_src(b.cx * self.dst_w, b.cy * self.dst_h)
        return BBox(
            cx / self.src_w,
            cy / self.src_h,
            b.w * self.dst_w / self.scale / self.src_w,
            b.h * self.dst_h / self.scale / self.src_h,
        )


def letterbox(
    img: Image,
    dst_w: int,
    dst_h: int,
    pad_value: int = DEFAULT_PAD_VALUE
) -> Tuple[Image, LetterboxTransform]:
    """
    Aspect-preserving resize into a dst_w x dst_h canvas with centred padding

    Args:
        img: Source image
        dst_w: Canvas width
        dst_h: Canvas height
        pad_value: Fill byte for the padding

    Returns:
        (letterboxed image, transform for mapping boxes)
    """
    transform = LetterboxTransform.fit(img.width, img.height, dst_w, dst_h)
    new_w, new_h = transform.content_size
    resized = resize_bilinear(img, new_w, new_h)

    canvas = np.full((dst_h, dst_w, img.channels), pad_value, dtype=np.uint8)
    canvas[transform.pad_y:transform.pad_y + new_h, transform.pad_x:transform.pad_x + new_w] = resized.data
    return Image(canvas), transform


def rotate90(img: Image, quarter_turns: int) -> Image:
    """Rotate clockwise by quarter_turns * 90 degrees"""
    return Image(np.rot90(img.data, k=-(quarter_turns % 4), axes=(0, 1)))


def hflip(img: Image) -> Image:
    return Image(img.data[:, ::-1])


def warp_affine(
    img: Image,
    matrix: np.ndarray,
    out_w: int,
    out_h: int,
    fill: int = DEFAULT_PAD_VALUE,
    nearest: bool = False
) -> Image:
    """
    Affine warp; matrix (2x3 or 3x3) maps source pixel coordinates to output coordinates

    Pixel i covers the continuous interval [i, i + 1) on both axes.
    """
    forward = np.eye(3)
    forward[:2] = np.asarray(matrix, dtype=np.float64)[:2]
    inverse = np.linalg.inv(forward)
    coeffs = tuple(float(v) for v in inverse[:2].ravel())
    resample = PILImage.Resampling.NEAREST if nearest else PILImage.Resampling.BILINEAR
    fillcolor = fill if img.channels == 1 else (fill, fill, fill)
    warped = img.to_pil().transform(
        (out_w, out_h),
        PILImage.Transform.AFFINE,
        data=coeffs,
        resample=resample,
        fillcolor=fillcolor,
    )
    return Image.from_pil(warped)


def to_grayscale(img: Image) -> Image:
    """Luma grayscale; keeps the channel count so RGB pipelines stay RGB"""
    if img.channels == 1:
        return img
    luma = Image.from_pil(img.to_pil().convert("L"))
    return luma.to_rgb()


def _hsv_adjust(img: Image, hue_shift_deg: float = 0.0, saturation_factor: float = 1.0) -> Image:
    if img.channels == 1:
        return img
    hsv = np.asarray(img.to_pil().convert("HSV"), dtype=np.float64)
    # Pillow stores hue on a 0..255 circle
    shift = hue_shift_deg / 360.0 * 256.0
    hsv[:, :, 0] = np.mod(round_half_away(hsv[:, :, 0] + shift), 256)
    hsv[:, :, 1] = hsv[:, :, 1] * saturation_factor
    channels = [PILImage.fromarray(c) for c in np.moveaxis(to_uint8(hsv), 2, 0)]
    out = PILImage.merge("HSV", channels).convert("RGB")
    return Image.from_pil(out)


def adjust_hue(img: Image, degrees: float) -> Image:
    return _hsv_adjust(img, hue_shift_deg=degrees)


def adjust_saturation(img: Image, factor: float) -> Image:
    return _hsv_adjust(img, saturation_factor=factor)


def adjust_brightness(img: Image, delta: float) -> Image:
    """Additive shift of delta * 255, clamped"""
    return Image(to_uint8(img.data.astype(np.float64) + delta * 255.0))


def adjust_exposure(img: Image, gamma: float) -> Image:
    """Gamma curve out = 255 * (in / 255) ** gamma; gamma < 1 brightens"""
    lut = to_uint8(255.0 * (np.arange(256, dtype=np.float64) / 255.0) ** gamma)
    return Image(lut[img.data])


def gaussian_blur(img: Image, sigma: float) -> Image:
    if sigma <= 0:
        return img
    return Image.from_pil(img.to_pil().filter(ImageFilter.GaussianBlur(radius=sigma)))


def add_noise(img: Image, fraction: float, rng: np.random.Generator) -> Image:
    """Replace a random fraction of pixels with uniformly random colours"""
    data = img.to_array()
    mask = rng.random((img.height, img.width)) < fraction
    data[mask] = rng.integers(0, 256, size=(int(mask.sum()), img.channels), dtype=np.uint8)
    return Image(data)


def fill_rect(img: Image, x0: int, y0: int, x1: int, y1: int, value: int) -> Image:
    """Set pixels of [x0, x1) x [y0, y1) (clipped to the image) to value"""
    data = img.to_array()
    x0, x1 = max(0, x0), min(img.width, x1)
    y0, y1 = max(0, y0), min(img.height, y1)
    if x1 > x0 and y1 > y0:
        data[y0:y1, x0:x1] = value
    return Image(data)


def draw_boxes(
    img: Image,
    boxes: Iterable[BBox],
    color: Tuple[int, int, int] = (255, 0, 0),
    width: int = 2,
    labels: Optional[Sequence[str]] = None
) -> Image:
    """Burn box outlines (and optional text labels) into an RGB copy of img"""
    pil = img.to_rgb().to_pil()
    draw = ImageDraw.Draw(pil)
    for i, box in enumerate(boxes):
        x1 = box.cx - box.w / 2
        y1 = box.cy - box.h / 2
        rect = [
            int(round(x1 * img.width)),
            int(round(y1 * img.height)),
            int(round((x1 + box.w) * img.width)) - 1,
            int(round((y1 + box.h) * img.height)) - 1,
        ]
        rect[2] = max(rect[2], rect[0])
        rect[3] = max(rect[3], rect[1])
        draw.rectangle(rect, outline=color, width=width)
        if labels is not None and i < len(labels):
            draw.text((rect[0] + 2, max(0, rect[1] - 10)), labels[i], fill=color)
    return Image.from_pil(pil)
