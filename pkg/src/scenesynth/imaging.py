"""Raster image model, file I/O, colour conversion and interpolation.

Images are held as normalized float64 arrays of shape (height, width, channels);
8-bit quantisation only happens when reading or writing files.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from skimage import color

from .errors import ImagingError
from .models import BBox

logger = logging.getLogger(__name__)

# Sampling tolerance for points that land a hair outside the grid after projective algebra
EDGE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class RasterImage:
    """An immutable image with intensities in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ImagingError(f"Expected 1 or 3 channels, got shape {data.shape}")
        if data.size and (data.min() < 0.0 or data.max() > 1.0):
            raise ImagingError("Image values must lie in [0, 1]")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def channels(self) -> int:
        return int(self.data.shape[2])

    def to_rgb(self) -> "RasterImage":
        """Replicate a grayscale plane into three channels."""
        if self.channels == 3:
            return self
        return RasterImage(np.repeat(self.data, 3, axis=2))

    def to_gray(self) -> "RasterImage":
        """Luminance plane (Rec. 709 weights) of an RGB image."""
        if self.channels == 1:
            return self
        return RasterImage(np.clip(color.rgb2gray(self.data), 0.0, 1.0))


def load_image(path: Path) -> RasterImage:
    """Load a PNG or JPEG file; 8-bit samples map to v/255."""
    path = Path(path)
    if not path.exists():
        raise ImagingError(f"Image not found: {path}")

    try:
        with Image.open(path) as img:
            img.load()
            if img.mode in ("I;16", "I;16B", "I;16L", "I", "F"):
                raise ImagingError(f"Unsupported 16/32-bit image mode {img.mode}: {path}")
            if img.mode == "L":
                pixels = np.asarray(img, dtype=np.uint8)
            elif img.mode == "1":
                pixels = np.asarray(img.convert("L"), dtype=np.uint8)
            else:
                pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        raise ImagingError(f"Could not decode image {path}: {e}") from e

    return RasterImage(pixels.astype(np.float64) / 255.0)


def to_uint8(data: np.ndarray) -> np.ndarray:
    """Quantise normalized intensities to 8 bits (round half to even)."""
    return np.rint(np.clip(data, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(image: RasterImage, path: Path) -> None:
    """Write an image as PNG (lossless)."""
    path = Path(path)
    pixels = to_uint8(image.data)
    if image.channels == 1:
        pixels = pixels[:, :, 0]
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(pixels).save(path, format="PNG")
    except OSError as e:
        raise ImagingError(f"Could not write image {path}: {e}") from e


def rgb_to_lab(image: RasterImage) -> np.ndarray:
    """Per-pixel CIE Lab (D65, sRGB transfer) as a (height, width, 3) array."""
    if image.channels != 3:
        raise ImagingError("rgb_to_lab requires a 3-channel image")
    return color.rgb2lab(image.data, illuminant="D65", observer="2")


def lab_to_rgb(lab: np.ndarray) -> RasterImage:
    """Inverse of rgb_to_lab, clipped to the sRGB gamut."""
    rgb = color.lab2rgb(np.asarray(lab, dtype=np.float64), illuminant="D65", observer="2")
    return RasterImage(np.clip(rgb, 0.0, 1.0))


def sample_bilinear(data: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear samples of a (height, width[, channels]) array at many points.

    Points outside [0, width-1] x [0, height-1] sample as 0.
    """
    height, width = data.shape[:2]
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)

    inside = (
        (xs >= -EDGE_TOLERANCE)
        & (xs <= width - 1 + EDGE_TOLERANCE)
        & (ys >= -EDGE_TOLERANCE)
        & (ys <= height - 1 + EDGE_TOLERANCE)
    )
    x = np.clip(np.where(inside, xs, 0.0), 0.0, width - 1)
    y = np.clip(np.where(inside, ys, 0.0), 0.0, height - 1)

    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    fx = x - x0
    fy = y - y0

    values = data.astype(np.float64, copy=False)
    if values.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
        inside_b = inside[..., None]
    else:
        inside_b = inside

    top = values[y0, x0] * (1.0 - fx) + values[y0, x1] * fx
    bottom = values[y1, x0] * (1.0 - fx) + values[y1, x1] * fx
    out = top * (1.0 - fy) + bottom * fy
    return np.where(inside_b, out, 0.0)


def bilinear_sample(image: RasterImage, x: float, y: float) -> np.ndarray:
    """Interpolate the 4 neighbours of a continuous point; exact at integer coordinates."""
    if not (0.0 <= x <= image.width - 1 and 0.0 <= y <= image.height - 1):
        raise ImagingError(
            f"Point ({x}, {y}) outside image bounds {image.width}x{image.height}"
        )
    return sample_bilinear(image.data, np.array([x]), np.array([y]))[0]


def resize_array(data: np.ndarray, width: int, height: int) -> np.ndarray:
    """Bilinear resize of a raw array with pixel-centre alignment."""
    src_h, src_w = data.shape[:2]
    if (src_w, src_h) == (width, height):
        return np.array(data, dtype=np.float64)
    xs = (np.arange(width) + 0.5) * (src_w / width) - 0.5
    ys = (np.arange(height) + 0.5) * (src_h / height) - 0.5
    xs = np.clip(xs, 0.0, src_w - 1)
    ys = np.clip(ys, 0.0, src_h - 1)
    grid_x, grid_y = np.meshgrid(xs, ys)
    return sample_bilinear(data, grid_x, grid_y)


def resize(image: RasterImage, width: int, height: int) -> RasterImage:
    """Bilinear resize to (width, height)."""
    if width < 1 or height < 1:
        raise ImagingError(f"Invalid target size {width}x{height}")
    return RasterImage(np.clip(resize_array(image.data, width, height), 0.0, 1.0))


def crop(image: RasterImage, bbox: BBox) -> RasterImage:
    """Cut out a bbox, which must lie within the image."""
    if bbox.x0 < 0 or bbox.y0 < 0 or bbox.x1 > image.width or bbox.y1 > image.height:
        raise ImagingError(f"Crop {bbox} exceeds image {image.width}x{image.height}")
    return RasterImage(image.data[bbox.y0 : bbox.y1, bbox.x0 : bbox.x1])
