"""Rasterize text into binary masks with per-character boxes."""

import functools
import logging
from pathlib import Path

import freetype
import numpy as np

from ..errors import TextSourceError
from ..models import BBox, TextMask

logger = logging.getLogger(__name__)

FONT_SUFFIXES = (".ttf", ".otf")
COVERAGE_THRESHOLD = 0.5
MIN_PX_HEIGHT = 8
LOAD_FLAGS = freetype.FT_LOAD_RENDER | freetype.FT_LOAD_NO_HINTING


def load_fonts(directory: Path) -> list[Path]:
    """All TTF/OTF files under a directory, sorted by path."""
    directory = Path(directory)
    if not directory.is_dir():
        raise TextSourceError(f"Font directory not found: {directory}")
    fonts = sorted(p for p in directory.rglob("*") if p.suffix.lower() in FONT_SUFFIXES)
    if not fonts:
        raise TextSourceError(f"No .ttf or .otf fonts in {directory}")
    return fonts


@functools.lru_cache(maxsize=64)
def _face(path: str) -> freetype.Face:
    try:
        return freetype.Face(path)
    except freetype.FT_Exception as e:
        raise TextSourceError(f"Could not load font {path}: {e}") from e


def has_glyphs(text: str, font: Path) -> bool:
    """Whether the font covers every non-space character of text."""
    face = _face(str(font))
    return all(ch.isspace() or face.get_char_index(ch) != 0 for ch in text)


def _glyph_ink(face: freetype.Face, char: str) -> tuple[np.ndarray, int, int]:
    """Thresholded glyph bitmap plus its left and top bearings."""
    face.load_char(char, LOAD_FLAGS)
    glyph = face.glyph
    bitmap = glyph.bitmap
    if bitmap.rows == 0 or bitmap.width == 0:
        raise TextSourceError(f"Character {char!r} renders no ink")
    raw = np.array(bitmap.buffer, dtype=np.uint8).reshape(bitmap.rows, bitmap.pitch)
    coverage = raw[:, : bitmap.width].astype(np.float64) / 255.0
    ink = coverage >= COVERAGE_THRESHOLD
    if not ink.any():
        if coverage.max() <= 0:
            raise TextSourceError(f"Character {char!r} renders no ink")
        # Hairline glyphs keep their strongest pixel
        ink[np.unravel_index(np.argmax(coverage), coverage.shape)] = True
    return ink, glyph.bitmap_left, glyph.bitmap_top


def rasterize_text(text: str, font: Path, px_height: int) -> TextMask:
    """Render text on one baseline, unhinted, binarized at 50% coverage.

    The canvas is the tight ink box plus a 1-pixel margin; whitespace advances the
    pen but gets no character box.
    """
    if not text or not text.strip():
        raise TextSourceError("Cannot rasterize empty text")
    if px_height < MIN_PX_HEIGHT:
        raise TextSourceError(f"px_height must be >= {MIN_PX_HEIGHT}, got {px_height}")

    font = Path(font)
    face = _face(str(font))
    face.set_pixel_sizes(0, int(px_height))

    pen_x = 0  # 26.6 fixed point
    previous = 0
    placed = []  # (ink, x0, y0) with y measured downward from the baseline
    for char in text:
        index = face.get_char_index(char)
        if char.isspace():
            face.load_char(" " if face.get_char_index(" ") else char, LOAD_FLAGS)
            pen_x += face.glyph.advance.x
            previous = 0
            continue
        if index == 0:
            raise TextSourceError(f"Font {font.name} has no glyph for {char!r}")
        if previous and face.has_kerning:
            pen_x += face.get_kerning(previous, index, freetype.FT_KERNING_UNFITTED).x

        ink, left, top = _glyph_ink(face, char)
        ys, xs = np.nonzero(ink)
        x_origin = int(round(pen_x / 64.0)) + left
        placed.append(
            (
                ink[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1],
                x_origin + int(xs.min()),
                -top + int(ys.min()),
            )
        )
        pen_x += face.glyph.advance.x
        previous = index

    min_x = min(x for _, x, _ in placed)
    min_y = min(y for _, _, y in placed)
    max_x = max(x + ink.shape[1] for ink, x, _ in placed)
    max_y = max(y + ink.shape[0] for ink, _, y in placed)
    shift_x, shift_y = 1 - min_x, 1 - min_y

    mask = np.zeros((max_y - min_y + 2, max_x - min_x + 2), dtype=np.uint8)
    char_boxes = []
    for ink, x, y in placed:
        x0, y0 = x + shift_x, y + shift_y
        h, w = ink.shape
        mask[y0 : y0 + h, x0 : x0 + w] |= ink.astype(np.uint8)
        char_boxes.append(BBox(x0=x0, y0=y0, x1=x0 + w, y1=y0 + h))

    return TextMask(
        mask=mask,
        transcript=text,
        char_boxes=char_boxes,
        baseline_y=shift_y,
        px_height=int(px_height),
    )
