"""Foreground text sources: corpus sampling and glyph rasterization."""

from .corpus import build_corpus, load_corpus, sample_mode, sample_text
from .render import has_glyphs, load_fonts, rasterize_text

__all__ = [
    "build_corpus",
    "has_glyphs",
    "load_corpus",
    "load_fonts",
    "rasterize_text",
    "sample_mode",
    "sample_text",
]
