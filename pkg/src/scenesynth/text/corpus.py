"""Foreground text corpus loading and sampling."""

import logging
import unicodedata
from pathlib import Path

import numpy as np

from ..errors import TextSourceError
from ..models import Corpus

logger = logging.getLogger(__name__)

WORD = "word"
LINE = "line"
DEFAULT_WORD_PROBABILITY = 0.7
MAX_SAMPLE_TRIES = 100


def normalize_line(line: str) -> str:
    """NFC-normalize and collapse internal whitespace."""
    return " ".join(unicodedata.normalize("NFC", line).split())


def build_corpus(lines: list[str]) -> Corpus:
    normalized = [n for n in (normalize_line(line) for line in lines) if n]
    if not normalized:
        raise TextSourceError("Corpus is empty after normalization")
    words = [word for line in normalized for word in line.split(" ")]
    return Corpus(lines=normalized, words=words)


def load_corpus(path: Path) -> Corpus:
    """Load a newline-delimited UTF-8 corpus."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError as e:
        raise TextSourceError(f"Corpus not found: {path}") from e
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise TextSourceError(f"Corpus is not valid UTF-8: {path} ({e})") from e

    try:
        corpus = build_corpus(text.splitlines())
    except TextSourceError as e:
        raise TextSourceError(f"{e}: {path}") from e
    logger.debug("Loaded corpus %s: %d lines, %d words", path, len(corpus.lines), len(corpus.words))
    return corpus


def sample_mode(rng: np.random.Generator, word_probability: float = DEFAULT_WORD_PROBABILITY) -> str:
    """Pick word or line sampling."""
    return WORD if rng.random() < word_probability else LINE


def _truncate(text: str, max_chars: int) -> str:
    """Longest prefix of whole words that fits in max_chars (may be empty)."""
    if len(text) <= max_chars:
        return text
    kept = []
    length = 0
    for word in text.split(" "):
        extra = len(word) + (1 if kept else 0)
        if length + extra > max_chars:
            break
        kept.append(word)
        length += extra
    return " ".join(kept)


def sample_text(corpus: Corpus, rng: np.random.Generator, mode: str = WORD, max_chars: int = 25) -> str:
    """Uniformly sample a word or line, cut at a word boundary to fit max_chars.

    Entries that cannot be cut to fit are resampled, up to MAX_SAMPLE_TRIES times.
    """
    if mode not in (WORD, LINE):
        raise TextSourceError(f"Unknown sampling mode {mode!r}")
    if max_chars < 1:
        raise TextSourceError(f"max_chars must be >= 1, got {max_chars}")
    pool = corpus.words if mode == WORD else corpus.lines
    if not pool:
        raise TextSourceError("Corpus is empty")

    for _ in range(MAX_SAMPLE_TRIES):
        entry = pool[int(rng.integers(len(pool)))]
        text = _truncate(entry, max_chars)
        if text:
            return text
    raise TextSourceError(
        f"No {mode} of at most {max_chars} characters found after {MAX_SAMPLE_TRIES} tries"
    )
