"""Fuse contour regions with an external semantic label map."""

import logging
from fractions import Fraction
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import ConfigError, SemanticMapError
from ..models import CandidateRegion, Region, SemanticMap

logger = logging.getLogger(__name__)

DEFAULT_MIN_SCORE = 0.6
DEFAULT_MIN_AREA_FRAC = 0.005
DEFAULT_WHITELIST = ("signboard", "building", "wall", "car", "door", "board")


def load_palette(path: Path) -> dict[int, str]:
    """Read a palette file of `index<TAB>class_name` lines."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as e:
        raise SemanticMapError(f"Palette not found: {path}") from e
    except UnicodeDecodeError as e:
        raise SemanticMapError(f"Palette is not valid UTF-8: {path}") from e

    palette: dict[int, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.rstrip("\r\n").split("\t")
        if len(parts) != 2 or not parts[1].strip():
            raise SemanticMapError(f"{path}:{lineno}: expected 'index<TAB>class_name'")
        try:
            index = int(parts[0])
        except ValueError as e:
            raise SemanticMapError(f"{path}:{lineno}: bad index {parts[0]!r}") from e
        if index in palette:
            raise SemanticMapError(f"{path}:{lineno}: duplicate index {index}")
        name = parts[1].strip()
        if name in palette.values():
            raise SemanticMapError(f"{path}:{lineno}: duplicate class {name!r}")
        palette[index] = name

    if not palette:
        raise SemanticMapError(f"Palette is empty: {path}")
    return palette


def load_semantic_map(image_path: Path, palette_path: Path) -> SemanticMap:
    """Load an indexed (or 8-bit grayscale) PNG and validate it against a palette."""
    image_path = Path(image_path)
    palette = load_palette(palette_path)
    if not image_path.exists():
        raise SemanticMapError(f"Semantic map not found: {image_path}")

    try:
        with Image.open(image_path) as img:
            img.load()
            if img.mode not in ("P", "L", "I", "I;16"):
                raise SemanticMapError(
                    f"Semantic map must be indexed or single-channel, got {img.mode}: {image_path}"
                )
            class_ids = np.asarray(img, dtype=np.int64)
    except (UnidentifiedImageError, OSError) as e:
        raise SemanticMapError(f"Could not decode semantic map {image_path}: {e}") from e

    unknown = sorted(set(np.unique(class_ids).tolist()) - set(palette))
    if unknown:
        raise SemanticMapError(
            f"Semantic map {image_path} uses index {unknown[0]} missing from the palette"
        )
    return SemanticMap(class_ids=class_ids, palette=palette)


def _class_counts(region: Region, semantic_map: SemanticMap) -> dict[int, int]:
    if region.area < 1 or not region.mask.any():
        raise SemanticMapError(f"Region {region.id} is empty")
    bbox = region.bbox
    if bbox.x1 > semantic_map.width or bbox.y1 > semantic_map.height:
        raise SemanticMapError(
            f"Region {region.id} bbox {bbox} exceeds semantic map "
            f"{semantic_map.width}x{semantic_map.height}"
        )
    window = semantic_map.class_ids[bbox.y0 : bbox.y1, bbox.x0 : bbox.x1]
    ids, counts = np.unique(window[region.mask], return_counts=True)
    return {int(i): int(c) for i, c in zip(ids, counts)}


def overlap_fractions(region: Region, semantic_map: SemanticMap) -> dict[str, Fraction]:
    """Exact fraction of the region's pixels in each semantic class."""
    counts = _class_counts(region, semantic_map)
    total = sum(counts.values())
    fractions: dict[str, Fraction] = {}
    for class_id, count in counts.items():
        name = semantic_map.palette[class_id]
        fractions[name] = fractions.get(name, Fraction(0)) + Fraction(count, total)
    return fractions


def semantic_score(region: Region, semantic_map: SemanticMap) -> tuple[float, str]:
    """Top class fraction and its class name.

    Ties go to the larger absolute overlap, then the smaller class id.
    """
    counts = _class_counts(region, semantic_map)
    total = sum(counts.values())
    best_id = min(counts, key=lambda class_id: (-counts[class_id], class_id))
    return counts[best_id] / total, semantic_map.palette[best_id]


def select_candidates(
    regions: list[Region],
    semantic_map: SemanticMap,
    whitelist: set[str] | frozenset[str] | list[str],
    min_score: float = DEFAULT_MIN_SCORE,
    min_area_frac: float = DEFAULT_MIN_AREA_FRAC,
) -> list[CandidateRegion]:
    """Keep whitelisted, high-score, large-enough regions, best first."""
    whitelist = set(whitelist)
    if not whitelist:
        raise ConfigError("Semantic whitelist is empty")
    for name, value in (("min_score", min_score), ("min_area_frac", min_area_frac)):
        if not 0.0 <= value <= 1.0:
            raise ConfigError(f"{name} must be in [0, 1], got {value}")

    min_area = min_area_frac * semantic_map.width * semantic_map.height
    candidates = []
    for region in regions:
        if region.area < min_area:
            continue
        score, dominant = semantic_score(region, semantic_map)
        if dominant not in whitelist or score < min_score:
            continue
        fractions = overlap_fractions(region, semantic_map)
        candidates.append(
            CandidateRegion(
                region=region,
                score=score,
                dominant_class=dominant,
                class_fractions={k: float(v) for k, v in fractions.items()},
            )
        )

    candidates.sort(key=lambda c: (-c.score, -c.region.area, c.region.id))
    logger.debug("%d of %d regions are text candidates", len(candidates), len(regions))
    return candidates


def sample_candidate(
    rng: np.random.Generator, candidates: list[CandidateRegion]
) -> CandidateRegion:
    """Draw one candidate with probability proportional to its score."""
    if not candidates:
        raise SemanticMapError("No candidates to sample from")
    weights = np.array([c.score for c in candidates], dtype=np.float64)
    if weights.sum() <= 0:
        weights = np.ones_like(weights)
    index = rng.choice(len(candidates), p=weights / weights.sum())
    return candidates[int(index)]
