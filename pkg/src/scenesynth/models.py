"""Data models shared across region detection, text placement and the pipeline."""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class BBox:
    """Axis-aligned pixel box; x1 and y1 are exclusive."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.width, self.height))

    def corners(self) -> np.ndarray:
        """Pixel-centre corners, clockwise from top-left, as a 4x2 (x, y) array."""
        return np.array(
            [
                [self.x0, self.y0],
                [self.x1 - 1, self.y0],
                [self.x1 - 1, self.y1 - 1],
                [self.x0, self.y1 - 1],
            ],
            dtype=np.float64,
        )


@dataclass(frozen=True)
class LabColor:
    """A CIE Lab colour (D65)."""

    L: float
    a: float
    b: float


@dataclass
class RegionMap:
    """One region label per pixel."""

    labels: np.ndarray  # (height, width) int64
    region_count: int

    @property
    def width(self) -> int:
        return int(self.labels.shape[1])

    @property
    def height(self) -> int:
        return int(self.labels.shape[0])


@dataclass
class Region:
    """A homogeneous contour region."""

    id: int
    area: int
    bbox: BBox
    mean_lab: LabColor
    boundary: np.ndarray  # (n, 2) int (x, y), clockwise
    mask: np.ndarray  # (bbox.height, bbox.width) bool, bbox-local

    def pixel_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Absolute (ys, xs) of every region pixel."""
        ys, xs = np.nonzero(self.mask)
        return ys + self.bbox.y0, xs + self.bbox.x0


@dataclass
class SemanticMap:
    """Per-pixel semantic class ids with their names."""

    class_ids: np.ndarray  # (height, width) int64
    palette: dict[int, str]

    @property
    def width(self) -> int:
        return int(self.class_ids.shape[1])

    @property
    def height(self) -> int:
        return int(self.class_ids.shape[0])


@dataclass
class CandidateRegion:
    """A contour region scored against the semantic map."""

    region: Region
    score: float
    dominant_class: str
    class_fractions: dict[str, float]


@dataclass
class Corpus:
    """Normalized text lines and their whitespace-split words."""

    lines: list[str]
    words: list[str] = field(default_factory=list)


@dataclass
class TextMask:
    """A binary text raster with per-character geometry."""

    mask: np.ndarray  # (height, width) uint8 in {0, 1}
    transcript: str
    char_boxes: list[BBox]
    baseline_y: int
    px_height: int = 0  # nominal em size the mask was rendered at

    @property
    def width(self) -> int:
        return int(self.mask.shape[1])

    @property
    def height(self) -> int:
        return int(self.mask.shape[0])


@dataclass(frozen=True)
class Homography:
    """A 3x3 projective map, normalized so the bottom-right entry is 1 when nonzero."""

    matrix: np.ndarray

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))


@dataclass(frozen=True)
class Quad:
    """Four (x, y) vertices, clockwise from the text's top-left."""

    points: np.ndarray  # (4, 2) float64


@dataclass
class PlacedText:
    """A text mask warped into background coordinates."""

    warped_mask: np.ndarray  # (h, w) bool, local window
    origin: tuple[int, int]  # (x, y) of the window's top-left pixel
    quad: Quad
    transcript: str
    source: TextMask
    transform: np.ndarray = field(default_factory=lambda: np.eye(3))  # text-local -> background
    scale: float = 1.0  # text-local pixels to placed pixels

    def full_mask(self, width: int, height: int) -> np.ndarray:
        """The mask pasted into a (height, width) background-sized raster."""
        out = np.zeros((height, width), dtype=bool)
        x, y = self.origin
        h, w = self.warped_mask.shape
        clip_h, clip_w = max(0, min(h, height - y)), max(0, min(w, width - x))
        out[y : y + clip_h, x : x + clip_w] = self.warped_mask[:clip_h, :clip_w]
        return out


@dataclass
class Instance:
    """One annotated text instance and where it came from."""

    quad: Quad
    transcript: str
    region_id: int
    semantic_class: str
    score: float
    homography: np.ndarray


@dataclass
class SynthesisRecord:
    """The result of synthesizing one background image."""

    image_path: Path | None
    instances: list[Instance] = field(default_factory=list)
