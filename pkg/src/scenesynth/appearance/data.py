"""Training samples, real-crop sets and batch assembly for GAN training."""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ImagingError, TrainingError
from ..geometry import scale_mask
from ..imaging import load_image, resize_array
from ..models import BBox
from ..text.render import has_glyphs, rasterize_text

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass
class TrainingSample:
    """A background crop x, the text mask m laid over it, and its transcript."""

    x: np.ndarray  # (H, W, 3) float in [0, 1]
    m: np.ndarray  # (H, W) uint8 in {0, 1}
    transcript: str
    char_boxes: list[BBox] = field(default_factory=list)

    def __post_init__(self):
        if self.x.ndim != 3 or self.x.shape[2] != 3:
            raise TrainingError(f"Sample crop must be (H, W, 3), got {self.x.shape}")
        if self.m.shape != self.x.shape[:2]:
            raise TrainingError(f"Sample mask {self.m.shape} does not match crop {self.x.shape[:2]}")


@dataclass
class RealCropSet:
    """Real scene-text crops at the training resolution, (N, H, W, 3)."""

    images: np.ndarray

    def __post_init__(self):
        if len(self.images) == 0:
            raise TrainingError("Real crop set is empty")

    def __len__(self) -> int:
        return len(self.images)


def letterbox(data: np.ndarray, size: int) -> np.ndarray:
    """Fit inside size x size keeping the aspect ratio; pad with the mean colour."""
    h, w = data.shape[:2]
    factor = size / max(h, w)
    new_w = max(1, min(size, int(round(w * factor))))
    new_h = max(1, min(size, int(round(h * factor))))
    resized = np.clip(resize_array(data, new_w, new_h), 0.0, 1.0)
    out = np.empty((size, size, data.shape[2]), dtype=np.float64)
    out[:] = data.reshape(-1, data.shape[2]).mean(axis=0)
    y0 = (size - new_h) // 2
    x0 = (size - new_w) // 2
    out[y0 : y0 + new_h, x0 : x0 + new_w] = resized
    return out


def load_real_crops(directory: Path, size: int) -> RealCropSet:
    """Load every PNG/JPEG under a directory, letterboxed to size x size RGB."""
    directory = Path(directory)
    if not directory.is_dir():
        raise TrainingError(f"Real crop directory not found: {directory}")
    paths = sorted(p for p in directory.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES)
    images = []
    for path in paths:
        try:
            images.append(letterbox(load_image(path).to_rgb().data, size))
        except ImagingError as e:
            logger.warning("Skipping real crop %s: %s", path, e)
    if not images:
        raise TrainingError(f"No usable real crops in {directory}")
    logger.info("Loaded %d real crops from %s", len(images), directory)
    return RealCropSet(np.stack(images))


def _random_word(rng: np.random.Generator, alphabet: str, min_len: int = 2, max_len: int = 5) -> str:
    length = int(rng.integers(min_len, max_len + 1))
    return "".join(alphabet[int(i)] for i in rng.integers(len(alphabet), size=length))


def fit_text_mask(
    text: str, font: Path, size: int, width_frac: float = 0.8, height_frac: float = 0.5
) -> tuple[np.ndarray, list[BBox]]:
    """Render text scaled into a size x size frame, centred, with scaled char boxes."""
    px = max(8, size // 2)
    rendered = rasterize_text(text, font, px)
    factor = min(width_frac * size / rendered.width, height_frac * size / rendered.height)
    mask = scale_mask(rendered.mask.astype(bool), factor) if factor != 1.0 else rendered.mask.astype(bool)
    h, w = mask.shape
    h, w = min(h, size), min(w, size)
    y0 = (size - h) // 2
    x0 = (size - w) // 2
    canvas = np.zeros((size, size), dtype=np.uint8)
    canvas[y0 : y0 + h, x0 : x0 + w] = mask[:h, :w]

    fx = w / rendered.width
    fy = h / rendered.height
    boxes = []
    for box in rendered.char_boxes:
        bx0 = min(size - 1, x0 + int(math.floor(box.x0 * fx)))
        by0 = min(size - 1, y0 + int(math.floor(box.y0 * fy)))
        bx1 = max(bx0 + 1, min(size, x0 + int(math.ceil(box.x1 * fx))))
        by1 = max(by0 + 1, min(size, y0 + int(math.ceil(box.y1 * fy))))
        boxes.append(BBox(bx0, by0, bx1, by1))
    return canvas, boxes


def _pick_font(rng: np.random.Generator, fonts: list[Path], text: str) -> Path:
    usable = [f for f in fonts if has_glyphs(text, f)]
    if not usable:
        raise TrainingError(f"No font covers {text!r}")
    return usable[int(rng.integers(len(usable)))]


def synthetic_samples(
    rng: np.random.Generator, count: int, size: int, fonts: list[Path], alphabet: str
) -> list[TrainingSample]:
    """Flat-colour backgrounds with a random alphabet word laid over them."""
    samples = []
    for _ in range(count):
        text = _random_word(rng, alphabet)
        mask, boxes = fit_text_mask(text, _pick_font(rng, fonts, text), size)
        background = np.broadcast_to(rng.uniform(0.0, 1.0, size=3), (size, size, 3)).copy()
        samples.append(TrainingSample(x=background, m=mask, transcript=text, char_boxes=boxes))
    return samples


def synthetic_real_crops(
    rng: np.random.Generator, count: int, size: int, fonts: list[Path], alphabet: str
) -> RealCropSet:
    """Stand-ins for real text crops: flat backgrounds with contrasting text."""
    images = []
    for _ in range(count):
        text = _random_word(rng, alphabet)
        mask, _ = fit_text_mask(text, _pick_font(rng, fonts, text), size)
        background = rng.uniform(0.0, 1.0, size=3)
        foreground = np.where(background > 0.5, rng.uniform(0.0, 0.25, 3), rng.uniform(0.75, 1.0, 3))
        noise = rng.normal(0.0, 0.02, size=(size, size, 3))
        image = np.where(mask[..., None] == 1, foreground, background) + noise
        images.append(np.clip(image, 0.0, 1.0))
    return RealCropSet(np.stack(images))


@dataclass
class Batch:
    """NCHW float32 arrays plus per-sample character geometry."""

    x: np.ndarray  # (N, 3, H, W)
    m: np.ndarray  # (N, 1, H, W)
    transcripts: list[str]
    char_boxes: list[list[BBox]]


def make_batch(samples: list[TrainingSample], indices) -> Batch:
    chosen = [samples[int(i)] for i in indices]
    return Batch(
        x=np.stack([s.x.transpose(2, 0, 1) for s in chosen]).astype(np.float32),
        m=np.stack([s.m[None] for s in chosen]).astype(np.float32),
        transcripts=[s.transcript for s in chosen],
        char_boxes=[s.char_boxes for s in chosen],
    )


def real_batch(real: RealCropSet, indices) -> np.ndarray:
    return real.images[np.asarray(indices, dtype=np.int64)].transpose(0, 3, 1, 2).astype(np.float32)
