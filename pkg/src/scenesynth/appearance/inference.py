"""Apply a trained generator to full-resolution region crops."""

import logging
from pathlib import Path

import numpy as np

from ..autodiff.checkpoint import read_checkpoint
from ..errors import AutodiffError, TrainingError
from ..imaging import resize_array
from .losses import compose_masked
from .networks import Generator, Recognizer

logger = logging.getLogger(__name__)


def load_generator(path: Path) -> Generator:
    """Rebuild a generator at the scale recorded in its checkpoint."""
    path = Path(path)
    if not path.exists():
        raise TrainingError(f"Generator checkpoint not found: {path}")
    try:
        state = read_checkpoint(path)
        generator = Generator(np.random.default_rng(0), Generator.scale_from_state(state))
        generator.load_state_dict(state)
    except AutodiffError as e:
        raise TrainingError(f"Unusable generator checkpoint {path}: {e}") from e
    generator.freeze()
    logger.debug("Loaded generator %s at scale %s", path, generator.scale)
    return generator


def load_recognizer(path: Path, alphabet: str) -> Recognizer:
    path = Path(path)
    if not path.exists():
        raise TrainingError(f"Recognizer checkpoint not found: {path}")
    state = read_checkpoint(path)
    recognizer = Recognizer(np.random.default_rng(0), len(alphabet))
    try:
        recognizer.load_state_dict(state)
    except AutodiffError as e:
        raise TrainingError(f"Recognizer {path} does not match a {len(alphabet)}-class alphabet: {e}") from e
    return recognizer.freeze()


def infer_appearance(generator: Generator | None, x: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Restyle the masked text pixels of an (H, W, 3) crop.

    The crop goes through G at G's input size and the output is resampled back;
    pixels where m == 0 are returned exactly as in x.
    """
    if generator is None:
        raise TrainingError("No trained generator loaded")
    x = np.asarray(x, dtype=np.float64)
    m = np.asarray(m)
    if x.ndim != 3 or x.shape[2] != 3 or m.shape != x.shape[:2]:
        raise TrainingError(f"Crop {x.shape} and mask {m.shape} do not match")
    if not m.any():
        return x.copy()

    size = generator.input_size
    h, w = m.shape
    small_x = np.clip(resize_array(x, size, size), 0.0, 1.0)
    small_m = resize_array(m.astype(np.float64), size, size) >= 0.5
    inputs = np.concatenate([small_x.transpose(2, 0, 1), small_m[None].astype(np.float64)], axis=0)
    gx = generator(inputs[None].astype(np.float32)).data[0].transpose(1, 2, 0)
    gx_full = np.clip(resize_array(gx.astype(np.float64), w, h), 0.0, 1.0)
    return compose_masked(gx_full, (m != 0).astype(np.uint8), x)
