"""Character alphabets and recognizer pretraining on rendered glyphs."""

import logging
import string
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..autodiff import tensor as T
from ..autodiff.optim import OptimizerState, rmsprop_step
from ..errors import TextSourceError, TrainingError
from ..geometry import scale_mask
from ..text.render import has_glyphs, rasterize_text
from .networks import CHAR_SIZE, Recognizer

logger = logging.getLogger(__name__)

ALNUM = string.digits + string.ascii_lowercase
FULL = ALNUM + string.punctuation

TARGET_ACCURACY = 0.95
MIN_ACCURACY = 0.80
MIN_BATCHES_PER_EPOCH = 16


@dataclass
class RecognizerSettings:
    alphabet: str = "default"
    samples_per_class: int = 100  # fresh renders per class and epoch
    held_out_per_class: int = 20
    epochs: int = 40
    batch_size: int = 32
    lr: float = 5e-4
    decay: float = 0.9
    lr_decay: float = 0.95  # per epoch
    scale_jitter: float = 0.2
    target_accuracy: float = TARGET_ACCURACY
    min_accuracy: float = MIN_ACCURACY


def resolve_alphabet(name: str) -> str:
    """'default'/'alnum' (36 classes), 'full' (68 classes), or a literal character set."""
    if name in ("default", "alnum"):
        return ALNUM
    if name == "full":
        return FULL
    seen = []
    for ch in name.lower():
        if ch not in seen and not ch.isspace():
            seen.append(ch)
    alphabet = "".join(seen)
    if not alphabet:
        raise TrainingError("Alphabet is empty")
    return alphabet


def _contrasting_colors(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Background and foreground RGB whose gray levels differ by at least 0.35."""
    while True:
        background = rng.uniform(0.0, 1.0, size=3)
        foreground = rng.uniform(0.0, 1.0, size=3)
        if abs(background.mean() - foreground.mean()) >= 0.35:
            return background, foreground


def render_glyph_crop(
    rng: np.random.Generator, char: str, font: Path, scale_jitter: float = 0.2
) -> np.ndarray:
    """One CHAR_SIZE x CHAR_SIZE RGB crop (3, H, W) of a single character."""
    px = max(8, int(round(CHAR_SIZE * 0.7 * (1.0 + rng.uniform(-scale_jitter, scale_jitter)))))
    mask = rasterize_text(char, font, px).mask.astype(bool)
    limit = CHAR_SIZE - 2
    if mask.shape[0] > limit or mask.shape[1] > limit:
        mask = scale_mask(mask, limit / max(mask.shape))
    h, w = mask.shape
    y = (CHAR_SIZE - h) // 2 + int(rng.integers(-1, 2))
    x = (CHAR_SIZE - w) // 2 + int(rng.integers(-1, 2))
    y = min(max(y, 0), CHAR_SIZE - h)
    x = min(max(x, 0), CHAR_SIZE - w)
    canvas = np.zeros((CHAR_SIZE, CHAR_SIZE), dtype=bool)
    canvas[y : y + h, x : x + w] = mask

    background, foreground = _contrasting_colors(rng)
    image = np.where(canvas[..., None], foreground, background)
    return image.transpose(2, 0, 1).astype(np.float32)


def render_glyph_crops(
    rng: np.random.Generator,
    fonts: list[Path],
    alphabet: str,
    per_class: int,
    scale_jitter: float = 0.2,
) -> tuple[np.ndarray, np.ndarray]:
    """A shuffled dataset of rendered characters: (M, 3, H, W) images and labels."""
    if not alphabet:
        raise TrainingError("Alphabet is empty")
    images, labels = [], []
    for label, char in enumerate(alphabet):
        usable = [f for f in fonts if has_glyphs(char, f)]
        if not usable:
            raise TextSourceError(f"No font has a glyph for {char!r}")
        for _ in range(per_class):
            font = usable[int(rng.integers(len(usable)))]
            images.append(render_glyph_crop(rng, char, font, scale_jitter))
            labels.append(label)
    order = rng.permutation(len(labels))
    return np.stack(images)[order], np.array(labels, dtype=np.int64)[order]


def recognize_characters(recognizer: Recognizer, crops: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Predicted class index per crop."""
    predictions = []
    for start in range(0, len(crops), batch_size):
        logits = recognizer(crops[start : start + batch_size]).data
        predictions.append(np.argmax(logits, axis=1))
    return np.concatenate(predictions) if predictions else np.zeros(0, dtype=np.int64)


def accuracy(recognizer: Recognizer, crops: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(recognize_characters(recognizer, crops) == labels))


def _epoch_samples_per_class(settings: RecognizerSettings, classes: int) -> int:
    """Enough fresh crops per class for at least MIN_BATCHES_PER_EPOCH optimizer steps."""
    floor = -(-MIN_BATCHES_PER_EPOCH * settings.batch_size // classes)
    return max(settings.samples_per_class, floor)


def pretrain_recognizer(
    fonts: list[Path],
    alphabet: str,
    rng: np.random.Generator,
    settings: RecognizerSettings | None = None,
    on_epoch: Callable[[int, float, float], None] | None = None,
) -> tuple[Recognizer, float]:
    """Train R on rendered glyphs until held-out accuracy hits the target, then freeze it.

    Every epoch draws a fresh set of renders; the learning rate shrinks by
    lr_decay per epoch and the best held-out weights are kept. Returns the
    frozen recognizer and its held-out accuracy.
    """
    settings = settings or RecognizerSettings()
    if not alphabet:
        raise TrainingError("Alphabet is empty")
    if len(fonts) < 2:
        raise TrainingError(f"Recognizer pretraining needs at least 2 fonts, got {len(fonts)}")
    if not 0.0 < settings.lr_decay <= 1.0:
        raise TrainingError(f"Recognizer lr_decay must be in (0, 1], got {settings.lr_decay}")

    test_x, test_y = render_glyph_crops(rng, fonts, alphabet, settings.held_out_per_class, settings.scale_jitter)
    per_class = _epoch_samples_per_class(settings, len(alphabet))
    logger.info(
        "Pretraining recognizer on %d fresh crops per epoch, %d classes", per_class * len(alphabet), len(alphabet)
    )

    recognizer = Recognizer(rng, len(alphabet))
    state = OptimizerState(lr=settings.lr, decay=settings.decay)
    params = recognizer.named_parameters()
    best_accuracy, best_state = -1.0, recognizer.state_dict()
    for epoch in range(settings.epochs):
        train_x, train_y = render_glyph_crops(rng, fonts, alphabet, per_class, settings.scale_jitter)
        losses = []
        for start in range(0, len(train_y), settings.batch_size):
            batch = slice(start, start + settings.batch_size)
            recognizer.zero_grad()
            loss = T.softmax_cross_entropy(recognizer(train_x[batch]), train_y[batch])
            loss.backward()
            rmsprop_step(params, {n: p.grad for n, p in params.items()}, state)
            losses.append(loss.item())
        state.lr *= settings.lr_decay

        held_out = accuracy(recognizer, test_x, test_y)
        logger.debug("Recognizer epoch %d: loss %.4f, held-out accuracy %.3f", epoch, np.mean(losses), held_out)
        if on_epoch:
            on_epoch(epoch, float(np.mean(losses)), held_out)
        if held_out > best_accuracy:
            best_accuracy, best_state = held_out, recognizer.state_dict()
        if held_out >= settings.target_accuracy:
            break

    recognizer.load_state_dict(best_state)
    if best_accuracy < settings.min_accuracy:
        raise TrainingError(
            f"Recognizer reached only {best_accuracy:.1%} held-out accuracy "
            f"(needs {settings.min_accuracy:.0%}); training is broken"
        )
    if best_accuracy < settings.target_accuracy:
        logger.warning(
            "Recognizer stopped at %.1f%% held-out accuracy, below the %.0f%% target",
            100 * best_accuracy, 100 * settings.target_accuracy,
        )
    recognizer.freeze()
    return recognizer, best_accuracy
