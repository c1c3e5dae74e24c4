"""Masked composition and the adversarial, feature and semantic losses."""

import numpy as np

from ..autodiff import tensor as T
from ..autodiff.tensor import Tensor
from ..errors import AutodiffError, ShapeError, TrainingError
from ..models import BBox
from .networks import CHAR_SIZE


def _check_mask(m: np.ndarray) -> None:
    if not np.all((m == 0) | (m == 1)):
        raise AutodiffError("Composition mask must be binary (0 or 1)")


def compose_masked(gx, m, x):
    """gx * m + x * (1 - m): generated pixels inside the mask, background elsewhere.

    Works on NCHW Tensors (m is (N, 1, H, W)) or on (H, W, C) arrays with an
    (H, W) mask. Background pixels are reproduced exactly.
    """
    if isinstance(gx, Tensor):
        m_data = m.data if isinstance(m, Tensor) else np.asarray(m)
        x_data = x.data if isinstance(x, Tensor) else np.asarray(x)
        _check_mask(m_data)
        if gx.data.ndim != 4 or m_data.shape[0] != gx.shape[0] or m_data.shape[2:] != gx.shape[2:]:
            raise ShapeError(f"compose_masked: gx {gx.shape}, mask {m_data.shape}")
        if x_data.shape != gx.shape:
            raise ShapeError(f"compose_masked: gx {gx.shape}, background {x_data.shape}")
        m_t = Tensor(m_data.astype(gx.dtype))
        inverse = Tensor((1 - m_data).astype(gx.dtype))
        return gx * m_t + Tensor(x_data.astype(gx.dtype)) * inverse

    gx = np.asarray(gx)
    x = np.asarray(x)
    m = np.asarray(m)
    _check_mask(m)
    if gx.shape != x.shape:
        raise ShapeError(f"compose_masked: gx {gx.shape}, background {x.shape}")
    if m.ndim == gx.ndim - 1:
        m = m[..., None]
    if m.shape[: gx.ndim - 1] != gx.shape[: gx.ndim - 1]:
        raise ShapeError(f"compose_masked: mask {m.shape} does not match {gx.shape}")
    m = m.astype(gx.dtype)
    return gx * m + x * (1 - m)


def critic_loss(discriminator, composed, real) -> Tensor:
    """Pixel-level critic objective: mean D(composed) - mean D(real)."""
    if composed.shape[0] == 0 or real.shape[0] == 0:
        raise TrainingError("Critic loss needs non-empty batches")
    return T.mean(discriminator(composed)) - T.mean(discriminator(real))


def adversarial_loss(discriminator, composed) -> Tensor:
    """Generator objective: -mean D(composed)."""
    return -T.mean(discriminator(composed))


def feature_loss(extractor, feature_critic, composed, real) -> Tensor:
    """mean D_F(F(composed)) - mean D_F(F(real))."""
    if composed.shape[0] == 0 or real.shape[0] == 0:
        raise TrainingError("Feature loss needs non-empty batches")
    return T.mean(feature_critic(extractor(composed))) - T.mean(feature_critic(extractor(real)))


def char_targets(
    char_boxes: list[list[BBox]],
    transcripts: list[str],
    alphabet: str,
    width: int,
    height: int,
) -> tuple[list[tuple[int, tuple[int, int, int, int]]], np.ndarray]:
    """Crop boxes and class indices for every in-alphabet character of a batch."""
    boxes = []
    targets = []
    for n, (sample_boxes, transcript) in enumerate(zip(char_boxes, transcripts)):
        chars = [ch for ch in transcript if not ch.isspace()]
        if len(chars) != len(sample_boxes):
            raise TrainingError(
                f"Sample {n}: {len(sample_boxes)} char boxes for {len(chars)} characters"
            )
        for ch, box in zip(chars, sample_boxes):
            if box.x0 < 0 or box.y0 < 0 or box.x1 > width or box.y1 > height or box.area <= 0:
                raise TrainingError(f"Sample {n}: char box {box} outside {width}x{height} crop")
            index = alphabet.find(ch.lower())
            if index < 0:
                continue
            boxes.append((n, (box.x0, box.y0, box.x1, box.y1)))
            targets.append(index)
    return boxes, np.array(targets, dtype=np.int64)


def semantic_loss(
    recognizer,
    composed: Tensor,
    char_boxes: list[list[BBox]],
    transcripts: list[str],
    alphabet: str,
) -> Tensor:
    """Mean cross-entropy of the recognizer's reading of each character crop."""
    _, _, height, width = composed.shape
    boxes, targets = char_targets(char_boxes, transcripts, alphabet, width, height)
    if not boxes:
        raise TrainingError("Semantic loss needs at least one recognizable character box")
    crops = T.crop_resize(composed, boxes, CHAR_SIZE)
    return T.softmax_cross_entropy(recognizer(crops), targets)
