"""Tests for masked composition and the feature and semantic losses."""

import math

import numpy as np
import pytest

from scenesynth.appearance.losses import (
    adversarial_loss,
    char_targets,
    compose_masked,
    critic_loss,
    feature_loss,
    semantic_loss,
)
from scenesynth.autodiff import tensor as T
from scenesynth.autodiff.nn import Module
from scenesynth.autodiff.tensor import Tensor
from scenesynth.errors import AutodiffError, ShapeError, TrainingError
from scenesynth.models import BBox


class Identity(Module):
    def forward(self, x):
        return x


class Flatten(Module):
    """Scores each sample by its single value."""

    def forward(self, x):
        return T.reshape(x, (x.shape[0],))


class Constant(Module):
    def __init__(self, value: float):
        super().__init__()
        self.value = value

    def forward(self, x):
        return Tensor(np.full(x.shape[0], self.value))


class FixedLogits(Module):
    """Ignores its crops and returns the same logits rows every call."""

    def __init__(self, logits):
        super().__init__()
        self.logits = np.asarray(logits, dtype=np.float64)

    def forward(self, x):
        assert x.shape[0] == len(self.logits)
        return Tensor(self.logits)


def test_zero_mask_returns_background(rng):
    gx, x = rng.uniform(size=(2, 5, 6, 3))
    assert np.array_equal(compose_masked(gx, np.zeros((5, 6)), x), x)


def test_full_mask_returns_generated(rng):
    gx, x = rng.uniform(size=(2, 5, 6, 3))
    assert np.array_equal(compose_masked(gx, np.ones((5, 6)), x), gx)


def test_checkerboard_matches_pixel_loop(rng):
    gx, x = rng.uniform(size=(2, 4, 4, 3))
    yy, xx = np.mgrid[0:4, 0:4]
    m = ((xx + yy) % 2).astype(np.uint8)
    out = compose_masked(gx, m, x)
    for i in range(4):
        for j in range(4):
            expected = gx[i, j] if m[i, j] else x[i, j]
            assert np.array_equal(out[i, j], expected)


def test_tensor_composition_keeps_background_and_gradient(rng):
    x = rng.uniform(size=(1, 3, 4, 4))
    m = np.zeros((1, 1, 4, 4))
    m[..., 1:3, 1:3] = 1
    gx = Tensor(rng.uniform(size=(1, 3, 4, 4)), requires_grad=True)
    out = compose_masked(gx, m, x)
    assert np.array_equal(out.data[..., 0, :], x[..., 0, :])
    T.total(out).backward()
    assert np.array_equal(gx.grad, np.broadcast_to(m, gx.shape))


def test_composition_rejects_soft_or_mismatched_masks(rng):
    gx, x = rng.uniform(size=(2, 4, 4, 3))
    with pytest.raises(AutodiffError, match="binary"):
        compose_masked(gx, np.full((4, 4), 0.5), x)
    with pytest.raises(ShapeError):
        compose_masked(gx, np.zeros((3, 4)), x)
    with pytest.raises(ShapeError):
        compose_masked(gx, np.zeros((4, 4)), x[:3])


def test_feature_loss_of_identical_batches_is_zero(rng):
    batch = Tensor(rng.standard_normal((3, 1)))
    assert feature_loss(Identity(), Flatten(), batch, batch).item() == 0.0


def test_constant_feature_critic_gives_zero(rng):
    a, b = Tensor(rng.standard_normal((2, 1))), Tensor(rng.standard_normal((4, 1)))
    assert feature_loss(Identity(), Constant(7.0), a, b).item() == pytest.approx(0.0)


def test_feature_loss_hand_case():
    composed = Tensor(np.array([[3.0], [5.0]]))
    real = Tensor(np.array([[2.0], [2.0]]))
    assert feature_loss(Identity(), Flatten(), composed, real).item() == pytest.approx(2.0)


def test_critic_and_adversarial_losses():
    composed = Tensor(np.array([[1.0], [3.0]]))
    real = Tensor(np.array([[4.0], [6.0]]))
    assert critic_loss(Flatten(), composed, real).item() == pytest.approx(-3.0)
    assert adversarial_loss(Flatten(), composed).item() == pytest.approx(-2.0)
    with pytest.raises(TrainingError):
        critic_loss(Flatten(), Tensor(np.zeros((0, 1))), real)


BOXES = [[BBox(0, 0, 4, 8), BBox(4, 0, 8, 8)]]


def _semantic(logits, transcript="ab", alphabet="ab"):
    composed = Tensor(np.zeros((1, 3, 8, 8)))
    return semantic_loss(FixedLogits(logits), composed, BOXES, [transcript], alphabet).item()


def test_one_hot_reading_costs_nothing():
    assert _semantic([[50.0, -50.0], [-50.0, 50.0]]) < 1e-6


def test_uniform_reading_costs_log_k():
    assert _semantic(np.zeros((2, 5)), alphabet="abcde") == pytest.approx(math.log(5))


def test_scripted_probabilities():
    logits = np.log([[0.5, 0.5], [0.75, 0.25]])
    assert _semantic(logits) == pytest.approx(-(math.log(0.5) + math.log(0.25)) / 2)


def test_char_targets_skip_spaces_and_unknown_characters():
    boxes, targets = char_targets([[BBox(0, 0, 2, 2), BBox(2, 0, 4, 2)]], ["a ?"], "ab", 4, 2)
    assert boxes == [(0, (0, 0, 2, 2))]
    assert targets.tolist() == [0]


def test_char_targets_validate_boxes():
    with pytest.raises(TrainingError, match="char boxes"):
        char_targets([[BBox(0, 0, 2, 2)]], ["ab"], "ab", 4, 4)
    with pytest.raises(TrainingError, match="outside"):
        char_targets([[BBox(0, 0, 9, 2)]], ["a"], "ab", 4, 4)


def test_semantic_loss_needs_a_known_character():
    composed = Tensor(np.zeros((1, 3, 8, 8)))
    with pytest.raises(TrainingError, match="recognizable"):
        semantic_loss(FixedLogits(np.zeros((0, 2))), composed, [[BBox(0, 0, 4, 4)]], ["?"], "ab")
