"""Tests for generator loading and full-resolution appearance inference."""

import numpy as np
import pytest

from scenesynth.appearance.inference import infer_appearance, load_generator, load_recognizer
from scenesynth.appearance.networks import Generator, Recognizer
from scenesynth.autodiff.checkpoint import save_checkpoint
from scenesynth.errors import TrainingError


@pytest.fixture
def generator(rng) -> Generator:
    return Generator(rng, 0.25).freeze()


def test_empty_mask_returns_crop_exactly(generator, rng):
    x = rng.uniform(size=(30, 50, 3))
    out = infer_appearance(generator, x, np.zeros((30, 50), dtype=np.uint8))
    assert np.array_equal(out, x)
    assert out is not x


def test_changes_stay_inside_the_mask(generator, rng):
    x = rng.uniform(size=(40, 72, 3))
    m = np.zeros((40, 72), dtype=np.uint8)
    m[12:28, 10:60] = 1
    out = infer_appearance(generator, x, m)
    assert out.shape == x.shape
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert np.array_equal(out[m == 0], x[m == 0])


def test_inference_needs_a_generator_and_matching_mask(generator, rng):
    x = rng.uniform(size=(8, 8, 3))
    with pytest.raises(TrainingError, match="No trained generator"):
        infer_appearance(None, x, np.ones((8, 8)))
    with pytest.raises(TrainingError, match="do not match"):
        infer_appearance(generator, x, np.ones((8, 9)))


def test_generator_checkpoint_round_trip(tmp_path, rng):
    original = Generator(rng, 0.5)
    save_checkpoint(tmp_path / "g.ckpt", original)
    loaded = load_generator(tmp_path / "g.ckpt")
    assert loaded.scale == 0.5
    assert loaded.is_frozen
    for name, value in original.state_dict().items():
        assert np.array_equal(loaded.state_dict()[name], value)


def test_unusable_checkpoints(tmp_path, rng):
    with pytest.raises(TrainingError, match="not found"):
        load_generator(tmp_path / "missing.ckpt")
    save_checkpoint(tmp_path / "r.ckpt", Recognizer(rng, 3))
    with pytest.raises(TrainingError, match="Unusable"):
        load_generator(tmp_path / "r.ckpt")
    with pytest.raises(TrainingError, match="4-class"):
        load_recognizer(tmp_path / "r.ckpt", "abcd")
    assert load_recognizer(tmp_path / "r.ckpt", "abc").is_frozen
