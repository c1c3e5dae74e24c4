"""Tests for raster loading, saving, Lab conversion and interpolation."""

import numpy as np
import pytest

from scenesynth.errors import ImagingError
from scenesynth.imaging import (
    RasterImage,
    bilinear_sample,
    crop,
    lab_to_rgb,
    load_image,
    resize,
    rgb_to_lab,
    sample_bilinear,
    save_image,
)
from scenesynth.models import BBox

from conftest import write_png


def test_white_png_loads_as_ones(tmp_path):
    """An all-white 8-bit file maps to 1.0 everywhere."""
    path = write_png(tmp_path / "white.png", np.full((2, 2, 3), 255))
    image = load_image(path)
    assert (image.width, image.height, image.channels) == (2, 2, 3)
    assert np.all(image.data == 1.0)


def test_grayscale_png_keeps_one_channel(tmp_path):
    path = write_png(tmp_path / "gray.png", np.array([[0, 51], [102, 255]]))
    image = load_image(path)
    assert image.channels == 1
    assert image.data[0, 1, 0] == pytest.approx(0.2)
    assert image.to_rgb().channels == 3


def test_save_load_round_trip(tmp_path, rng):
    """Random images survive save/load within one 8-bit quantum."""
    data = rng.uniform(0.0, 1.0, size=(7, 5, 3))
    save_image(RasterImage(data), tmp_path / "out.png")
    loaded = load_image(tmp_path / "out.png")
    assert np.max(np.abs(loaded.data - data)) <= 1 / 255 + 1e-12


def test_quantized_images_round_trip_exactly(tmp_path, rng):
    data = rng.integers(0, 256, size=(6, 6, 3)) / 255.0
    save_image(RasterImage(data), tmp_path / "q.png")
    assert np.array_equal(load_image(tmp_path / "q.png").data, data)


def test_missing_and_empty_files_name_the_path(tmp_path):
    with pytest.raises(ImagingError, match="not found"):
        load_image(tmp_path / "nope.png")
    empty = tmp_path / "empty.png"
    empty.write_bytes(b"")
    with pytest.raises(ImagingError, match="empty.png"):
        load_image(empty)


def test_raster_rejects_out_of_range_values():
    with pytest.raises(ImagingError):
        RasterImage(np.full((2, 2, 3), 1.5))
    with pytest.raises(ImagingError):
        RasterImage(np.zeros((2, 2, 2)))


def test_lab_of_white_black_and_gray():
    """White is L=100, black the origin, gray neutral with L from the CIE formula."""
    pixels = np.array([[[1.0, 1.0, 1.0], [0.0, 0.0, 0.0], [0.5, 0.5, 0.5]]])
    lab = rgb_to_lab(RasterImage(pixels))
    assert lab[0, 0, 0] == pytest.approx(100.0, abs=1e-3)
    assert np.all(np.abs(lab[0, 0, 1:]) < 0.01)
    assert np.all(np.abs(lab[0, 1]) < 0.01)

    y = ((0.5 + 0.055) / 1.055) ** 2.4
    expected_l = 116.0 * y ** (1.0 / 3.0) - 16.0
    assert lab[0, 2, 0] == pytest.approx(expected_l, abs=1e-3)
    assert np.all(np.abs(lab[0, 2, 1:]) < 0.01)


def test_lab_rejects_grayscale():
    with pytest.raises(ImagingError, match="3-channel"):
        rgb_to_lab(RasterImage(np.zeros((2, 2))))


def test_lab_round_trip_within_one_quantum(rng):
    data = rng.uniform(0.0, 1.0, size=(10, 10, 3))
    back = lab_to_rgb(rgb_to_lab(RasterImage(data)))
    assert np.max(np.abs(back.data - data)) < 1 / 255


def test_bilinear_exact_at_integers_and_midpoints(rng):
    data = rng.uniform(0.0, 1.0, size=(4, 5, 3))
    image = RasterImage(data)
    assert np.array_equal(bilinear_sample(image, 2, 3), data[3, 2])
    mid = bilinear_sample(image, 1.5, 2)
    assert np.allclose(mid, (data[2, 1] + data[2, 2]) / 2)


def test_bilinear_matches_hand_formula(rng):
    data = rng.uniform(0.0, 1.0, size=(6, 6, 1))
    image = RasterImage(data)
    for _ in range(20):
        x, y = rng.uniform(0, 5), rng.uniform(0, 5)
        x0, y0 = int(np.floor(x)), int(np.floor(y))
        x1, y1 = min(x0 + 1, 5), min(y0 + 1, 5)
        fx, fy = x - x0, y - y0
        expected = (
            data[y0, x0, 0] * (1 - fx) * (1 - fy)
            + data[y0, x1, 0] * fx * (1 - fy)
            + data[y1, x0, 0] * (1 - fx) * fy
            + data[y1, x1, 0] * fx * fy
        )
        assert bilinear_sample(image, x, y)[0] == pytest.approx(expected)


def test_bilinear_is_continuous(rng):
    data = rng.uniform(0.0, 1.0, size=(8, 8))
    image = RasterImage(data)
    spread = data.max() - data.min()
    eps = 1e-4
    for _ in range(20):
        x, y = rng.uniform(0, 7 - eps), rng.uniform(0, 7 - eps)
        a = bilinear_sample(image, x, y)
        b = bilinear_sample(image, x + eps, y)
        assert np.all(np.abs(a - b) <= 2 * eps * spread + 1e-12)


def test_bilinear_rejects_out_of_bounds():
    image = RasterImage(np.zeros((3, 3, 3)))
    with pytest.raises(ImagingError, match="outside"):
        bilinear_sample(image, 2.5, 0)


def test_sample_bilinear_outside_is_zero():
    data = np.ones((3, 3))
    values = sample_bilinear(data, np.array([-1.0, 1.0, 5.0]), np.array([1.0, 1.0, 1.0]))
    assert values.tolist() == [0.0, 1.0, 0.0]


def test_resize_and_crop():
    data = np.linspace(0.0, 1.0, 16).reshape(4, 4)
    image = RasterImage(data)
    same = resize(image, 4, 4)
    assert np.array_equal(same.data, image.data)
    small = resize(image, 2, 2)
    assert (small.width, small.height) == (2, 2)

    part = crop(image, BBox(1, 1, 3, 4))
    assert (part.width, part.height) == (2, 3)
    assert part.data[0, 0, 0] == data[1, 1]
    with pytest.raises(ImagingError):
        crop(image, BBox(0, 0, 5, 2))
