"""Shared fixtures: test fonts, small images and a --runslow switch."""

from pathlib import Path

import numpy as np
import pytest
from PIL import Image

TEST_FONT_NAMES = (
    "DejaVuSans.ttf",
    "DejaVuSans-Bold.ttf",
    "DejaVuSerif.ttf",
    "DejaVuSansMono.ttf",
    "DejaVuSerif-Bold.ttf",
    "DejaVuSansMono-Bold.ttf",
)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def _matplotlib_font_dir() -> Path | None:
    try:
        import matplotlib
    except ImportError:
        return None
    path = Path(matplotlib.get_data_path()) / "fonts" / "ttf"
    return path if path.is_dir() else None


@pytest.fixture(scope="session")
def font_paths() -> list[Path]:
    """Bundled matplotlib fonts, skipping when unavailable."""
    font_dir = _matplotlib_font_dir()
    if font_dir is None:
        pytest.skip("matplotlib fonts not available")
    fonts = [font_dir / name for name in TEST_FONT_NAMES if (font_dir / name).exists()]
    if len(fonts) < 2:
        pytest.skip("need at least two test fonts")
    return fonts


@pytest.fixture(scope="session")
def font_path(font_paths) -> Path:
    return font_paths[0]


@pytest.fixture
def font_dir(tmp_path, font_paths) -> Path:
    """A directory holding copies of the test fonts."""
    directory = tmp_path / "fonts"
    directory.mkdir()
    for font in font_paths:
        (directory / font.name).write_bytes(font.read_bytes())
    return directory


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def write_png(path: Path, pixels: np.ndarray) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels.astype(np.uint8)).save(path)
    return path


def write_indexed_png(path: Path, indices: np.ndarray) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    image = Image.fromarray(indices.astype(np.uint8), mode="P")
    image.putpalette([v for i in range(256) for v in (i, i, i)])
    image.save(path)
    return path


PALETTE_TEXT = "# index\tclass\n0\tsky\n1\tbuilding\n2\ttree\n3\tsignboard\n"


@pytest.fixture
def palette_file(tmp_path) -> Path:
    path = tmp_path / "palette.tsv"
    path.write_text(PALETTE_TEXT, encoding="utf-8")
    return path


def facade_scene(width: int = 96, height: int = 64, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """A sky band over a flat building wall, with its semantic map (0 sky, 1 building)."""
    noise = np.random.default_rng(seed).integers(-3, 4, size=(height, width, 3))
    pixels = np.zeros((height, width, 3), dtype=np.int64)
    split = height // 4
    pixels[:split] = (135, 190, 235)
    pixels[split:] = (170, 120, 90)
    pixels = np.clip(pixels + noise, 0, 255)
    labels = np.zeros((height, width), dtype=np.uint8)
    labels[split:] = 1
    return pixels.astype(np.uint8), labels


@pytest.fixture
def scene_dirs(tmp_path, palette_file):
    """Three matched background / semantic map pairs."""
    backgrounds = tmp_path / "backgrounds"
    maps = tmp_path / "maps"
    for i, stem in enumerate(("a", "b", "c")):
        pixels, labels = facade_scene(seed=i)
        write_png(backgrounds / f"{stem}.png", pixels)
        write_indexed_png(maps / f"{stem}.png", labels)
    return backgrounds, maps, palette_file


@pytest.fixture
def corpus_file(tmp_path) -> Path:
    path = tmp_path / "corpus.txt"
    path.write_text("open daily\nfresh bread\ncafe\nexit 24\nsale now on\n", encoding="utf-8")
    return path
