"""Tests for palettes, semantic maps, overlap fractions and candidate selection."""

from fractions import Fraction

import numpy as np
import pytest

from scenesynth.errors import ConfigError, SemanticMapError
from scenesynth.imaging import RasterImage
from scenesynth.models import BBox, LabColor, Region, RegionMap, SemanticMap
from scenesynth.regions.contours import extract_regions
from scenesynth.regions.semantics import (
    load_palette,
    load_semantic_map,
    overlap_fractions,
    sample_candidate,
    select_candidates,
    semantic_score,
)

from conftest import write_indexed_png

PALETTE = {0: "sky", 1: "building", 2: "tree", 3: "signboard"}


def _region(mask: np.ndarray, region_id: int = 0, x0: int = 0, y0: int = 0) -> Region:
    h, w = mask.shape
    return Region(
        id=region_id,
        area=int(mask.sum()),
        bbox=BBox(x0, y0, x0 + w, y0 + h),
        mean_lab=LabColor(50.0, 0.0, 0.0),
        boundary=np.zeros((0, 2), dtype=np.int64),
        mask=mask.astype(bool),
    )


def test_palette_skips_comments_and_blank_lines(palette_file):
    assert load_palette(palette_file) == PALETTE


@pytest.mark.parametrize(
    "text, message",
    [
        ("0\tsky\n0\ttree\n", "duplicate index 0"),
        ("0\tsky\n1\tsky\n", "duplicate class 'sky'"),
        ("x\tsky\n", "bad index"),
        ("0 sky\n", "expected"),
        ("# nothing\n", "empty"),
    ],
)
def test_malformed_palettes_are_rejected(tmp_path, text, message):
    path = tmp_path / "bad.tsv"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(SemanticMapError, match=message):
        load_palette(path)


def test_single_class_map_loads(tmp_path, palette_file):
    path = write_indexed_png(tmp_path / "map.png", np.zeros((4, 6)))
    semantic_map = load_semantic_map(path, palette_file)
    assert (semantic_map.width, semantic_map.height) == (6, 4)
    assert np.all(semantic_map.class_ids == 0)
    assert semantic_map.palette[0] == "sky"


def test_unknown_index_is_named(tmp_path, palette_file):
    indices = np.zeros((4, 4))
    indices[1, 1] = 7
    path = write_indexed_png(tmp_path / "map.png", indices)
    with pytest.raises(SemanticMapError, match="index 7"):
        load_semantic_map(path, palette_file)


def test_checkerboard_map_is_half_and_half(tmp_path):
    palette = tmp_path / "two.tsv"
    palette.write_text("0\tsky\n1\tbuilding\n", encoding="utf-8")
    yy, xx = np.mgrid[0:8, 0:8]
    path = write_indexed_png(tmp_path / "map.png", (xx + yy) % 2)
    semantic_map = load_semantic_map(path, palette)
    fractions = overlap_fractions(_region(np.ones((8, 8))), semantic_map)
    assert fractions == {"sky": Fraction(1, 2), "building": Fraction(1, 2)}


def test_building_sky_worked_example():
    """75% building and 25% sky scores 0.75 for building."""
    class_ids = np.zeros((4, 4), dtype=np.int64)
    class_ids[1:] = 1
    semantic_map = SemanticMap(class_ids, PALETTE)
    region = _region(np.ones((4, 4)))
    assert overlap_fractions(region, semantic_map) == {
        "building": Fraction(3, 4),
        "sky": Fraction(1, 4),
    }
    assert semantic_score(region, semantic_map) == (0.75, "building")


def test_single_class_region_scores_one():
    semantic_map = SemanticMap(np.full((5, 5), 3, dtype=np.int64), PALETTE)
    assert semantic_score(_region(np.ones((3, 3)), x0=1, y0=1), semantic_map) == (1.0, "signboard")


def test_exact_tie_goes_to_smaller_class_id():
    class_ids = np.zeros((2, 4), dtype=np.int64)
    class_ids[:, 2:] = 1
    semantic_map = SemanticMap(class_ids, PALETTE)
    assert semantic_score(_region(np.ones((2, 4))), semantic_map) == (0.5, "sky")


def test_fractions_match_brute_force_tally(rng):
    for _ in range(20):
        h, w = rng.integers(4, 33, size=2)
        class_ids = rng.integers(0, 4, size=(h, w))
        semantic_map = SemanticMap(class_ids, PALETTE)
        labels = rng.integers(0, 3, size=(h, w))
        regions = extract_regions(RegionMap(labels, 3), RasterImage(np.full((h, w, 3), 0.5)))
        for region in regions:
            selected = class_ids[labels == region.id]
            expected: dict[str, Fraction] = {}
            for c in selected.tolist():
                expected[PALETTE[c]] = expected.get(PALETTE[c], Fraction(0)) + Fraction(1, len(selected))
            fractions = overlap_fractions(region, semantic_map)
            assert fractions == expected
            assert sum(fractions.values()) == 1


def test_empty_region_is_an_error():
    semantic_map = SemanticMap(np.zeros((3, 3), dtype=np.int64), PALETTE)
    with pytest.raises(SemanticMapError, match="empty"):
        overlap_fractions(_region(np.zeros((2, 2))), semantic_map)


def test_selection_filters_by_whitelist_score_and_area():
    class_ids = np.zeros((100, 100), dtype=np.int64)
    class_ids[:50, :50] = 2  # tree
    class_ids[50:, :] = 1  # building
    class_ids[50:75, 50:] = 0  # sky inside the lower-right region
    semantic_map = SemanticMap(class_ids, PALETTE)
    tree = _region(np.ones((50, 50)), region_id=0)
    building = _region(np.ones((50, 100)), region_id=1, y0=50)  # 75% building
    tiny = _region(np.ones((2, 2)), region_id=2, y0=90)

    kept = select_candidates([tree, building, tiny], semantic_map, {"building", "signboard"}, 0.6, 0.005)
    assert [c.region.id for c in kept] == [1]
    assert kept[0].score == 0.75
    assert kept[0].dominant_class == "building"
    assert sum(kept[0].class_fractions.values()) == pytest.approx(1.0, abs=1e-9)

    again = select_candidates([c.region for c in kept], semantic_map, {"building", "signboard"})
    assert [c.region.id for c in again] == [1]


def test_selection_orders_by_score_then_area():
    class_ids = np.ones((40, 40), dtype=np.int64)
    class_ids[0, :10] = 0
    semantic_map = SemanticMap(class_ids, PALETTE)
    small = _region(np.ones((10, 10)), region_id=0, x0=20, y0=20)
    large = _region(np.ones((20, 20)), region_id=1, y0=20)
    mixed = _region(np.ones((10, 10)), region_id=2)  # 90% building
    kept = select_candidates([small, mixed, large], semantic_map, ["building"], 0.6, 0.0)
    assert [c.region.id for c in kept] == [1, 0, 2]


def test_empty_whitelist_is_a_config_error():
    semantic_map = SemanticMap(np.zeros((3, 3), dtype=np.int64), PALETTE)
    with pytest.raises(ConfigError, match="whitelist"):
        select_candidates([], semantic_map, set())


def test_candidate_sampling_follows_scores(rng):
    semantic_map = SemanticMap(np.ones((10, 10), dtype=np.int64), PALETTE)
    candidates = select_candidates([_region(np.ones((5, 5)))], semantic_map, ["building"])
    assert sample_candidate(rng, candidates) is candidates[0]
    with pytest.raises(SemanticMapError):
        sample_candidate(rng, [])
