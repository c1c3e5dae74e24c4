"""End-to-end synthesis over small synthetic scenes."""

import logging

import numpy as np
import pytest
import shapely
from shapely.geometry import Polygon

from scenesynth.annotations import read_annotations, read_manifest
from scenesynth.appearance.networks import Generator
from scenesynth.autodiff.checkpoint import save_checkpoint
from scenesynth.config import SynthesisConfig
from scenesynth.errors import GeometryError, PipelineError
from scenesynth.imaging import RasterImage, load_image
from scenesynth.models import BBox
from scenesynth.pipeline import (
    RANDOM_CLASS,
    Resources,
    batch_synthesize,
    collect_training_samples,
    export_region_maps,
    image_seed,
    load_resources,
    pair_inputs,
    plan_placements,
    random_regions,
    synthesize_one,
    validate_inputs,
)
from scenesynth.regions.semantics import load_semantic_map
from scenesynth.text.corpus import load_corpus
from scenesynth.text.render import load_fonts

from conftest import facade_scene, write_indexed_png, write_png


@pytest.fixture
def synth_config(tmp_path, scene_dirs, corpus_file, font_dir) -> SynthesisConfig:
    backgrounds, maps, palette = scene_dirs
    config = SynthesisConfig(seed=3)
    config.paths.backgrounds = backgrounds
    config.paths.semantic_maps = maps
    config.paths.palette = palette
    config.paths.corpus = corpus_file
    config.paths.fonts = font_dir
    config.paths.output = tmp_path / "out"
    config.appearance.use_generator = False
    config.geometry.max_perturb = 0.05
    config.text.px_height = 24
    config.limits.max_instances = 3
    return config


def _resources(config: SynthesisConfig) -> Resources:
    return Resources(fonts=load_fonts(config.paths.fonts), corpus=load_corpus(config.paths.corpus))


def _outputs(directory) -> dict[str, bytes]:
    return {
        str(p.relative_to(directory)): p.read_bytes()
        for p in sorted(directory.rglob("*"))
        if p.is_file()
    }


def test_image_seed_is_stable_per_stem():
    assert image_seed(0, "a") == image_seed(0, "a")
    assert image_seed(0, "a") != image_seed(0, "b")
    assert image_seed(0, "a") != image_seed(1, "a")
    assert 0 <= image_seed(2**64 - 1, "a") < 2**64


def test_pairs_match_by_stem(scene_dirs, caplog):
    backgrounds, maps, _ = scene_dirs
    write_png(backgrounds / "z.png", np.zeros((4, 4, 3)))
    (backgrounds / "notes.txt").write_text("ignored", encoding="utf-8")
    with caplog.at_level(logging.WARNING):
        pairs = pair_inputs(backgrounds, maps)
    assert [p.stem for p in pairs] == ["a", "b", "c"]
    assert "without a partner" in caplog.text
    assert all(p.semantic_map is None for p in pair_inputs(backgrounds, None))


def test_no_pairs_is_an_error(tmp_path):
    (tmp_path / "bg").mkdir()
    (tmp_path / "maps").mkdir()
    with pytest.raises(PipelineError, match="No background"):
        pair_inputs(tmp_path / "bg", tmp_path / "maps")
    with pytest.raises(PipelineError, match="not found"):
        pair_inputs(tmp_path / "missing", None)


def test_batch_writes_images_annotations_and_manifest(synth_config):
    summary = batch_synthesize(synth_config)
    out = synth_config.paths.output
    assert [r.stem for r in summary.rows] == ["a", "b", "c"]
    assert not summary.failures
    assert summary.instances >= 1

    for row in read_manifest(out / "manifest.tsv"):
        assert (out / "images" / f"{row.stem}.png").exists()
        entries = read_annotations(out / "annotations" / f"gt_{row.stem}.txt")
        assert len(entries) == row.instances <= 3
        assert set(row.classes) <= {"building"}
        for quad, transcript in entries:
            assert transcript
            centre = quad.points.mean(axis=0)
            assert 0 <= centre[0] < 96 and 12 <= centre[1] < 64


def test_background_outside_the_text_is_untouched(synth_config, scene_dirs):
    backgrounds, maps, palette = scene_dirs
    background = load_image(backgrounds / "a.png")
    semantic_map = load_semantic_map(maps / "a.png", palette)
    resources = _resources(synth_config)

    placed_any = False
    for seed in range(10):
        image, record = synthesize_one(background, semantic_map, resources, synth_config, seed)
        assert (image.width, image.height) == (96, 64)
        if not record.instances:
            continue
        placed_any = True
        covered = Polygon()
        for inst in record.instances:
            covered = covered.union(Polygon(inst.quad.points).buffer(3.0))
        ys, xs = np.mgrid[0:64, 0:96]
        outside = ~shapely.contains_xy(covered, xs, ys)
        assert np.array_equal(image.data[outside], background.data[outside])
        assert not np.array_equal(image.data, background.data)
    assert placed_any


def test_same_seed_same_output_for_any_worker_count(synth_config, tmp_path):
    synth_config.paths.output = tmp_path / "one"
    batch_synthesize(synth_config)
    synth_config.paths.output = tmp_path / "again"
    batch_synthesize(synth_config)
    synth_config.paths.output = tmp_path / "two"
    synth_config.workers = 2
    batch_synthesize(synth_config)

    first = _outputs(tmp_path / "one")
    assert first == _outputs(tmp_path / "again")
    assert first == _outputs(tmp_path / "two")


def test_single_instance_limit(synth_config):
    synth_config.limits.max_instances = 1
    summary = batch_synthesize(synth_config)
    assert all(r.instances <= 1 for r in summary.rows)


def test_no_candidates_copies_the_background(synth_config, scene_dirs):
    synth_config.selection.whitelist = ["signboard"]
    summary = batch_synthesize(synth_config)
    assert summary.instances == 0
    out = synth_config.paths.output
    for stem in ("a", "b", "c"):
        original = load_image(scene_dirs[0] / f"{stem}.png")
        assert np.array_equal(load_image(out / "images" / f"{stem}.png").data, original.data)
        assert (out / "annotations" / f"gt_{stem}.txt").read_bytes() == b""


def test_bad_inputs_become_error_rows(synth_config, scene_dirs):
    backgrounds, maps, _ = scene_dirs
    (backgrounds / "d.png").write_bytes(b"not an image")
    write_indexed_png(maps / "d.png", np.zeros((64, 96)))
    pixels, _ = facade_scene()
    write_png(backgrounds / "e.png", pixels)
    write_indexed_png(maps / "e.png", np.zeros((10, 10)))

    summary = batch_synthesize(synth_config)
    assert [r.stem for r in summary.failures] == ["d", "e"]
    assert "semantic map is 10x10" in summary.failures[1].error
    rows = {r.stem: r for r in read_manifest(synth_config.paths.output / "manifest.tsv")}
    assert rows["a"].status == "ok"
    assert rows["d"].status.startswith("error: ")

    checked = {r.stem: r for r in validate_inputs(synth_config)}
    assert checked["a"].error is None
    assert checked["d"].error is not None and checked["e"].error is not None


def test_unexpected_failure_is_logged_and_the_batch_carries_on(synth_config, monkeypatch, caplog):
    import scenesynth.pipeline as pipeline

    real_synthesize = pipeline.synthesize_one
    broken_seed = image_seed(synth_config.seed, "b")

    def synthesize(background, semantic_map, resources, config, seed):
        if seed == broken_seed:
            raise ValueError("bad pixel")
        return real_synthesize(background, semantic_map, resources, config, seed)

    monkeypatch.setattr(pipeline, "synthesize_one", synthesize)
    with caplog.at_level(logging.ERROR, logger="scenesynth.pipeline"):
        summary = batch_synthesize(synth_config)

    assert [r.stem for r in summary.failures] == ["b"]
    assert summary.failures[0].error == "ValueError: bad pixel"
    assert "Unexpected failure on b" in caplog.text
    assert any(record.exc_info for record in caplog.records)
    assert (synth_config.paths.output / "images" / "a.png").exists()
    assert (synth_config.paths.output / "images" / "c.png").exists()


@pytest.mark.parametrize("retries", [0, 1, 4])
def test_failed_placements_are_retried_up_to_the_budget(synth_config, monkeypatch, retries):
    import scenesynth.pipeline as pipeline

    attempts = []

    def place(rng, candidate, resources, config, image_size):
        attempts.append(candidate.region.id)
        raise GeometryError("degenerate")

    monkeypatch.setattr(pipeline, "place_one", place)
    synth_config.limits.retries = retries
    rng = np.random.default_rng(0)
    background = RasterImage(np.full((64, 96, 3), 0.5))
    candidates = random_regions(rng, background, 10)

    placements = plan_placements(rng, candidates, _resources(synth_config), synth_config, (96, 64))
    assert placements == []
    assert len(attempts) == retries + 1
    assert len(set(attempts)) == len(attempts)


def test_grayscale_background_keeps_one_channel(synth_config, scene_dirs):
    backgrounds, maps, palette = scene_dirs
    gray = RasterImage(load_image(backgrounds / "a.png").data.mean(axis=2))
    semantic_map = load_semantic_map(maps / "a.png", palette)
    resources = _resources(synth_config)

    placed = 0
    for seed in range(5):
        image, record = synthesize_one(gray, semantic_map, resources, synth_config, seed)
        assert image.channels == 1
        assert (image.width, image.height) == (96, 64)
        placed += len(record.instances)
    assert placed

    synth_config.selection.whitelist = ["signboard"]
    untouched, empty = synthesize_one(gray, semantic_map, resources, synth_config, 0)
    assert not empty.instances
    assert np.array_equal(untouched.data, gray.data)


def test_random_regions_ablation(synth_config):
    synth_config.region_detection = False
    synth_config.paths.semantic_maps = None
    synth_config.paths.palette = None
    summary = batch_synthesize(synth_config)
    assert not summary.failures
    assert all(set(r.classes) <= {RANDOM_CLASS} for r in summary.rows)


def test_flat_text_ablation_gives_upright_quads(synth_config):
    synth_config.text_embedding = False
    batch_synthesize(synth_config)
    out = synth_config.paths.output
    for stem in ("a", "b", "c"):
        for quad, _ in read_annotations(out / "annotations" / f"gt_{stem}.txt"):
            pts = quad.points
            assert abs(pts[0, 1] - pts[1, 1]) <= 1 and abs(pts[0, 0] - pts[3, 0]) <= 1


def test_word_crops_and_labels(synth_config):
    synth_config.appearance.export_crops = True
    summary = batch_synthesize(synth_config)
    crops = synth_config.paths.output / "crops"
    lines = (crops / "labels.tsv").read_text(encoding="utf-8").splitlines()
    assert 1 <= len(lines) <= summary.instances
    for line in lines:
        name, transcript = line.split("\t", 1)
        assert transcript
        assert load_image(crops / name).height == synth_config.appearance.crop_height


def test_generator_restyles_text(synth_config, tmp_path):
    path = tmp_path / "generator.ckpt"
    save_checkpoint(path, Generator(np.random.default_rng(0), 0.25))
    synth_config.paths.generator = path
    synth_config.appearance.use_generator = True
    assert load_resources(synth_config).generator is not None
    summary = batch_synthesize(synth_config)
    assert not summary.failures


def test_missing_generator_path_is_an_error(synth_config):
    synth_config.appearance.use_generator = True
    with pytest.raises(PipelineError, match="generator"):
        load_resources(synth_config)


def test_unwritable_output_is_fatal(synth_config, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x", encoding="utf-8")
    synth_config.paths.output = blocker / "out"
    with pytest.raises(PipelineError, match="not writable"):
        batch_synthesize(synth_config)


def test_training_samples_from_backgrounds(synth_config, rng):
    samples = collect_training_samples(synth_config, _resources(synth_config), rng, 4, 16)
    assert 1 <= len(samples) <= 4
    for sample in samples:
        assert sample.x.shape == (16, 16, 3)
        assert sample.m.shape == (16, 16)
        chars = [c for c in sample.transcript if not c.isspace()]
        assert len(sample.char_boxes) == len(chars)
        assert all(isinstance(b, BBox) and 0 <= b.x0 < b.x1 <= 16 and 0 <= b.y0 < b.y1 <= 16 for b in sample.char_boxes)


def test_region_maps_are_exported(synth_config):
    rows = export_region_maps(synth_config)
    assert [r.stem for r in rows] == ["a", "b", "c"]
    for row in rows:
        assert row.error is None
        assert (synth_config.paths.output / "regions" / f"{row.stem}.png").exists()
