"""End-to-end synthesis: regions, text, placement, appearance, annotations."""

import hashlib
import logging
from collections.abc import Callable
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .annotations import ManifestRow, write_annotations, write_manifest
from .appearance.data import TrainingSample
from .appearance.inference import infer_appearance, load_generator
from .appearance.losses import compose_masked
from .appearance.networks import Generator
from .config import SynthesisConfig
from .errors import GeometryError, PipelineError, SceneSynthError, TextSourceError, TrainingError
from .geometry import (
    apply_homography,
    homography_from_correspondences,
    place_axis_aligned,
    place_text,
    quad_iou,
    random_homography,
    warp_raster,
)
from .imaging import RasterImage, load_image, resize_array, rgb_to_lab, save_image
from .models import (
    BBox,
    CandidateRegion,
    Corpus,
    Homography,
    Instance,
    LabColor,
    PlacedText,
    Region,
    SemanticMap,
    SynthesisRecord,
    TextMask,
)
from .regions.contours import save_region_map, segment_contours, trace_boundary
from .regions.semantics import load_semantic_map, sample_candidate, select_candidates
from .text.corpus import load_corpus, sample_mode, sample_text
from .text.render import MIN_PX_HEIGHT, has_glyphs, load_fonts, rasterize_text

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
MAP_SUFFIX = ".png"
RANDOM_CLASS = "random"

# Placements shrunk below this factor are re-rendered at the placed size
RERENDER_BELOW = 0.5
RANDOM_REGION_WIDTH = (0.15, 0.5)
RANDOM_REGION_HEIGHT = (0.08, 0.25)


@dataclass
class Resources:
    """Everything loaded once and shared read-only by every image."""

    fonts: list[Path]
    corpus: Corpus
    generator: Generator | None = None


@dataclass
class Placement:
    candidate: CandidateRegion
    homography: Homography
    placed: PlacedText


@dataclass
class InputPair:
    stem: str
    background: Path
    semantic_map: Path | None


@dataclass
class BatchSummary:
    output_dir: Path
    rows: list[ManifestRow] = field(default_factory=list)

    @property
    def failures(self) -> list[ManifestRow]:
        return [r for r in self.rows if r.error is not None]

    @property
    def instances(self) -> int:
        return sum(r.instances for r in self.rows)


def image_seed(seed: int, stem: str) -> int:
    """Per-image 64-bit seed, independent of processing order."""
    digest = hashlib.sha256(f"{seed}:{stem}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def load_resources(config: SynthesisConfig) -> Resources:
    fonts = load_fonts(config.paths.fonts)
    corpus = load_corpus(config.paths.corpus)
    generator = None
    if config.text_embedding and config.appearance.use_generator:
        if config.paths.generator is None:
            raise PipelineError("No generator checkpoint configured (paths.generator)")
        generator = load_generator(config.paths.generator)
    logger.info("Loaded %d fonts and %d corpus lines", len(fonts), len(corpus.lines))
    return Resources(fonts=fonts, corpus=corpus, generator=generator)


def pair_inputs(backgrounds: Path, semantic_maps: Path | None) -> list[InputPair]:
    """Match backgrounds to semantic maps by filename stem, sorted by stem."""
    backgrounds = Path(backgrounds)
    if not backgrounds.is_dir():
        raise PipelineError(f"Background directory not found: {backgrounds}")
    images = {p.stem: p for p in sorted(backgrounds.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}

    if semantic_maps is None:
        pairs = [InputPair(stem, path, None) for stem, path in sorted(images.items())]
    else:
        semantic_maps = Path(semantic_maps)
        if not semantic_maps.is_dir():
            raise PipelineError(f"Semantic map directory not found: {semantic_maps}")
        maps = {p.stem: p for p in sorted(semantic_maps.iterdir()) if p.suffix.lower() == MAP_SUFFIX}
        unmatched = sorted(set(images) ^ set(maps))
        if unmatched:
            logger.warning("%d file(s) without a partner, e.g. %s", len(unmatched), unmatched[0])
        pairs = [InputPair(stem, images[stem], maps[stem]) for stem in sorted(set(images) & set(maps))]

    if not pairs:
        raise PipelineError(f"No background/semantic map pairs found in {backgrounds}")
    return pairs


def detect_candidates(
    image: RasterImage, semantic_map: SemanticMap, config: SynthesisConfig
) -> list[CandidateRegion]:
    """Contour regions fused with the semantic map."""
    if (semantic_map.width, semantic_map.height) != (image.width, image.height):
        raise PipelineError(
            f"Background is {image.width}x{image.height} but semantic map is "
            f"{semantic_map.width}x{semantic_map.height}"
        )
    seg = config.segmentation
    _, regions = segment_contours(image, seg.superpixels, seg.compactness, seg.iterations, seg.merge_delta_e)
    sel = config.selection
    return select_candidates(regions, semantic_map, sel.whitelist, sel.min_score, sel.min_area_frac)


def random_regions(rng: np.random.Generator, image: RasterImage, count: int) -> list[CandidateRegion]:
    """Axis-aligned rectangles at random positions, standing in for detected regions."""
    lab = rgb_to_lab(image.to_rgb())
    candidates = []
    for region_id in range(count):
        w = max(4, int(image.width * rng.uniform(*RANDOM_REGION_WIDTH)))
        h = max(4, int(image.height * rng.uniform(*RANDOM_REGION_HEIGHT)))
        w, h = min(w, image.width), min(h, image.height)
        x0 = int(rng.integers(0, image.width - w + 1))
        y0 = int(rng.integers(0, image.height - h + 1))
        bbox = BBox(x0, y0, x0 + w, y0 + h)
        mask = np.ones((h, w), dtype=bool)
        mean = lab[y0 : y0 + h, x0 : x0 + w].reshape(-1, 3).mean(axis=0)
        region = Region(
            id=region_id,
            area=w * h,
            bbox=bbox,
            mean_lab=LabColor(*(float(v) for v in mean)),
            boundary=trace_boundary(mask) + np.array([x0, y0]),
            mask=mask,
        )
        candidates.append(CandidateRegion(region, 1.0, RANDOM_CLASS, {}))
    return candidates


def _sample_text_mask(
    rng: np.random.Generator, resources: Resources, config: SynthesisConfig
) -> tuple[TextMask, Path]:
    mode = sample_mode(rng, config.text.word_probability)
    text = sample_text(resources.corpus, rng, mode, config.text.max_chars)
    fonts = [f for f in resources.fonts if has_glyphs(text, f)]
    if not fonts:
        raise TextSourceError(f"No font covers {text!r}")
    font = fonts[int(rng.integers(len(fonts)))]
    return rasterize_text(text, font, config.text.px_height), font


def _place(
    candidate: CandidateRegion,
    h: Homography,
    text: TextMask,
    config: SynthesisConfig,
    image_size: tuple[int, int],
) -> PlacedText:
    geo = config.geometry
    options = dict(
        margins=geo.margins,
        image_size=image_size,
        baseline_offset=geo.baseline_offset,
        max_height_frac=geo.max_height_frac,
    )
    if not config.text_embedding:
        return place_axis_aligned(candidate, text, **options)
    return place_text(candidate, h, text, **options)


def place_one(
    rng: np.random.Generator,
    candidate: CandidateRegion,
    resources: Resources,
    config: SynthesisConfig,
    image_size: tuple[int, int],
) -> Placement:
    """Sample a text and place it in one candidate region."""
    text, font = _sample_text_mask(rng, resources, config)
    if config.text_embedding:
        h = random_homography(rng, candidate.region.bbox, config.geometry.max_perturb)
    else:
        h = Homography.identity()
    placed = _place(candidate, h, text, config, image_size)

    if placed.scale < RERENDER_BELOW:
        px = max(MIN_PX_HEIGHT, int(round(config.text.px_height * placed.scale)))
        try:
            placed = _place(candidate, h, rasterize_text(text.transcript, font, px), config, image_size)
        except GeometryError as e:
            logger.debug("Keeping downscaled %r: %s", text.transcript, e)
    return Placement(candidate=candidate, homography=h, placed=placed)


def plan_placements(
    rng: np.random.Generator,
    candidates: list[CandidateRegion],
    resources: Resources,
    config: SynthesisConfig,
    image_size: tuple[int, int],
) -> list[Placement]:
    """Up to a random target count of non-overlapping placements, one per region.

    Regions are drawn by score and a failed region is not tried again. Failed
    attempts are retried on other regions up to limits.retries times, so
    retries=0 stops at the first failure.
    """
    target = int(rng.integers(1, config.limits.max_instances + 1))
    available = list(candidates)
    placements: list[Placement] = []
    failures = 0
    while len(placements) < target and available and failures <= config.limits.retries:
        candidate = sample_candidate(rng, available)
        available = [c for c in available if c is not candidate]
        try:
            placement = place_one(rng, candidate, resources, config, image_size)
        except (GeometryError, TextSourceError) as e:
            failures += 1
            logger.debug("Placement in region %d failed: %s", candidate.region.id, e)
            continue
        quad = placement.placed.quad
        if any(quad_iou(quad, p.placed.quad) > config.geometry.max_overlap_iou for p in placements):
            failures += 1
            logger.debug("Placement in region %d overlaps an earlier text", candidate.region.id)
            continue
        placements.append(placement)
    return placements


def _contrasting_color(rng: np.random.Generator, background: np.ndarray) -> np.ndarray:
    if background.mean() > 0.5:
        return rng.uniform(0.0, 0.3, size=3)
    return rng.uniform(0.7, 1.0, size=3)


def _appearance_window(placed: PlacedText, width: int, height: int) -> BBox:
    """The placed mask window padded by a quarter of its longer side."""
    x, y = placed.origin
    h, w = placed.warped_mask.shape
    pad = max(4, int(round(0.25 * max(h, w))))
    return BBox(max(0, x - pad), max(0, y - pad), min(width, x + w + pad), min(height, y + h + pad))


def render_appearance(
    canvas: np.ndarray, placed: PlacedText, generator: Generator | None, rng: np.random.Generator
) -> None:
    """Colour the placed text pixels of an (H, W, 3) canvas in place.

    With a generator the crop around the text is restyled by G; without one the
    text gets a flat colour contrasting with its surroundings. Pixels outside
    the mask are never written.
    """
    height, width = canvas.shape[:2]
    box = _appearance_window(placed, width, height)
    x = canvas[box.y0 : box.y1, box.x0 : box.x1]
    m = placed.full_mask(width, height)[box.y0 : box.y1, box.x0 : box.x1].astype(np.uint8)
    if not m.any():
        return
    if generator is not None:
        styled = infer_appearance(generator, x, m)
    else:
        color = _contrasting_color(rng, x[m == 0] if (m == 0).any() else x.reshape(-1, 3))
        styled = compose_masked(np.broadcast_to(color, x.shape).astype(np.float64), m, x)
    canvas[box.y0 : box.y1, box.x0 : box.x1] = styled


def synthesize_one(
    background: RasterImage,
    semantic_map: SemanticMap | None,
    resources: Resources,
    config: SynthesisConfig,
    seed: int,
) -> tuple[RasterImage, SynthesisRecord]:
    """Embed up to max_instances texts into one background.

    Returns the composed image, with the background's channel count, and its
    record. Text is composed in RGB. No candidate regions yields an
    unmodified copy of the background and no instances.
    """
    rng = np.random.default_rng(seed)
    source = background
    background = background.to_rgb()
    size = (background.width, background.height)

    if config.region_detection:
        if semantic_map is None:
            raise PipelineError("Region detection needs a semantic map")
        candidates = detect_candidates(background, semantic_map, config)
    else:
        candidates = random_regions(rng, background, config.limits.max_instances + config.limits.retries)

    canvas = np.array(background.data, dtype=np.float64)
    record = SynthesisRecord(image_path=None)
    if not candidates:
        logger.debug("No candidate regions; background left unchanged")
        return source, record

    placements = plan_placements(rng, candidates, resources, config, size)
    generator = resources.generator if config.text_embedding else None
    for placement in placements:
        render_appearance(canvas, placement.placed, generator, rng)
        record.instances.append(
            Instance(
                quad=placement.placed.quad,
                transcript=placement.placed.transcript,
                region_id=placement.candidate.region.id,
                semantic_class=placement.candidate.dominant_class,
                score=placement.candidate.score,
                homography=placement.homography.matrix,
            )
        )
    composed = RasterImage(np.clip(canvas, 0.0, 1.0))
    return (composed.to_gray() if source.channels == 1 else composed), record


def export_word_crops(
    image: RasterImage, record: SynthesisRecord, directory: Path, stem: str, crop_height: int = 32
) -> list[tuple[str, str]]:
    """Rectify each annotated quad to an upright crop; returns (filename, transcript) pairs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    labels = []
    for i, inst in enumerate(record.instances):
        pts = inst.quad.points
        top = np.linalg.norm(pts[1] - pts[0]) + np.linalg.norm(pts[2] - pts[3])
        side = np.linalg.norm(pts[3] - pts[0]) + np.linalg.norm(pts[2] - pts[1])
        if side < 2.0:
            logger.debug("Skipping degenerate quad %d of %s", i, stem)
            continue
        width = max(1, int(round(crop_height * top / side)))
        rect = np.array(
            [[0, 0], [width - 1, 0], [width - 1, crop_height - 1], [0, crop_height - 1]], dtype=np.float64
        )
        try:
            h = homography_from_correspondences(pts, rect)
        except GeometryError as e:
            logger.debug("Skipping quad %d of %s: %s", i, stem, e)
            continue
        pixels = np.clip(warp_raster(image.data, h, (width, crop_height)), 0.0, 1.0)
        name = f"{stem}_{i:02d}.png"
        save_image(RasterImage(pixels), directory / name)
        labels.append((name, inst.transcript))
    return labels


def write_crop_labels(labels: list[tuple[str, str]], path: Path) -> None:
    """`filename<TAB>transcript` lines for exported word crops."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{name}\t{text}\n" for name, text in labels), encoding="utf-8")


def output_paths(output_dir: Path, stem: str) -> tuple[Path, Path]:
    """Image and annotation file for one background."""
    output_dir = Path(output_dir)
    return output_dir / "images" / f"{stem}.png", output_dir / "annotations" / f"gt_{stem}.txt"


def process_pair(
    pair: InputPair, resources: Resources, config: SynthesisConfig
) -> tuple[ManifestRow, list[tuple[str, str]]]:
    """Synthesize and write one background; failures become a manifest error row."""
    try:
        background = load_image(pair.background)
        semantic_map = None
        if config.region_detection:
            semantic_map = load_semantic_map(pair.semantic_map, config.paths.palette)
        image, record = synthesize_one(
            background, semantic_map, resources, config, image_seed(config.seed, pair.stem)
        )
        image_path, annotation_path = output_paths(config.paths.output, pair.stem)
        record.image_path = image_path
        save_image(image, image_path)
        write_annotations(record, annotation_path)
        crops = []
        if config.appearance.export_crops:
            crops = export_word_crops(
                image, record, Path(config.paths.output) / "crops", pair.stem, config.appearance.crop_height
            )
    except SceneSynthError as e:
        logger.warning("Failed %s: %s", pair.stem, e)
        return ManifestRow(stem=pair.stem, error=str(e)), []
    except Exception as e:
        logger.exception("Unexpected failure on %s", pair.stem)
        return ManifestRow(stem=pair.stem, error=f"{type(e).__name__}: {e}"), []

    classes = sorted({inst.semantic_class for inst in record.instances})
    return ManifestRow(stem=pair.stem, instances=len(record.instances), classes=classes), crops


_WORKER_STATE: tuple[Resources, SynthesisConfig] | None = None


def _init_worker(config: SynthesisConfig) -> None:
    global _WORKER_STATE
    logging.basicConfig(level=logging.WARNING)
    _WORKER_STATE = (load_resources(config), config)


def _worker_task(pair: InputPair) -> tuple[ManifestRow, list[tuple[str, str]]]:
    if _WORKER_STATE is None:
        raise PipelineError("Worker process was not initialized")
    resources, config = _WORKER_STATE
    return process_pair(pair, resources, config)


def pipeline_inputs(config: SynthesisConfig) -> list[InputPair]:
    maps = config.paths.semantic_maps if config.region_detection else None
    return pair_inputs(config.paths.backgrounds, maps)


def batch_synthesize(
    config: SynthesisConfig,
    on_image: Callable[[ManifestRow], None] | None = None,
) -> BatchSummary:
    """Synthesize every background/map pair and write the manifest.

    Per-image failures are recorded in the manifest; the batch carries on.
    Outputs do not depend on the worker count.
    """
    pairs = pipeline_inputs(config)
    output_dir = Path(config.paths.output)
    try:
        output_dir.mkdir(parents=True, exist_ok=True)
        (output_dir / ".write-check").touch()
        (output_dir / ".write-check").unlink()
    except OSError as e:
        raise PipelineError(f"Output directory is not writable: {output_dir} ({e})") from e

    logger.info("Synthesizing %d images with %d worker(s)", len(pairs), config.workers)
    results: dict[str, tuple[ManifestRow, list[tuple[str, str]]]] = {}
    if config.workers <= 1:
        resources = load_resources(config)
        for pair in pairs:
            results[pair.stem] = process_pair(pair, resources, config)
            if on_image:
                on_image(results[pair.stem][0])
    else:
        with ProcessPoolExecutor(
            max_workers=config.workers, initializer=_init_worker, initargs=(config,)
        ) as pool:
            futures = {pool.submit(_worker_task, pair): pair.stem for pair in pairs}
            for future in as_completed(futures):
                results[futures[future]] = future.result()
                if on_image:
                    on_image(results[futures[future]][0])

    rows = [results[stem][0] for stem in sorted(results)]
    write_manifest(rows, output_dir / "manifest.tsv")
    if config.appearance.export_crops:
        labels = [label for stem in sorted(results) for label in results[stem][1]]
        write_crop_labels(labels, output_dir / "crops" / "labels.tsv")

    summary = BatchSummary(output_dir=output_dir, rows=rows)
    logger.info(
        "Wrote %d images with %d instances (%d failed)",
        len(rows) - len(summary.failures), summary.instances, len(summary.failures),
    )
    return summary


def validate_inputs(config: SynthesisConfig) -> list[ManifestRow]:
    """Dry run: pair the inputs and check each one decodes and matches, without synthesizing."""
    pairs = pipeline_inputs(config)
    load_fonts(config.paths.fonts)
    load_corpus(config.paths.corpus)
    if config.text_embedding and config.appearance.use_generator:
        load_generator(config.paths.generator)

    rows = []
    for pair in pairs:
        try:
            image = load_image(pair.background)
            if pair.semantic_map is not None:
                semantic_map = load_semantic_map(pair.semantic_map, config.paths.palette)
                if (semantic_map.width, semantic_map.height) != (image.width, image.height):
                    raise PipelineError(
                        f"Background is {image.width}x{image.height} but semantic map is "
                        f"{semantic_map.width}x{semantic_map.height}"
                    )
        except SceneSynthError as e:
            rows.append(ManifestRow(stem=pair.stem, error=str(e)))
            continue
        rows.append(ManifestRow(stem=pair.stem))
    return rows


def _char_boxes_in_crop(
    placed: PlacedText, window: BBox, size: int
) -> list[BBox]:
    """Character boxes mapped from text-local to training-crop pixels."""
    fx = size / window.width
    fy = size / window.height
    boxes = []
    for box in placed.source.char_boxes:
        corners = apply_homography(placed.transform, box.corners())
        x0 = (corners[:, 0].min() - window.x0) * fx
        y0 = (corners[:, 1].min() - window.y0) * fy
        x1 = (corners[:, 0].max() + 1 - window.x0) * fx
        y1 = (corners[:, 1].max() + 1 - window.y0) * fy
        bx0 = min(size - 1, max(0, int(np.floor(x0))))
        by0 = min(size - 1, max(0, int(np.floor(y0))))
        bx1 = max(bx0 + 1, min(size, int(np.ceil(x1))))
        by1 = max(by0 + 1, min(size, int(np.ceil(y1))))
        boxes.append(BBox(bx0, by0, bx1, by1))
    return boxes


def training_sample(image: RasterImage, placed: PlacedText, size: int) -> TrainingSample:
    """Crop around a placement and resize it to size x size."""
    window = _appearance_window(placed, image.width, image.height)
    x = image.data[window.y0 : window.y1, window.x0 : window.x1]
    m = placed.full_mask(image.width, image.height)[window.y0 : window.y1, window.x0 : window.x1]
    small_x = np.clip(resize_array(x, size, size), 0.0, 1.0)
    small_m = (resize_array(m.astype(np.float64), size, size) >= 0.5).astype(np.uint8)
    return TrainingSample(
        x=small_x,
        m=small_m,
        transcript=placed.transcript,
        char_boxes=_char_boxes_in_crop(placed, window, size),
    )


def collect_training_samples(
    config: SynthesisConfig,
    resources: Resources,
    rng: np.random.Generator,
    count: int,
    size: int,
    on_sample: Callable[[int], None] | None = None,
) -> list[TrainingSample]:
    """GAN inputs X: text masks placed into background regions, cropped and resized."""
    pairs = pipeline_inputs(config)
    samples: list[TrainingSample] = []
    for round_index in range(max(1, count)):
        if len(samples) >= count:
            break
        added = 0
        for pair in pairs:
            if len(samples) >= count:
                break
            try:
                image = load_image(pair.background).to_rgb()
                if config.region_detection:
                    semantic_map = load_semantic_map(pair.semantic_map, config.paths.palette)
                    candidates = detect_candidates(image, semantic_map, config)
                else:
                    candidates = random_regions(rng, image, config.limits.max_instances)
                placements = plan_placements(rng, candidates, resources, config, (image.width, image.height))
            except SceneSynthError as e:
                logger.warning("Skipping %s for training samples: %s", pair.stem, e)
                continue
            for placement in placements[: count - len(samples)]:
                samples.append(training_sample(image, placement.placed, size))
                added += 1
                if on_sample:
                    on_sample(len(samples))
        if added == 0:
            break
        logger.debug("Sample round %d: %d samples so far", round_index, len(samples))

    if not samples:
        raise TrainingError("No training samples could be placed in the backgrounds")
    if len(samples) < count:
        logger.warning("Collected only %d of %d training samples", len(samples), count)
    return samples


def export_region_maps(
    config: SynthesisConfig, on_image: Callable[[ManifestRow], None] | None = None
) -> list[ManifestRow]:
    """Debug dump: region maps as indexed PNGs plus per-image candidate counts."""
    use_maps = config.paths.semantic_maps is not None and config.paths.palette is not None
    pairs = pair_inputs(config.paths.backgrounds, config.paths.semantic_maps if use_maps else None)
    out_dir = Path(config.paths.output) / "regions"
    seg = config.segmentation
    rows = []
    for pair in pairs:
        try:
            image = load_image(pair.background).to_rgb()
            region_map, regions = segment_contours(
                image, seg.superpixels, seg.compactness, seg.iterations, seg.merge_delta_e
            )
            save_region_map(region_map, out_dir / f"{pair.stem}.png")
            classes: list[str] = []
            if pair.semantic_map is not None:
                semantic_map = load_semantic_map(pair.semantic_map, config.paths.palette)
                sel = config.selection
                candidates = select_candidates(
                    regions, semantic_map, sel.whitelist, sel.min_score, sel.min_area_frac
                )
                classes = sorted({c.dominant_class for c in candidates})
                row = ManifestRow(stem=pair.stem, instances=len(candidates), classes=classes)
            else:
                row = ManifestRow(stem=pair.stem, instances=len(regions))
        except SceneSynthError as e:
            row = ManifestRow(stem=pair.stem, error=str(e))
        rows.append(row)
        if on_image:
            on_image(row)
    return rows
