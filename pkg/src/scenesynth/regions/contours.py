"""Contour (gradient-based) segmentation into homogeneous regions.

SLIC superpixels are clustered in 5-D (Lab + compactness-weighted xy), split into
4-connected pieces with small fragments absorbed, then merged agglomeratively by
mean Lab distance on the region adjacency graph.
"""

import heapq
import logging
import math
from pathlib import Path

import numpy as np
from PIL import Image
from skimage import measure

from ..errors import SegmentationError
from ..imaging import RasterImage, rgb_to_lab
from ..models import BBox, LabColor, Region, RegionMap

logger = logging.getLogger(__name__)

# Defaults tuned for sign/board-scale regions on a 512x512 image
REFERENCE_PIXELS = 512 * 512
DEFAULT_SUPERPIXELS = 300
DEFAULT_COMPACTNESS = 10.0
DEFAULT_ITERATIONS = 10
DEFAULT_MERGE_DELTA_E = 8.0

# Moore neighbourhood, clockwise on screen (y down) starting from west: (dx, dy)
MOORE_OFFSETS = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)]


def default_superpixel_count(width: int, height: int, per_reference: int = DEFAULT_SUPERPIXELS) -> int:
    """Scale the superpixel count with the pixel count."""
    return max(1, int(round(per_reference * width * height / REFERENCE_PIXELS)))


def _grid_seeds(width: int, height: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Regular grid of at most k seed positions, columns favoured over rows."""
    nx = min(k, width, max(1, math.ceil(math.sqrt(k * width / height))))
    ny = min(height, max(1, k // nx))
    xs = (np.arange(nx) + 0.5) * (width / nx) - 0.5
    ys = (np.arange(ny) + 0.5) * (height / ny) - 0.5
    grid_x, grid_y = np.meshgrid(xs, ys)
    return grid_x.ravel(), grid_y.ravel()


def _relabel_compact(labels: np.ndarray) -> tuple[np.ndarray, int]:
    """Relabel to [0, n) in order of first appearance in raster order."""
    flat = labels.ravel()
    uniques, first_index, inverse = np.unique(flat, return_index=True, return_inverse=True)
    order = np.argsort(first_index, kind="stable")
    rank = np.empty(len(uniques), dtype=np.int64)
    rank[order] = np.arange(len(uniques))
    return rank[inverse].reshape(labels.shape), len(uniques)


def _adjacent_pairs(labels: np.ndarray) -> np.ndarray:
    """Unique (a, b) label pairs with a < b that share a 4-neighbour edge."""
    pairs = []
    for a, b in (
        (labels[:, :-1], labels[:, 1:]),
        (labels[:-1, :], labels[1:, :]),
    ):
        differs = a != b
        if np.any(differs):
            pair = np.stack([a[differs], b[differs]], axis=1)
            pairs.append(np.sort(pair, axis=1))
    if not pairs:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(np.concatenate(pairs), axis=0)


def _slic(
    image: RasterImage, k: int, compactness: float, iterations: int
) -> tuple[np.ndarray, list[float]]:
    """Run SLIC and return raw labels plus the assignment cost after each iteration."""
    pixels = image.width * image.height
    if k < 1:
        raise SegmentationError(f"Superpixel count must be >= 1, got {k}")
    if k > pixels:
        raise SegmentationError(f"Superpixel count {k} exceeds pixel count {pixels}")
    if iterations < 1:
        raise SegmentationError(f"Iterations must be >= 1, got {iterations}")

    lab = rgb_to_lab(image.to_rgb())
    height, width = lab.shape[:2]
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)

    step = math.sqrt(pixels / k)
    spatial_weight = (compactness / step) ** 2

    seed_x, seed_y = _grid_seeds(width, height, k)
    n = len(seed_x)
    sx = np.clip(np.rint(seed_x), 0, width - 1).astype(np.int64)
    sy = np.clip(np.rint(seed_y), 0, height - 1).astype(np.int64)
    centers = np.column_stack([lab[sy, sx], seed_x, seed_y])

    def pixel_cost(labels: np.ndarray) -> np.ndarray:
        c = centers[labels]
        d_lab = np.sum((lab - c[..., :3]) ** 2, axis=-1)
        d_xy = (xx - c[..., 3]) ** 2 + (yy - c[..., 4]) ** 2
        return d_lab + spatial_weight * d_xy

    labels = np.full((height, width), -1, dtype=np.int64)
    costs = []
    for iteration in range(iterations):
        if iteration == 0:
            dist = np.full((height, width), np.inf)
        else:
            # The current assignment stays a candidate, so cost never increases
            dist = pixel_cost(labels)

        for c in range(n):
            cx, cy = centers[c, 3], centers[c, 4]
            x_lo, x_hi = max(0, math.ceil(cx - step)), min(width, math.floor(cx + step) + 1)
            y_lo, y_hi = max(0, math.ceil(cy - step)), min(height, math.floor(cy + step) + 1)
            if x_lo >= x_hi or y_lo >= y_hi:
                continue
            window = (slice(y_lo, y_hi), slice(x_lo, x_hi))
            d = np.sum((lab[window] - centers[c, :3]) ** 2, axis=-1)
            d += spatial_weight * ((xx[window] - cx) ** 2 + (yy[window] - cy) ** 2)
            better = d < dist[window]
            dist[window][better] = d[better]
            labels[window][better] = c

        missing = labels < 0
        if np.any(missing):
            # Pixels outside every search window fall back to the nearest centre
            my, mx = np.nonzero(missing)
            d = np.sum((lab[my, mx][:, None, :] - centers[None, :, :3]) ** 2, axis=-1)
            d += spatial_weight * (
                (mx[:, None] - centers[None, :, 3]) ** 2 + (my[:, None] - centers[None, :, 4]) ** 2
            )
            labels[my, mx] = np.argmin(d, axis=1)

        flat = labels.ravel()
        counts = np.bincount(flat, minlength=n).astype(np.float64)
        features = np.column_stack([lab.reshape(-1, 3), xx.ravel(), yy.ravel()])
        nonempty = counts > 0
        for j in range(5):
            sums = np.bincount(flat, weights=features[:, j], minlength=n)
            centers[nonempty, j] = sums[nonempty] / counts[nonempty]

        costs.append(float(np.sum(pixel_cost(labels))))
        logger.debug("SLIC iteration %d cost %.3f", iteration, costs[-1])

    return labels, costs


def slic_superpixels(
    image: RasterImage,
    k: int,
    compactness: float = DEFAULT_COMPACTNESS,
    iterations: int = DEFAULT_ITERATIONS,
) -> RegionMap:
    """Cluster pixels into at most k superpixels seeded on a regular grid."""
    labels, _ = _slic(image, k, compactness, iterations)
    labels, count = _relabel_compact(labels)
    return RegionMap(labels=labels, region_count=count)


def slic_cost_history(
    image: RasterImage,
    k: int,
    compactness: float = DEFAULT_COMPACTNESS,
    iterations: int = DEFAULT_ITERATIONS,
) -> list[float]:
    """Total 5-D assignment cost after each SLIC iteration."""
    _, costs = _slic(image, k, compactness, iterations)
    return costs


def enforce_connectivity(region_map: RegionMap, min_size: float | None = None) -> RegionMap:
    """Split labels into 4-connected pieces and absorb small fragments.

    Fragments smaller than (pixels / region_count) / 4 join their largest
    adjacent piece.
    """
    labels = region_map.labels
    pixels = labels.size
    if min_size is None:
        min_size = (pixels / max(region_map.region_count, 1)) / 4.0

    components = measure.label(labels + 1, background=0, connectivity=1) - 1
    n = int(components.max()) + 1
    area = np.bincount(components.ravel(), minlength=n).astype(np.int64)

    neighbours: dict[int, set[int]] = {i: set() for i in range(n)}
    for a, b in _adjacent_pairs(components):
        neighbours[int(a)].add(int(b))
        neighbours[int(b)].add(int(a))

    parent = np.arange(n)

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return int(i)

    for c in sorted(range(n), key=lambda i: (area[i], i)):
        root = find(c)
        if area[root] >= min_size:
            continue
        candidates = {find(nb) for nb in neighbours[root]} - {root}
        if not candidates:
            continue
        target = max(candidates, key=lambda r: (area[r], -r))
        parent[root] = target
        area[target] += area[root]
        neighbours[target] |= neighbours[root]
        neighbours[target].discard(target)

    roots = np.array([find(i) for i in range(n)], dtype=np.int64)
    merged, count = _relabel_compact(roots[components])
    return RegionMap(labels=merged, region_count=count)


def merge_similar(
    region_map: RegionMap, image: RasterImage, delta_e_threshold: float = DEFAULT_MERGE_DELTA_E
) -> RegionMap:
    """Merge the adjacent pair with the smallest mean-Lab distance while it is below threshold."""
    if not delta_e_threshold > 0:
        raise SegmentationError(f"Merge threshold must be > 0, got {delta_e_threshold}")

    lab = rgb_to_lab(image.to_rgb()).reshape(-1, 3)
    flat = region_map.labels.ravel()
    n = region_map.region_count

    counts = np.bincount(flat, minlength=n).astype(np.float64)
    sums = np.column_stack([np.bincount(flat, weights=lab[:, j], minlength=n) for j in range(3)])
    means = sums / np.maximum(counts, 1.0)[:, None]

    neighbours: dict[int, set[int]] = {i: set() for i in range(n)}
    for a, b in _adjacent_pairs(region_map.labels):
        neighbours[int(a)].add(int(b))
        neighbours[int(b)].add(int(a))

    version = np.zeros(n, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    parent = np.arange(n)

    def distance(a: int, b: int) -> float:
        return float(np.linalg.norm(means[a] - means[b]))

    heap = []
    for a in range(n):
        for b in sorted(neighbours[a]):
            if a < b:
                heap.append((distance(a, b), a, b, 0, 0))
    heapq.heapify(heap)

    merges = 0
    while heap:
        d, a, b, va, vb = heapq.heappop(heap)
        if d >= delta_e_threshold:
            break
        if not (alive[a] and alive[b]) or version[a] != va or version[b] != vb:
            continue

        keep, drop = a, b  # a < b
        sums[keep] += sums[drop]
        counts[keep] += counts[drop]
        means[keep] = sums[keep] / counts[keep]
        alive[drop] = False
        parent[drop] = keep
        version[keep] += 1
        merges += 1

        for nb in neighbours.pop(drop):
            if nb == keep:
                continue
            neighbours[nb].discard(drop)
            neighbours[nb].add(keep)
            neighbours[keep].add(nb)
        neighbours[keep].discard(drop)

        for nb in sorted(neighbours[keep]):
            lo, hi = min(keep, nb), max(keep, nb)
            heapq.heappush(heap, (distance(lo, hi), lo, hi, int(version[lo]), int(version[hi])))

    def root(i: int) -> int:
        while parent[i] != i:
            i = parent[i]
        return int(i)

    roots = np.array([root(i) for i in range(n)], dtype=np.int64)
    merged, count = _relabel_compact(roots[region_map.labels])
    logger.debug("Merged %d region pairs: %d -> %d regions", merges, n, count)
    return RegionMap(labels=merged, region_count=count)


def trace_boundary(mask: np.ndarray) -> np.ndarray:
    """Moore-neighbour trace of the outer border of the first region in raster order.

    Returns an (n, 2) int array of (x, y) pixels in clockwise order, start not repeated.
    """
    padded = np.pad(np.asarray(mask, dtype=bool), 1)
    ys, xs = np.nonzero(padded)
    if len(xs) == 0:
        raise SegmentationError("Cannot trace the boundary of an empty mask")

    start = (int(xs[0]), int(ys[0]))
    initial_backtrack = (start[0] - 1, start[1])
    current, backtrack = start, initial_backtrack
    contour = [start]

    for _ in range(4 * padded.size + 8):
        idx = MOORE_OFFSETS.index((backtrack[0] - current[0], backtrack[1] - current[1]))
        found = None
        for i in range(1, 9):
            dx, dy = MOORE_OFFSETS[(idx + i) % 8]
            if padded[current[1] + dy, current[0] + dx]:
                found = (current[0] + dx, current[1] + dy)
                bx, by = MOORE_OFFSETS[(idx + i - 1) % 8]
                backtrack = (current[0] + bx, current[1] + by)
                break
        if found is None:
            break  # isolated pixel
        current = found
        if current == start and backtrack == initial_backtrack:
            break
        contour.append(current)

    return np.array(contour, dtype=np.int64) - 1


def extract_regions(region_map: RegionMap, image: RasterImage) -> list[Region]:
    """One Region per label with area, bbox, mean Lab colour and traced boundary."""
    lab = rgb_to_lab(image.to_rgb()).reshape(-1, 3)
    flat = region_map.labels.ravel()
    n = region_map.region_count
    counts = np.bincount(flat, minlength=n).astype(np.float64)
    means = np.column_stack(
        [np.bincount(flat, weights=lab[:, j], minlength=n) for j in range(3)]
    ) / np.maximum(counts, 1.0)[:, None]

    regions = []
    for prop in measure.regionprops(region_map.labels + 1):
        label = int(prop.label) - 1
        min_row, min_col, max_row, max_col = prop.bbox
        bbox = BBox(x0=int(min_col), y0=int(min_row), x1=int(max_col), y1=int(max_row))
        mask = np.array(prop.image, dtype=bool)
        boundary = trace_boundary(mask) + np.array([bbox.x0, bbox.y0])
        regions.append(
            Region(
                id=label,
                area=int(mask.sum()),
                bbox=bbox,
                mean_lab=LabColor(*(float(v) for v in means[label])),
                boundary=boundary,
                mask=mask,
            )
        )
    return sorted(regions, key=lambda r: r.id)


def segment_contours(
    image: RasterImage,
    superpixels: int | None = None,
    compactness: float = DEFAULT_COMPACTNESS,
    iterations: int = DEFAULT_ITERATIONS,
    merge_delta_e: float = DEFAULT_MERGE_DELTA_E,
) -> tuple[RegionMap, list[Region]]:
    """Full contour segmentation: SLIC, connectivity, merging, extraction."""
    k = superpixels or default_superpixel_count(image.width, image.height)
    k = min(k, image.width * image.height)
    region_map = slic_superpixels(image, k, compactness, iterations)
    region_map = enforce_connectivity(region_map)
    region_map = merge_similar(region_map, image, merge_delta_e)
    logger.debug("Contour segmentation produced %d regions", region_map.region_count)
    return region_map, extract_regions(region_map, image)


def save_region_map(region_map: RegionMap, path: Path) -> None:
    """Dump a RegionMap as an indexed PNG (label modulo 256 = palette index)."""
    rng = np.random.default_rng(0)
    palette = rng.integers(0, 256, size=(256, 3), dtype=np.uint8)
    indexed = Image.fromarray((region_map.labels % 256).astype(np.uint8), mode="P")
    indexed.putpalette(palette.ravel().tolist())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    indexed.save(path, format="PNG")
