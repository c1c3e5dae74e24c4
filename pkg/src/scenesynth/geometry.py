"""Homographies, raster warping and context-aware text placement.

A region is pushed through a random homography H into a synthetic "rectified"
frame, text is laid fronto-parallel along a fitted edge there, and the result
is mapped back to the background with H^-1.
"""

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np
import shapely
from shapely.geometry import LineString, Polygon
from skimage import measure

from .errors import GeometryError
from .imaging import resize_array, sample_bilinear
from .models import BBox, CandidateRegion, Homography, PlacedText, Quad, TextMask
from .regions.contours import trace_boundary

logger = logging.getLogger(__name__)

DET_EPSILON = 1e-9
MAX_CONDITION = 1e6
MAX_HOMOGRAPHY_TRIES = 100
SIMPLIFY_EPSILON = 2.0
MIN_EDGE_LENGTH = 10.0
MIN_PX_HEIGHT = 8

DEFAULT_MAX_PERTURB = 0.15
DEFAULT_MARGINS = 0.05
DEFAULT_BASELINE_OFFSET = 0.1
DEFAULT_MAX_HEIGHT_FRAC = 0.6
MAX_OUTSIDE_FRACTION = 0.05


@dataclass(frozen=True)
class PlacementEdge:
    """An oriented segment; the region interior lies to its left-hand (up) side."""

    start: np.ndarray
    end: np.ndarray
    method: str  # "edge" or "principal_axis"

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.end - self.start))

    @property
    def direction(self) -> np.ndarray:
        return (self.end - self.start) / self.length

    @property
    def up(self) -> np.ndarray:
        """Unit normal pointing to the interior (screen coordinates, y down)."""
        d = self.direction
        return np.array([d[1], -d[0]])


def _normalized(matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    if abs(matrix[2, 2]) > 1e-12:
        matrix = matrix / matrix[2, 2]
    return matrix


def make_homography(matrix: np.ndarray) -> Homography:
    return Homography(_normalized(matrix))


def translation(tx: float, ty: float) -> np.ndarray:
    return np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])


def apply_homography(h: Homography | np.ndarray, points: np.ndarray) -> np.ndarray:
    """Map (n, 2) points through a homography."""
    matrix = h.matrix if isinstance(h, Homography) else np.asarray(h, dtype=np.float64)
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    mapped = np.column_stack([pts, np.ones(len(pts))]) @ matrix.T
    w = mapped[:, 2]
    if np.any(np.abs(w) < 1e-12):
        raise GeometryError("Point maps to the line at infinity")
    return mapped[:, :2] / w[:, None]


def _similarity_normalizer(points: np.ndarray) -> np.ndarray:
    """Translate to the centroid and scale to mean distance sqrt(2)."""
    centroid = points.mean(axis=0)
    spread = np.mean(np.linalg.norm(points - centroid, axis=1))
    if spread < 1e-12:
        raise GeometryError("Degenerate correspondences: all points coincide")
    s = math.sqrt(2.0) / spread
    return np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])


def _has_collinear_triple(points: np.ndarray) -> bool:
    scale = max(np.ptp(points[:, 0]), np.ptp(points[:, 1]), 1e-12)
    for a, b, c in itertools.combinations(points, 3):
        cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if abs(cross) <= 1e-9 * scale * scale:
            return True
    return False


def homography_from_correspondences(src: np.ndarray, dst: np.ndarray) -> Homography:
    """Direct linear transform on four point pairs, with similarity pre-normalization."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != (4, 2) or dst.shape != (4, 2):
        raise GeometryError(f"Need 4x2 point arrays, got {src.shape} and {dst.shape}")
    if _has_collinear_triple(src) or _has_collinear_triple(dst):
        raise GeometryError("Degenerate correspondences: three collinear points")

    t_src = _similarity_normalizer(src)
    t_dst = _similarity_normalizer(dst)
    ns = apply_homography(t_src, src)
    nd = apply_homography(t_dst, dst)

    rows = []
    for (x, y), (u, v) in zip(ns, nd):
        rows.append([-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u])
        rows.append([0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v])
    _, _, vt = np.linalg.svd(np.array(rows))
    h_norm = vt[-1].reshape(3, 3)

    matrix = np.linalg.inv(t_dst) @ h_norm @ t_src
    if abs(matrix[2, 2]) < 1e-12:
        raise GeometryError("Degenerate homography: bottom-right entry vanishes")
    return make_homography(matrix)


def invert(h: Homography) -> Homography:
    """Inverse homography, normalized."""
    matrix = _normalized(h.matrix)
    if abs(np.linalg.det(matrix)) <= DET_EPSILON:
        raise GeometryError(f"Singular homography (det={np.linalg.det(matrix):.3g})")
    return make_homography(np.linalg.inv(matrix))


def is_simple_quad(points: np.ndarray) -> bool:
    polygon = Polygon(points)
    return bool(polygon.is_valid and polygon.area > 0)


def _signed_area(points: np.ndarray) -> float:
    x, y = points[:, 0], points[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def condition_number(h: Homography, src: np.ndarray, dst: np.ndarray) -> float:
    """Condition number of H expressed in similarity-normalized coordinates."""
    normalized = _similarity_normalizer(dst) @ h.matrix @ np.linalg.inv(_similarity_normalizer(src))
    return float(np.linalg.cond(normalized))


def random_homography(
    rng: np.random.Generator, bbox: BBox, max_perturb: float = DEFAULT_MAX_PERTURB
) -> Homography:
    """Perturb each bbox corner by at most max_perturb x diagonal and fit H."""
    if not 0.0 <= max_perturb <= 0.3:
        raise GeometryError(f"max_perturb must be in [0, 0.3], got {max_perturb}")
    if max_perturb == 0.0:
        return Homography.identity()
    if bbox.width < 2 or bbox.height < 2:
        raise GeometryError(f"Bounding box {bbox} is too thin for a homography")

    src = bbox.corners()
    radius = max_perturb * bbox.diagonal
    for _ in range(MAX_HOMOGRAPHY_TRIES):
        r = rng.uniform(0.0, radius, size=4)
        theta = rng.uniform(0.0, 2.0 * math.pi, size=4)
        dst = src + np.column_stack([r * np.cos(theta), r * np.sin(theta)])
        if not is_simple_quad(dst) or _signed_area(dst) * _signed_area(src) <= 0:
            continue
        try:
            h = homography_from_correspondences(src, dst)
        except GeometryError:
            continue
        if condition_number(h, src, dst) < MAX_CONDITION:
            return h
    raise GeometryError(f"No well-conditioned homography after {MAX_HOMOGRAPHY_TRIES} tries")


def warp_raster(
    raster: np.ndarray,
    h: Homography | np.ndarray,
    out_size: tuple[int, int],
    interp: str = "bilinear",
    origin: tuple[int, int] = (0, 0),
) -> np.ndarray:
    """Inverse-mapping warp: output pixel p samples the input at h^-1(p).

    out_size is (width, height); origin offsets the output grid. Boolean rasters
    are bilinearly sampled and thresholded at 0.5. Samples outside the source are 0.
    """
    width, height = out_size
    if width < 1 or height < 1:
        raise GeometryError(f"Invalid output size {out_size}")
    if interp not in ("bilinear", "nearest"):
        raise GeometryError(f"Unknown interpolation {interp!r}")
    matrix = h if isinstance(h, Homography) else make_homography(h)
    inverse = invert(matrix).matrix

    raster = np.asarray(raster)
    binary = raster.dtype == bool
    values = raster.astype(np.float64)

    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    xs += origin[0]
    ys += origin[1]
    w = inverse[2, 0] * xs + inverse[2, 1] * ys + inverse[2, 2]
    safe_w = np.where(np.abs(w) < 1e-12, np.nan, w)
    sx = (inverse[0, 0] * xs + inverse[0, 1] * ys + inverse[0, 2]) / safe_w
    sy = (inverse[1, 0] * xs + inverse[1, 1] * ys + inverse[1, 2]) / safe_w
    sx = np.nan_to_num(sx, nan=-1e9, posinf=-1e9, neginf=-1e9)
    sy = np.nan_to_num(sy, nan=-1e9, posinf=-1e9, neginf=-1e9)

    if interp == "nearest":
        ix = np.floor(sx + 0.5).astype(np.int64)
        iy = np.floor(sy + 0.5).astype(np.int64)
        src_h, src_w = values.shape[:2]
        inside = (ix >= 0) & (ix < src_w) & (iy >= 0) & (iy < src_h)
        out = np.zeros((height, width) + values.shape[2:])
        out[inside] = values[iy[inside], ix[inside]]
    else:
        out = sample_bilinear(values, sx, sy)

    if binary:
        return out >= 0.5
    return out


def scale_mask(mask: np.ndarray, factor: float) -> np.ndarray:
    """Resize a binary mask by factor (bilinear, then 0.5 threshold)."""
    if factor <= 0:
        raise GeometryError(f"Scale factor must be > 0, got {factor}")
    h, w = mask.shape
    width = max(1, int(round(w * factor)))
    height = max(1, int(round(h * factor)))
    return resize_array(np.asarray(mask, dtype=np.float64), width, height) >= 0.5


def _probe_interior(polygon: Polygon, start: np.ndarray, end: np.ndarray, normal: np.ndarray) -> int:
    """How many probe points on the normal side of a segment fall inside the polygon."""
    ts = np.linspace(0.2, 0.8, 5)
    along = start[None, :] + ts[:, None] * (end - start)[None, :]
    probes = np.concatenate([along + k * normal for k in (1.0, 2.0, 3.0, 4.0)])
    return int(np.count_nonzero(shapely.contains_xy(polygon, probes[:, 0], probes[:, 1])))


def _orient(start: np.ndarray, end: np.ndarray, boundary: np.ndarray, method: str) -> PlacementEdge:
    edge = PlacementEdge(start=start, end=end, method=method)
    polygon = Polygon(boundary)
    if not polygon.is_valid:
        polygon = polygon.buffer(0)
    up = edge.up
    above = _probe_interior(polygon, start, end, up) if not polygon.is_empty else 0
    below = _probe_interior(polygon, start, end, -up) if not polygon.is_empty else 0
    if above == below:
        centroid = boundary.mean(axis=0)
        above = int(np.dot(centroid - start, up) >= 0)
        below = 1 - above
    if above >= below:
        return edge
    return PlacementEdge(start=end, end=start, method=method)


def fit_placement_edge(boundary: np.ndarray) -> PlacementEdge:
    """Longest side of the simplified boundary, or the principal axis for blobby shapes."""
    boundary = np.asarray(boundary, dtype=np.float64)
    if boundary.ndim != 2 or len(boundary) < 3:
        raise GeometryError(f"Boundary needs >= 3 vertices, got {len(boundary)}")
    if len(np.unique(boundary, axis=0)) < 2:
        raise GeometryError("Degenerate boundary: all vertices coincide")

    ring = LineString(np.vstack([boundary, boundary[:1]]))
    simplified = np.asarray(ring.simplify(SIMPLIFY_EPSILON, preserve_topology=False).coords)
    lengths = np.linalg.norm(np.diff(simplified, axis=0), axis=1)
    best = int(np.argmax(lengths)) if len(lengths) else 0

    if len(lengths) and lengths[best] >= MIN_EDGE_LENGTH:
        return _orient(simplified[best].copy(), simplified[best + 1].copy(), boundary, "edge")

    centroid = boundary.mean(axis=0)
    centered = boundary - centroid
    eigvals, eigvecs = np.linalg.eigh(centered.T @ centered / len(boundary))
    axis = eigvecs[:, int(np.argmax(eigvals))]
    proj = centered @ axis
    if np.ptp(proj) < 1e-9:
        raise GeometryError("Degenerate boundary: no principal extent")
    start = centroid + proj.min() * axis
    end = centroid + proj.max() * axis
    return _orient(start, end, boundary, "principal_axis")


def quad_iou(a: Quad, b: Quad) -> float:
    """Intersection over union of two quads."""
    pa, pb = Polygon(a.points), Polygon(b.points)
    if not pa.is_valid:
        pa = pa.buffer(0)
    if not pb.is_valid:
        pb = pb.buffer(0)
    union = pa.union(pb).area
    if union <= 0:
        return 0.0
    return float(pa.intersection(pb).area / union)


def _largest_component(mask: np.ndarray) -> np.ndarray:
    labels = measure.label(mask, connectivity=1)
    if labels.max() <= 1:
        return mask
    counts = np.bincount(labels.ravel())
    counts[0] = 0
    return labels == int(np.argmax(counts))


def place_text(
    candidate: CandidateRegion,
    h: Homography,
    text: TextMask,
    margins: float = DEFAULT_MARGINS,
    image_size: tuple[int, int] | None = None,
    baseline_offset: float = DEFAULT_BASELINE_OFFSET,
    max_height_frac: float = DEFAULT_MAX_HEIGHT_FRAC,
) -> PlacedText:
    """Lay text fronto-parallel in the H-warped region and map it back with H^-1.

    The text band starts baseline_offset x interior height inside the placement
    edge, is at most max_height_frac x interior height tall, and keeps side margins.
    """
    region = candidate.region
    if not text.mask.any():
        raise GeometryError("Text mask is empty")
    bbox = region.bbox

    # Warped frame canvas covering H(region bbox)
    outer = np.array(
        [
            [bbox.x0 - 0.5, bbox.y0 - 0.5],
            [bbox.x1 - 0.5, bbox.y0 - 0.5],
            [bbox.x1 - 0.5, bbox.y1 - 0.5],
            [bbox.x0 - 0.5, bbox.y1 - 0.5],
        ]
    )
    warped_outer = apply_homography(h, outer)
    ox, oy = np.floor(warped_outer.min(axis=0)).astype(int)
    cw, ch = (np.ceil(warped_outer.max(axis=0)).astype(int) - (ox, oy)) + 1
    if cw * ch > 16 * max(bbox.area, 1) + 64:
        raise GeometryError("Degenerate warp: region explodes under the homography")

    to_canvas = translation(-ox, -oy) @ h.matrix
    mask_to_canvas = to_canvas @ translation(bbox.x0, bbox.y0)
    warped_region = warp_raster(region.mask.astype(bool), mask_to_canvas, (int(cw), int(ch)))
    if not warped_region.any():
        raise GeometryError(f"Region {region.id} vanishes under the homography")
    warped_region = _largest_component(warped_region)

    edge = fit_placement_edge(trace_boundary(warped_region))

    # Reading direction left to right; vertical edges read upward
    interior = edge.up
    d = edge.direction
    start = edge.start
    if d[0] < -1e-12 or (abs(d[0]) <= 1e-12 and d[1] > 0):
        d = -d
        start = edge.end
    up = np.array([d[1], -d[0]])
    span = edge.length

    ys, xs = np.nonzero(warped_region)
    rel = np.column_stack([xs, ys]).astype(np.float64) - start
    s = rel @ d
    t = rel @ interior
    inner = (s >= margins * span) & (s <= (1.0 - margins) * span) & (t >= -0.5)
    if not np.any(inner):
        raise GeometryError(f"Region {region.id} has no interior along its placement edge")
    bins = np.floor(s[inner]).astype(np.int64)
    tops = np.full(bins.max() - bins.min() + 1, np.nan)
    np.fmax.at(tops, bins - bins.min(), t[inner])
    interior_height = float(np.nanmin(tops)) + 0.5

    text_w = text.width - 2
    text_h = text.height - 2
    usable_width = span * (1.0 - 2.0 * margins)
    sigma = min(max_height_frac * interior_height / text_h, usable_width / text_w)
    nominal = text.px_height or text_h
    if sigma <= 0 or nominal * sigma < MIN_PX_HEIGHT:
        raise GeometryError(
            f"Text {text.transcript!r} does not fit region {region.id} "
            f"(scaled height {nominal * sigma:.1f} px < {MIN_PX_HEIGHT})"
        )

    offset = baseline_offset * interior_height
    band = sigma * text_h
    top_t = offset + band if np.dot(up, interior) > 0 else offset
    left_s = 0.5 * span - 0.5 * sigma * text_w
    top_left = start + left_s * d + top_t * interior

    # Text-local (u, v) -> warped canvas, text box corners at pixel edges 0.5 and size-1.5
    u0, v0 = 0.5, 0.5
    placement = np.array(
        [
            [sigma * d[0], -sigma * up[0], 0.0],
            [sigma * d[1], -sigma * up[1], 0.0],
            [0.0, 0.0, 1.0],
        ]
    )
    placement[:2, 2] = top_left - placement[:2, :2] @ np.array([u0, v0])
    text_to_background = np.linalg.inv(to_canvas) @ placement
    text_to_background = _normalized(text_to_background)

    corners = np.array(
        [[u0, v0], [text.width - 1.5, v0], [text.width - 1.5, text.height - 1.5], [u0, text.height - 1.5]]
    )
    quad = Quad(apply_homography(text_to_background, corners))
    if not is_simple_quad(quad.points):
        raise GeometryError("Placed text quad is not simple")

    if image_size is not None:
        width, height = image_size
        pts = quad.points
        if pts[:, 0].min() < 0 or pts[:, 1].min() < 0 or pts[:, 0].max() > width - 1 or pts[:, 1].max() > height - 1:
            raise GeometryError("Placed text quad leaves the image")
        limit_x, limit_y = width, height
    else:
        limit_x = limit_y = None

    lo = np.floor(quad.points.min(axis=0)).astype(int) - 1
    hi = np.ceil(quad.points.max(axis=0)).astype(int) + 2
    lo = np.maximum(lo, 0)
    if limit_x is not None:
        hi = np.minimum(hi, (limit_x, limit_y))
    window = (int(hi[0] - lo[0]), int(hi[1] - lo[1]))
    if window[0] < 1 or window[1] < 1:
        raise GeometryError("Placed text falls outside the image")
    warped_text = warp_raster(
        text.mask.astype(bool), text_to_background, window, origin=(int(lo[0]), int(lo[1]))
    )
    ink = int(warped_text.sum())
    if ink == 0:
        raise GeometryError(f"Text {text.transcript!r} vanishes after warping")

    # Reject text spilling out of the region
    region_window = np.zeros_like(warped_text)
    rx0, ry0 = max(bbox.x0, lo[0]), max(bbox.y0, lo[1])
    rx1, ry1 = min(bbox.x1, lo[0] + window[0]), min(bbox.y1, lo[1] + window[1])
    if rx0 < rx1 and ry0 < ry1:
        region_window[ry0 - lo[1] : ry1 - lo[1], rx0 - lo[0] : rx1 - lo[0]] = region.mask[
            ry0 - bbox.y0 : ry1 - bbox.y0, rx0 - bbox.x0 : rx1 - bbox.x0
        ]
    outside = int(np.count_nonzero(warped_text & ~region_window))
    if outside > MAX_OUTSIDE_FRACTION * ink:
        raise GeometryError(f"Text {text.transcript!r} spills out of region {region.id}")

    logger.debug(
        "Placed %r in region %d via %s (scale %.2f)", text.transcript, region.id, edge.method, sigma
    )
    return PlacedText(
        warped_mask=warped_text,
        origin=(int(lo[0]), int(lo[1])),
        quad=quad,
        transcript=text.transcript,
        source=text,
        transform=text_to_background,
        scale=float(sigma),
    )


def place_axis_aligned(
    candidate: CandidateRegion,
    text: TextMask,
    margins: float = DEFAULT_MARGINS,
    image_size: tuple[int, int] | None = None,
    **kwargs,
) -> PlacedText:
    """Placement without perspective: the identity homography."""
    return place_text(candidate, Homography.identity(), text, margins, image_size, **kwargs)
