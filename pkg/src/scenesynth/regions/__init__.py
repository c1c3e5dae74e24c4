"""Text embedding region detection."""

from .contours import (
    enforce_connectivity,
    extract_regions,
    merge_similar,
    save_region_map,
    segment_contours,
    slic_cost_history,
    slic_superpixels,
    trace_boundary,
)
from .semantics import (
    load_palette,
    load_semantic_map,
    overlap_fractions,
    sample_candidate,
    select_candidates,
    semantic_score,
)

__all__ = [
    "enforce_connectivity",
    "extract_regions",
    "load_palette",
    "load_semantic_map",
    "merge_similar",
    "overlap_fractions",
    "sample_candidate",
    "save_region_map",
    "segment_contours",
    "select_candidates",
    "semantic_score",
    "slic_cost_history",
    "slic_superpixels",
    "trace_boundary",
]
