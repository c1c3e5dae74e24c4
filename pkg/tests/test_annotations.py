"""Tests for annotation lines and the batch manifest."""

import numpy as np
import pytest

from scenesynth.annotations import (
    MANIFEST_HEADER,
    ManifestRow,
    format_annotation,
    parse_annotation,
    read_annotations,
    read_manifest,
    write_annotations,
    write_manifest,
)
from scenesynth.errors import PipelineError
from scenesynth.models import Instance, Quad, SynthesisRecord

BOX = Quad(np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 5.0], [0.0, 5.0]]))


def _record(*transcripts: str) -> SynthesisRecord:
    return SynthesisRecord(
        image_path=None,
        instances=[Instance(BOX, t, 0, "building", 1.0, np.eye(3)) for t in transcripts],
    )


def test_axis_aligned_box_line():
    assert format_annotation(BOX, "ab") == "0,0,10,0,10,5,0,5,ab"


def test_coordinates_round_half_up():
    quad = Quad(np.array([[0.5, 1.49], [2.5, -0.5], [3.51, 4.0], [-1.5, 7.2]]))
    assert format_annotation(quad, "x") == "1,1,3,0,4,4,-1,7,x"


def test_transcripts_with_commas_survive(tmp_path):
    path = tmp_path / "gt.txt"
    write_annotations(_record("a,b", "Fish, Chips & Co"), path)
    entries = read_annotations(path)
    assert [t for _, t in entries] == ["a,b", "Fish, Chips & Co"]
    assert np.array_equal(entries[0][0].points, BOX.points)


def test_no_instances_gives_an_empty_file(tmp_path):
    path = tmp_path / "annotations" / "gt_empty.txt"
    write_annotations(_record(), path)
    assert path.read_bytes() == b""
    assert read_annotations(path) == []


def test_files_are_utf8_with_lf_endings(tmp_path):
    path = tmp_path / "gt.txt"
    write_annotations(_record("café"), path)
    assert path.read_bytes() == "0,0,10,0,10,5,0,5,café\n".encode("utf-8")


def test_malformed_lines_are_rejected(tmp_path):
    with pytest.raises(PipelineError, match="fewer than 8"):
        parse_annotation("1,2,3,ab")
    with pytest.raises(PipelineError, match="Bad coordinate"):
        parse_annotation("1,2,3,4,5,6,7,x,ab")
    with pytest.raises(PipelineError, match="Cannot read"):
        read_annotations(tmp_path / "missing.txt")


def test_manifest_round_trip_in_stem_order(tmp_path):
    rows = [
        ManifestRow("b", 2, ["building", "signboard"]),
        ManifestRow("a", 0, [], "Background is 4x4 but\nsemantic map is 5x5"),
        ManifestRow("c", 1, ["wall"]),
    ]
    path = tmp_path / "manifest.tsv"
    write_manifest(rows, path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == MANIFEST_HEADER
    assert [line.split("\t")[0] for line in lines[1:]] == ["a", "b", "c"]
    assert lines[1].endswith("error: Background is 4x4 but semantic map is 5x5")

    back = read_manifest(path)
    assert [r.stem for r in back] == ["a", "b", "c"]
    assert back[1].classes == ["building", "signboard"]
    assert back[0].error == "Background is 4x4 but semantic map is 5x5"
    assert back[2].status == "ok"


def test_non_manifest_is_rejected(tmp_path):
    path = tmp_path / "other.tsv"
    path.write_text("a\tb\n", encoding="utf-8")
    with pytest.raises(PipelineError, match="Not a manifest"):
        read_manifest(path)
