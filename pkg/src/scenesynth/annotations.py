"""Quadrilateral annotation files and the batch manifest."""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import PipelineError
from .models import Quad, SynthesisRecord

logger = logging.getLogger(__name__)

MANIFEST_HEADER = "stem\tinstances\tclasses\tstatus"


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def format_annotation(quad: Quad, transcript: str) -> str:
    """`x1,y1,x2,y2,x3,y3,x4,y4,transcript` with integer coordinates."""
    coords = ",".join(str(_round_half_up(float(v))) for v in np.asarray(quad.points).ravel())
    return f"{coords},{transcript}"


def write_annotations(record: SynthesisRecord, path: Path) -> None:
    """One line per instance, clockwise from the text's top-left, UTF-8."""
    path = Path(path)
    lines = [format_annotation(inst.quad, inst.transcript) for inst in record.instances]
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    except OSError as e:
        raise PipelineError(f"Cannot write annotations {path}: {e}") from e


def parse_annotation(line: str) -> tuple[Quad, str]:
    """Split off eight coordinates; everything after the 8th comma is the transcript."""
    parts = line.split(",", 8)
    if len(parts) != 9:
        raise PipelineError(f"Annotation line has fewer than 8 coordinates: {line!r}")
    try:
        coords = [float(p) for p in parts[:8]]
    except ValueError as e:
        raise PipelineError(f"Bad coordinate in annotation line {line!r}") from e
    return Quad(np.array(coords, dtype=np.float64).reshape(4, 2)), parts[8]


def read_annotations(path: Path) -> list[tuple[Quad, str]]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise PipelineError(f"Cannot read annotations {path}: {e}") from e
    # A transcript never holds a newline, so a trailing "\r" is line-ending noise.
    return [parse_annotation(line.rstrip("\r")) for line in text.split("\n") if line]


@dataclass
class ManifestRow:
    stem: str
    instances: int = 0
    classes: list[str] = field(default_factory=list)
    error: str | None = None

    @property
    def status(self) -> str:
        return "ok" if self.error is None else f"error: {self.error}"


def write_manifest(rows: list[ManifestRow], path: Path) -> None:
    """Tab-separated summary, one row per background, in stem order."""
    path = Path(path)
    lines = [MANIFEST_HEADER]
    for row in sorted(rows, key=lambda r: r.stem):
        status = " ".join(row.status.split())
        lines.append(f"{row.stem}\t{row.instances}\t{','.join(row.classes)}\t{status}")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise PipelineError(f"Cannot write manifest {path}: {e}") from e
    logger.debug("Wrote manifest with %d rows to %s", len(rows), path)


def read_manifest(path: Path) -> list[ManifestRow]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != MANIFEST_HEADER:
        raise PipelineError(f"Not a manifest: {path}")
    rows = []
    for line in lines[1:]:
        stem, count, classes, status = line.split("\t", 3)
        error = None if status == "ok" else status.removeprefix("error: ")
        rows.append(ManifestRow(stem, int(count), [c for c in classes.split(",") if c], error))
    return rows
