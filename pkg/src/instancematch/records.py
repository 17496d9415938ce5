"""Line-delimited proposal records shared by matching output and evaluation.

One record per line, tab-separated:

    image_id  instance_id  score  x_min  y_min  x_max  y_max  mask_record_name

``instance_id`` is "-" for proposals the assignment left unmatched and
``mask_record_name`` is "-" when no mask is attached; otherwise it names a
uint8 record in the sibling mask container at ``<records path>.masks``.
Files are plain text, so multi-image record files can be concatenated.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import RecordError
from .evaluation import GroundTruth, GroundTruthSet
from .matching import LabeledProposal

FIELD_COUNT = 8
NONE_FIELD = "-"


@dataclass(frozen=True)
class RecordRow:
    image_id: str
    instance_id: int | None
    score: float
    box: tuple[float, float, float, float]
    mask_name: str | None = None

    def __post_init__(self):
        if not self.image_id or "\t" in self.image_id or "\n" in self.image_id:
            raise RecordError(f"illegal image id: {self.image_id!r}")
        if self.mask_name is not None and (
            not self.mask_name or "\t" in self.mask_name or "\n" in self.mask_name
        ):
            raise RecordError(f"illegal mask record name: {self.mask_name!r}")


def format_rows(rows: Iterable[RecordRow]) -> str:
    lines = []
    for r in rows:
        inst = NONE_FIELD if r.instance_id is None else str(int(r.instance_id))
        mask = r.mask_name if r.mask_name else NONE_FIELD
        box = "\t".join(f"{v:.10g}" for v in r.box)
        lines.append(f"{r.image_id}\t{inst}\t{r.score:.10g}\t{box}\t{mask}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_rows(text: str) -> list[RecordRow]:
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != FIELD_COUNT:
            raise RecordError(
                f"line {lineno}: expected {FIELD_COUNT} tab-separated fields, "
                f"got {len(fields)}"
            )
        image_id, inst, score, x0, y0, x1, y1, mask = fields
        try:
            row = RecordRow(
                image_id=image_id,
                instance_id=None if inst == NONE_FIELD else int(inst),
                score=float(score),
                box=(float(x0), float(y0), float(x1), float(y1)),
                mask_name=None if mask == NONE_FIELD else mask,
            )
        except (ValueError, RecordError) as exc:
            raise RecordError(f"line {lineno}: {exc}") from None
        rows.append(row)
    return rows


def write_records(path, rows: Iterable[RecordRow]) -> None:
    Path(path).write_text(format_rows(rows), encoding="utf-8")


def read_records(path) -> list[RecordRow]:
    return parse_rows(Path(path).read_text(encoding="utf-8"))


def mask_container_path(records_path) -> Path:
    return Path(str(records_path) + ".masks")


def rows_to_predictions(
    rows: Iterable[RecordRow], masks: Mapping[str, np.ndarray] | None = None
) -> dict[str, list[LabeledProposal]]:
    """Group rows by image into LabeledProposals, resolving mask references."""
    out: dict[str, list[LabeledProposal]] = {}
    for r in rows:
        mask = None
        if r.mask_name is not None and masks is not None:
            if r.mask_name not in masks:
                raise RecordError(f"mask record {r.mask_name!r} missing")
            mask = masks[r.mask_name]
        out.setdefault(r.image_id, []).append(
            LabeledProposal(r.box, mask, r.instance_id, r.score)
        )
    return out


def rows_to_ground_truth(
    rows: Iterable[RecordRow], masks: Mapping[str, np.ndarray] | None = None
) -> GroundTruthSet:
    images: dict[str, list[GroundTruth]] = {}
    for r in rows:
        if r.instance_id is None:
            raise RecordError("ground-truth rows need an instance id")
        mask = None
        if r.mask_name is not None and masks is not None:
            if r.mask_name not in masks:
                raise RecordError(f"mask record {r.mask_name!r} missing")
            mask = masks[r.mask_name]
        images.setdefault(r.image_id, []).append(
            GroundTruth(r.instance_id, r.box, mask)
        )
    return GroundTruthSet(images)
