"""Turn crop specifications into arrangement-scene JSONL.

Each input image becomes one scene line in the output file, holding one
object per crop: the encoder's 512-dim feature vector, a physical scale
equal to the pixel box extent times the pixel-to-cm factor, and the
operator-supplied pose copied verbatim.

Data problems are collected per object rather than aborting the run: a
scene with any invalid object is withheld entirely (a partial scene
would silently misrepresent the arrangement), valid scenes are still
written, and the caller decides what to do with the report.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from PIL import Image, UnidentifiedImageError

from .encoder import FEATURE_DIM, descriptor512
from .specfile import SceneSpec


@dataclass(frozen=True)
class ExportError:
    scene_id: str
    image: str
    object_id: str | None
    message: str


@dataclass
class ExportReport:
    written: list[str] = field(default_factory=list)
    errors: list[ExportError] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def _validate_crop(crop, width: int, height: int) -> str | None:
    x0, y0, x1, y1 = crop.box
    if not (x0 < x1 and y0 < y1):
        return f"empty box {crop.box}"
    if x0 < 0 or y0 < 0 or x1 > width or y1 > height:
        return f"box {crop.box} outside image bounds {width}x{height}"
    if not crop.pixel_to_cm > 0:
        return f"pixel_to_cm must be > 0, got {crop.pixel_to_cm}"
    if crop.symmetry_order < 0:
        return f"symmetry_order must be >= 0, got {crop.symmetry_order}"
    return None


def _object_record(crop, image: Image.Image, encoder) -> dict:
    region = image.crop(tuple(crop.box))
    features = encoder(region)
    if len(features) != FEATURE_DIM:
        raise ValueError(
            f"encoder returned {len(features)} values, expected {FEATURE_DIM}"
        )
    x0, y0, x1, y1 = crop.box
    return {
        "id": crop.object_id,
        "class": crop.class_name,
        "pose": [float(v) for v in crop.pose],
        "scale": [
            (x1 - x0) * crop.pixel_to_cm,
            (y1 - y0) * crop.pixel_to_cm,
        ],
        "features": [float(v) for v in features],
        "movable": crop.movable,
        "clutter": crop.clutter,
        "symmetry_order": crop.symmetry_order,
    }


def export(scene_specs, out_path, encoder=descriptor512) -> ExportReport:
    """Encode every crop and write one scene line per image to
    ``out_path``. Returns a report of written scene ids and per-object
    errors; inspect ``report.ok`` before trusting the output."""
    report = ExportReport()
    lines = []
    for spec in scene_specs:
        errors_before = len(report.errors)
        try:
            with Image.open(spec.image) as img:
                img.load()
                record = _scene_record(spec, img, encoder, report)
        except (OSError, UnidentifiedImageError) as e:
            for crop in spec.objects:
                report.errors.append(ExportError(
                    spec.scene_id, str(spec.image), crop.object_id,
                    f"unreadable image: {e}"))
            continue
        if len(report.errors) == errors_before:
            lines.append(record)
            report.written.append(spec.scene_id)
    out_path = Path(out_path)
    with open(out_path, "w", encoding="utf-8") as f:
        for record in lines:
            f.write(json.dumps(record) + "\n")
    return report


def _scene_record(spec: SceneSpec, img: Image.Image, encoder,
                  report: ExportReport) -> dict | None:
    objects = []
    for crop in spec.objects:
        problem = _validate_crop(crop, img.width, img.height)
        if problem is not None:
            report.errors.append(ExportError(
                spec.scene_id, str(spec.image), crop.object_id, problem))
            continue
        objects.append(_object_record(crop, img, encoder))
    return {
        "scene_id": spec.scene_id,
        "split": spec.split,
        "feature_dim": FEATURE_DIM,
        "objects": objects,
    }
