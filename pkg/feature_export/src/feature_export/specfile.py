"""Crop-specification file: which pixel boxes of which images become
objects of which scenes.

The file is a single JSON document::

    {
      "scenes": [
        {
          "image": "kitchen.png",          // path, relative to the spec file
          "scene_id": "kitchen",           // optional; default: image stem
          "split": "train",                // optional; "train" (default) or "test"
          "objects": [
            {
              "id": "fork0",
              "class": "fork",
              "box": [x0, y0, x1, y1],     // pixels, x0 < x1, y0 < y1
              "pixel_to_cm": 0.05,         // cm per pixel, > 0
              "pose": [x, y, theta],       // cm, cm, radians — supplied by
                                           // the operator, copied verbatim
              "movable": true,             // optional, default true
              "clutter": false,            // optional, default false
              "symmetry_order": 1          // optional, default 1
            }
          ]
        }
      ]
    }

One output scene line is emitted per image. Poses are not estimated from
pixels here; they come from the spec file unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


class SpecFileError(Exception):
    """The spec document itself is malformed (not a per-object data
    problem — those are collected into the export report instead)."""


@dataclass(frozen=True)
class CropSpec:
    """One object to cut out of one image."""

    object_id: str
    class_name: str
    box: tuple[float, float, float, float]  # x0, y0, x1, y1 in pixels
    pixel_to_cm: float
    pose: tuple[float, float, float]
    movable: bool = True
    clutter: bool = False
    symmetry_order: int = 1


@dataclass(frozen=True)
class SceneSpec:
    """All crops taken from one image; becomes one scene line."""

    image: Path
    scene_id: str
    split: str
    objects: tuple[CropSpec, ...] = field(default_factory=tuple)


def _require(record: dict, key: str, where: str):
    if key not in record:
        raise SpecFileError(f"{where}: missing key {key!r}")
    return record[key]


def _crop_from_json(rec: dict, where: str) -> CropSpec:
    if not isinstance(rec, dict):
        raise SpecFileError(f"{where}: object record must be a JSON object")
    box = _require(rec, "box", where)
    pose = _require(rec, "pose", where)
    if not (isinstance(box, (list, tuple)) and len(box) == 4):
        raise SpecFileError(f"{where}: box must have 4 entries")
    if not (isinstance(pose, (list, tuple)) and len(pose) == 3):
        raise SpecFileError(f"{where}: pose must have 3 entries")
    try:
        return CropSpec(
            object_id=str(_require(rec, "id", where)),
            class_name=str(_require(rec, "class", where)),
            box=tuple(float(v) for v in box),
            pixel_to_cm=float(_require(rec, "pixel_to_cm", where)),
            pose=tuple(float(v) for v in pose),
            movable=bool(rec.get("movable", True)),
            clutter=bool(rec.get("clutter", False)),
            symmetry_order=int(rec.get("symmetry_order", 1)),
        )
    except (TypeError, ValueError) as e:
        raise SpecFileError(f"{where}: {e}") from None


def _scene_from_json(rec: dict, base: Path, index: int) -> SceneSpec:
    where = f"scenes[{index}]"
    if not isinstance(rec, dict):
        raise SpecFileError(f"{where}: scene record must be a JSON object")
    image = Path(str(_require(rec, "image", where)))
    if not image.is_absolute():
        image = base / image
    split = str(rec.get("split", "train"))
    if split not in ("train", "test"):
        raise SpecFileError(f"{where}: split must be train or test, got {split!r}")
    objs = _require(rec, "objects", where)
    if not isinstance(objs, list) or not objs:
        raise SpecFileError(f"{where}: objects must be a non-empty list")
    crops = tuple(
        _crop_from_json(o, f"{where}.objects[{j}]") for j, o in enumerate(objs)
    )
    ids = [c.object_id for c in crops]
    if len(set(ids)) != len(ids):
        raise SpecFileError(f"{where}: duplicate object ids")
    return SceneSpec(
        image=image,
        scene_id=str(rec.get("scene_id", image.stem)),
        split=split,
        objects=crops,
    )


def load_crop_specs(path) -> list[SceneSpec]:
    """Parse a crop-specification file. Paths inside the file resolve
    relative to the file's directory. Raises :class:`SpecFileError` on a
    malformed document; per-object data problems (bad boxes, unreadable
    images) are deferred to export time so they can be reported per
    object."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise SpecFileError(f"cannot read {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise SpecFileError(f"{path}: invalid JSON ({e.msg})") from None
    if not isinstance(doc, dict):
        raise SpecFileError("top level must be a JSON object")
    scenes = _require(doc, "scenes", str(path))
    if not isinstance(scenes, list) or not scenes:
        raise SpecFileError("scenes must be a non-empty list")
    out = [_scene_from_json(rec, path.parent, i) for i, rec in enumerate(scenes)]
    sids = [s.scene_id for s in out]
    if len(set(sids)) != len(sids):
        raise SpecFileError("duplicate scene ids")
    return out
