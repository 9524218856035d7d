"""Shared fixture: three deterministic synthetic photographs (two forks,
one plate) drawn with PIL, plus helpers to build crop-spec files."""

from __future__ import annotations

import json

import pytest
from PIL import Image, ImageDraw

BACKGROUND = (30, 32, 38)
SIZE = (200, 160)  # width, height

# pixel boxes enclosing each drawn object, per image stem
BOXES = {
    "fork_a": (55.0, 10.0, 145.0, 150.0),
    "fork_b": (60.0, 12.0, 148.0, 148.0),
    "plate": (35.0, 15.0, 165.0, 145.0),
}


def _draw_fork(draw: ImageDraw.ImageDraw, cx: int, shade, tine_h=55,
               handle_w=12, head_w=56):
    top, bottom = 20, 140
    # four tines
    n = 4
    gap = (head_w - n * 8) // (n - 1)
    x = cx - head_w // 2
    for _ in range(n):
        draw.rectangle([x, top, x + 8, top + tine_h], fill=shade)
        x += 8 + gap
    # head base and handle
    draw.rectangle([cx - head_w // 2, top + tine_h - 8, cx + head_w // 2,
                    top + tine_h + 12], fill=shade)
    draw.rectangle([cx - handle_w // 2, top + tine_h + 12, cx + handle_w // 2,
                    bottom], fill=shade)


def _draw_plate(draw: ImageDraw.ImageDraw, cx: int, cy: int, shade):
    r = 60
    draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=shade)
    ring = 38
    rim = tuple(max(0, c - 35) for c in shade)
    draw.ellipse([cx - ring, cy - ring, cx + ring, cy + ring],
                 outline=rim, width=4)


@pytest.fixture(scope="session")
def fixture_images(tmp_path_factory):
    """Paths of the three synthetic photographs, keyed by stem."""
    root = tmp_path_factory.mktemp("images")
    paths = {}

    img = Image.new("RGB", SIZE, BACKGROUND)
    _draw_fork(ImageDraw.Draw(img), cx=100, shade=(205, 202, 192))
    paths["fork_a"] = root / "fork_a.png"
    img.save(paths["fork_a"])

    img = Image.new("RGB", SIZE, BACKGROUND)
    _draw_fork(ImageDraw.Draw(img), cx=104, shade=(188, 186, 180), tine_h=62,
               handle_w=10, head_w=52)
    paths["fork_b"] = root / "fork_b.png"
    img.save(paths["fork_b"])

    img = Image.new("RGB", SIZE, BACKGROUND)
    _draw_plate(ImageDraw.Draw(img), cx=100, cy=80, shade=(214, 209, 200))
    paths["plate"] = root / "plate.png"
    img.save(paths["plate"])
    return paths


def crop_entry(object_id, class_name, stem, pose=(0.0, 0.0, 0.0),
               pixel_to_cm=0.1, **extra):
    entry = {
        "id": object_id,
        "class": class_name,
        "box": list(BOXES[stem]),
        "pixel_to_cm": pixel_to_cm,
        "pose": list(pose),
    }
    entry.update(extra)
    return entry


@pytest.fixture
def standard_spec(fixture_images, tmp_path):
    """A three-scene spec file (one scene per fixture image) and the
    output path the test should export to."""
    doc = {
        "scenes": [
            {
                "image": str(fixture_images["fork_a"]),
                "scene_id": "scene-fork-a",
                "split": "train",
                "objects": [crop_entry("fork0", "fork", "fork_a",
                                       pose=(1.0, -2.0, 0.5))],
            },
            {
                "image": str(fixture_images["fork_b"]),
                "scene_id": "scene-fork-b",
                "split": "test",
                "objects": [crop_entry("fork1", "fork", "fork_b")],
            },
            {
                "image": str(fixture_images["plate"]),
                "scene_id": "scene-plate",
                "split": "train",
                "objects": [crop_entry("plate0", "plate", "plate",
                                       symmetry_order=0, movable=False)],
            },
        ]
    }
    spec_path = tmp_path / "crops.json"
    spec_path.write_text(json.dumps(doc))
    return spec_path, tmp_path / "scenes.jsonl"
