"""Scene representation: planar object poses, fully connected scene graphs,
and the JSONL dataset format.

All lengths are centimetres and all angles are radians in (-pi, pi].
An object pose is (x, y, theta); the network-facing parameterisation is
(x, y, cos theta, sin theta) so orientation stays continuous.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Pose",
    "SceneObject",
    "Scene",
    "SceneGraph",
    "RelPose",
    "DatasetError",
    "wrap_angle",
    "relative_pose",
    "build_graph",
    "save_dataset",
    "load_dataset",
]

TWO_PI = 2.0 * math.pi


class DatasetError(Exception):
    """Malformed scene data. ``line`` is the 1-based JSONL line when the
    failure came from a file."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    t = (float(theta) + math.pi) % TWO_PI - math.pi
    return math.pi if t == -math.pi else t


@dataclass(frozen=True)
class Pose:
    """Planar pose. theta is canonicalised to (-pi, pi] on construction."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @property
    def cos(self) -> float:
        return math.cos(self.theta)

    @property
    def sin(self) -> float:
        return math.sin(self.theta)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta], dtype=np.float64)


@dataclass(frozen=True)
class RelPose:
    """Pose of one object expressed in another object's local frame."""

    dx: float
    dy: float
    cos_dtheta: float
    sin_dtheta: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.dx, self.dy, self.cos_dtheta, self.sin_dtheta],
            dtype=np.float64,
        )


def relative_pose(src: Pose, dst: Pose) -> RelPose:
    """Displacement from ``src`` to ``dst`` rotated into ``src``'s frame,
    plus the orientation difference as (cos, sin)."""
    dx = dst.x - src.x
    dy = dst.y - src.y
    c, s = src.cos, src.sin
    dtheta = dst.theta - src.theta
    return RelPose(
        dx=c * dx + s * dy,
        dy=-s * dx + c * dy,
        cos_dtheta=math.cos(dtheta),
        sin_dtheta=math.sin(dtheta),
    )


@dataclass(frozen=True)
class SceneObject:
    """One object: identity, pose, physical extent, and a raw semantic
    feature vector. ``symmetry_order`` counts equivalent orientations per
    full turn; 0 encodes full rotational symmetry."""

    object_id: str
    class_name: str
    pose: Pose
    scale: tuple[float, float]
    raw_features: tuple[float, ...]
    movable: bool = True
    clutter: bool = False
    symmetry_order: int = 1

    def __post_init__(self):
        w, h = self.scale
        if not (w > 0 and h > 0):
            raise DatasetError(
                f"object {self.object_id!r}: scale must be positive, got {self.scale}"
            )
        if self.symmetry_order < 0:
            raise DatasetError(
                f"object {self.object_id!r}: symmetry_order must be >= 0"
            )
        object.__setattr__(self, "scale", (float(w), float(h)))
        object.__setattr__(
            self, "raw_features", tuple(float(v) for v in self.raw_features)
        )

    @property
    def feature_dim(self) -> int:
        return len(self.raw_features)


@dataclass
class Scene:
    """A named arrangement with a train/test split tag."""

    scene_id: str
    split: str
    objects: list[SceneObject]

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise DatasetError(
                f"scene {self.scene_id!r}: split must be train or test"
            )

    @property
    def feature_dim(self) -> int:
        return self.objects[0].feature_dim if self.objects else 0

    def object_by_id(self, object_id: str) -> SceneObject:
        for o in self.objects:
            if o.object_id == object_id:
                return o
        raise KeyError(object_id)

    def with_pose(self, object_id: str, pose: Pose) -> "Scene":
        objects = [
            SceneObject(
                o.object_id, o.class_name, pose if o.object_id == object_id else o.pose,
                o.scale, o.raw_features, o.movable, o.clutter, o.symmetry_order,
            )
            for o in self.objects
        ]
        return Scene(self.scene_id, self.split, objects)

    def without(self, object_id: str) -> "Scene":
        objects = [o for o in self.objects if o.object_id != object_id]
        if len(objects) == len(self.objects):
            raise KeyError(object_id)
        return Scene(self.scene_id, self.split, objects)


@dataclass(frozen=True)
class SceneGraph:
    """Fully connected directed graph over the non-clutter objects of a
    scene. ``edges`` holds (src, dst) index pairs into ``objects`` for all
    ordered pairs, sorted canonically by the (dst id, src id) strings so
    that aggregation order never depends on input object order."""

    objects: tuple[SceneObject, ...]
    edges: tuple[tuple[int, int], ...]

    @property
    def n(self) -> int:
        return len(self.objects)

    def poses(self) -> np.ndarray:
        return np.array([o.pose.as_array() for o in self.objects])

    def movable_mask(self) -> np.ndarray:
        return np.array([o.movable for o in self.objects], dtype=bool)


def build_graph(objects: list[SceneObject] | Scene) -> SceneGraph:
    """Build the fully connected graph over graph-relevant objects.

    Immovable objects flagged as clutter are left out: they obstruct
    space but carry no arrangement information. Node order is input
    order; duplicate object ids are rejected.
    """
    if isinstance(objects, Scene):
        objects = objects.objects
    included = [o for o in objects if not (o.clutter and not o.movable)]
    if not included:
        raise DatasetError("scene has no graph-relevant objects")
    ids = [o.object_id for o in included]
    if len(set(ids)) != len(ids):
        raise DatasetError("duplicate object ids in scene")
    dims = {o.feature_dim for o in included}
    if len(dims) != 1:
        raise DatasetError(f"inconsistent feature dims: {sorted(dims)}")
    n = len(included)
    pairs = [
        (j, i) for i in range(n) for j in range(n) if j != i
    ]
    pairs.sort(key=lambda e: (ids[e[1]], ids[e[0]]))
    return SceneGraph(objects=tuple(included), edges=tuple(pairs))


# -- JSONL dataset ---------------------------------------------------------


def _object_to_json(o: SceneObject) -> dict:
    return {
        "id": o.object_id,
        "class": o.class_name,
        "pose": [o.pose.x, o.pose.y, o.pose.theta],
        "scale": [o.scale[0], o.scale[1]],
        "features": list(o.raw_features),
        "movable": o.movable,
        "clutter": o.clutter,
        "symmetry_order": o.symmetry_order,
    }


def _require(record: dict, key: str, line: int):
    if key not in record:
        raise DatasetError(f"missing key {key!r}", line)
    return record[key]


def _object_from_json(rec: dict, feature_dim: int, line: int) -> SceneObject:
    pose = _require(rec, "pose", line)
    scale = _require(rec, "scale", line)
    features = _require(rec, "features", line)
    if len(pose) != 3:
        raise DatasetError(f"pose must have 3 entries, got {len(pose)}", line)
    if len(scale) != 2:
        raise DatasetError(f"scale must have 2 entries, got {len(scale)}", line)
    if len(features) != feature_dim:
        raise DatasetError(
            f"object {rec.get('id')!r} has {len(features)} features, "
            f"scene declares feature_dim {feature_dim}",
            line,
        )
    try:
        return SceneObject(
            object_id=str(_require(rec, "id", line)),
            class_name=str(_require(rec, "class", line)),
            pose=Pose(*[float(v) for v in pose]),
            scale=(float(scale[0]), float(scale[1])),
            raw_features=tuple(float(v) for v in features),
            movable=bool(_require(rec, "movable", line)),
            clutter=bool(rec.get("clutter", False)),
            symmetry_order=int(_require(rec, "symmetry_order", line)),
        )
    except DatasetError as e:
        raise DatasetError(str(e), line) from None


def scene_to_json(scene: Scene) -> dict:
    return {
        "scene_id": scene.scene_id,
        "split": scene.split,
        "feature_dim": scene.feature_dim,
        "objects": [_object_to_json(o) for o in scene.objects],
    }


def scene_from_json(rec: dict, line: int | None = None) -> Scene:
    if not isinstance(rec, dict):
        raise DatasetError("scene record must be a JSON object", line)
    feature_dim = int(_require(rec, "feature_dim", line))
    objs = _require(rec, "objects", line)
    scene = Scene(
        scene_id=str(_require(rec, "scene_id", line)),
        split=str(_require(rec, "split", line)),
        objects=[_object_from_json(o, feature_dim, line) for o in objs],
    )
    return scene


def save_dataset(scenes: list[Scene], path) -> None:
    """Write scenes as JSONL, one scene per line. Floats keep full
    precision so a round trip is value-exact."""
    with open(path, "w", encoding="utf-8") as f:
        for scene in scenes:
            f.write(json.dumps(scene_to_json(scene)) + "\n")


def load_dataset(path) -> list[Scene]:
    """Read a JSONL scene file; any malformed line is reported with its
    1-based line number."""
    scenes = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as e:
                raise DatasetError(f"invalid JSON ({e.msg})", line_no) from None
            scenes.append(scene_from_json(rec, line_no))
    return scenes


def split_scenes(scenes: list[Scene]) -> tuple[list[Scene], list[Scene]]:
    train = [s for s in scenes if s.split == "train"]
    test = [s for s in scenes if s.split == "test"]
    return train, test
