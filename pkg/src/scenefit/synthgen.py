"""Synthetic scenario generators with known ground truth.

Every scenario draws object relations from an explicit generative
process (Gaussian mixtures over relative placements), so evaluation can
compare predictions against the exact conditional modes rather than
against noisy samples.

Scenarios (workspace 100x100 cm, coordinates in cm):

* ``dining`` — two round plates placed diametrically opposite at a
  uniformly random table angle, a bowl centred exactly on each plate,
  and a fork and knife beside each plate at distances drawn from a
  two-mode mixture; which side holds the fork flips per arrangement with
  probability 1/2; cutlery points radially outward.
* ``ordering-class-size`` / ``ordering-all-size`` / ``ordering-unseen``
  — a row of cutlery under a fixed rail, left-to-right order determined
  by size within each class, by size across classes, or (unseen) trained
  on forks/knives with the size rule and tested on spoons; gaps drawn
  from a two-mode mixture; test scenes use sizes outside the training
  range.
* ``tv`` — a tv centred above a fixed bench with Gaussian jitter and two
  speakers placed symmetrically left/right (equidistant and vertically
  aligned up to Gaussian noise); test scenes add immovable clutter boxes
  at requested counts, rejected against overlap with each other and with
  the bench (clutter may overlap the ideal speaker spots — avoiding it
  is the constrained-sampling task).

Class features are synthetic 16-dim vectors: a one-hot block plus shared
"semantic group" components (dishware, cutlery, electronics, and a
slender-profile component shared by fork and spoon) plus a small fixed
per-class perturbation. Related classes overlapping in feature space is
what lets a model trained on forks and knives generalise to spoons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Iterable

import numpy as np

from .scene import Pose, Scene, SceneObject, wrap_angle

__all__ = [
    "FEATURE_DIM",
    "CLASS_ORDER",
    "SCENARIOS",
    "GMM",
    "ScenarioSpec",
    "GroundTruth",
    "class_features",
    "scenario_spec",
    "generate",
    "gen_dining",
    "gen_ordering",
    "gen_tv",
    "conditional_modes",
]

FEATURE_DIM = 16
CLASS_ORDER = (
    "plate", "bowl", "fork", "knife", "spoon",
    "tv", "speaker", "bench", "rail", "clutter",
)
_GROUPS = {
    10: (("plate", "bowl"), 0.8),            # dishware
    11: (("fork", "knife", "spoon"), 0.8),   # cutlery
    12: (("tv", "speaker"), 0.8),            # electronics
    13: (("fork", "spoon"), 0.6),            # slender tined/scooped profile
}
SCENARIOS = (
    "dining",
    "ordering-class-size",
    "ordering-all-size",
    "ordering-unseen",
    "tv",
)


def _build_feature_table() -> dict[str, tuple[float, ...]]:
    rng = np.random.default_rng(7)  # fixed: the table is part of the data spec
    table = {}
    for i, name in enumerate(CLASS_ORDER):
        vec = np.zeros(FEATURE_DIM)
        vec[i] = 1.0
        for dim, (members, value) in _GROUPS.items():
            if name in members:
                vec[dim] = value
        vec[14:16] = rng.normal(0.0, 0.05, size=2)
        table[name] = tuple(float(v) for v in vec)
    return table


_FEATURE_TABLE = _build_feature_table()


def class_features(class_name: str) -> tuple[float, ...]:
    """Fixed 16-dim synthetic feature vector for a known class."""
    try:
        return _FEATURE_TABLE[class_name]
    except KeyError:
        raise KeyError(f"unknown class {class_name!r}") from None


@dataclass(frozen=True)
class GMM:
    """1-D Gaussian mixture (means/sigmas/weights, weights sum to 1)."""

    means: tuple[float, ...]
    sigmas: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.means) == len(self.sigmas) == len(self.weights)):
            raise ValueError("means, sigmas, weights must have equal length")
        if not math.isclose(sum(self.weights), 1.0, rel_tol=1e-9):
            raise ValueError("weights must sum to 1")
        if any(s <= 0 for s in self.sigmas):
            raise ValueError("sigmas must be positive")

    def pick_mode(self, rng) -> int:
        return int(rng.choice(len(self.weights), p=self.weights))

    def sample_mode(self, rng, k: int) -> float:
        return float(rng.normal(self.means[k], self.sigmas[k]))


@dataclass(frozen=True)
class ScenarioSpec:
    """The data-generating constants of one scenario, JSON-mirrorable."""

    name: str
    workspace_half_extent: float
    relations: dict[str, GMM]
    sizes: dict[str, tuple[float, float]]
    size_ranges: dict[str, tuple[float, float]]
    constants: dict[str, float]
    clutter_counts: tuple[int, ...] = ()
    feature_table: dict[str, tuple[float, ...]] = field(
        default_factory=lambda: dict(_FEATURE_TABLE)
    )

    def to_json(self) -> dict:
        d = asdict(self)
        d["relations"] = {k: asdict(v) for k, v in self.relations.items()}
        return d


def scenario_spec(name: str, clutter_counts: Iterable[int] = (2, 5, 8)) -> ScenarioSpec:
    """Frozen constants for a named scenario."""
    if name == "dining":
        return ScenarioSpec(
            name=name,
            workspace_half_extent=50.0,
            relations={
                # distance from plate centre to cutlery centre:
                # plate radius + 4 or + 7 cm
                "cutlery_distance": GMM((16.0, 19.0), (0.8, 0.8), (0.5, 0.5)),
            },
            sizes={
                "plate": (24.0, 24.0),
                "bowl": (14.0, 14.0),
                "fork": (18.0, 2.5),
                "knife": (20.0, 2.5),
            },
            size_ranges={},
            constants={
                "plate_orbit_radius": 30.0,
                "plate_radius": 12.0,
                "cutlery_angle_noise": math.radians(2.0),
                "table_centre_offset": 8.0,
            },
        )
    if name in ("ordering-class-size", "ordering-all-size", "ordering-unseen"):
        return ScenarioSpec(
            name=name,
            workspace_half_extent=50.0,
            relations={
                "gap": GMM((7.0, 11.0), (0.5, 0.5), (0.5, 0.5)),
            },
            sizes={"rail": (80.0, 4.0)},
            size_ranges={"train_length": (10.0, 16.0), "test_length": (17.0, 22.0)},
            constants={
                "rail_y": 12.0,
                "row_y": 0.0,
                "row_y_noise": 0.3,
                "item_width": 2.5,
                "item_angle_noise": math.radians(2.0),
                "min_per_class": 2,
                "max_per_class": 3,
                "max_total_items": 5,
                "unseen_min_items": 4,
                "unseen_max_items": 5,
                "min_size_gap": 1.0,
            },
        )
    if name == "tv":
        return ScenarioSpec(
            name=name,
            workspace_half_extent=50.0,
            relations={
                "speaker_distance": GMM((28.0,), (2.0,), (1.0,)),
            },
            sizes={
                "tv": (40.0, 10.0),
                "speaker": (10.0, 10.0),
                "bench": (70.0, 10.0),
            },
            size_ranges={"clutter": (6.0, 12.0)},
            constants={
                "bench_y": -45.0,
                "tv_rise": 12.0,
                "tv_x_sigma": 2.0,
                "tv_y_sigma": 1.0,
                "tv_angle_noise": math.radians(2.0),
                "speaker_sym_sigma": 0.8,
                "speaker_align_sigma": 0.8,
                "speaker_angle_noise": math.radians(2.0),
                "clutter_margin": 10.0,
            },
            clutter_counts=tuple(int(c) for c in clutter_counts),
        )
    raise ValueError(f"unknown scenario {name!r}; expected one of {SCENARIOS}")


@dataclass
class GroundTruth:
    """Exact conditional modes per (scene, object) plus, for ordering
    scenarios, the correct left-to-right id permutation."""

    scenario: str
    modes: dict[str, dict[str, tuple[Pose, ...]]]
    order: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario,
            "modes": {
                sid: {
                    oid: [[p.x, p.y, p.theta] for p in poses]
                    for oid, poses in per.items()
                }
                for sid, per in self.modes.items()
            },
            "order": {sid: list(ids) for sid, ids in self.order.items()},
        }

    @staticmethod
    def from_json(data: dict) -> "GroundTruth":
        return GroundTruth(
            scenario=data["scenario"],
            modes={
                sid: {
                    oid: tuple(Pose(*p) for p in poses)
                    for oid, poses in per.items()
                }
                for sid, per in data["modes"].items()
            },
            order={sid: tuple(ids) for sid, ids in data.get("order", {}).items()},
        )


def conditional_modes(gt: GroundTruth, scene: Scene, held_out_id: str):
    """Ground-truth conditional mode poses of one held-out object."""
    try:
        return gt.modes[scene.scene_id][held_out_id]
    except KeyError:
        raise KeyError(
            f"no ground-truth modes for object {held_out_id!r} "
            f"in scene {scene.scene_id!r}"
        ) from None


def _obj(object_id, class_name, pose, scale, movable=True, clutter=False,
         symmetry_order=1):
    return SceneObject(
        object_id=object_id,
        class_name=class_name,
        pose=pose,
        scale=scale,
        raw_features=class_features(class_name),
        movable=movable,
        clutter=clutter,
        symmetry_order=symmetry_order,
    )


# --------------------------------------------------------------------------
# dining


def gen_dining(train_n: int = 48, test_n: int = 16, seed: int = 0):
    """Two place settings opposite each other; returns (scenes, gt)."""
    spec = scenario_spec("dining")
    rng = np.random.default_rng(seed)
    scenes, gt = [], GroundTruth(scenario="dining", modes={})
    for i in range(train_n + test_n):
        split = "train" if i < train_n else "test"
        sid = f"dining-{split}-{i if split == 'train' else i - train_n:03d}"
        scene, modes = _dining_scene(sid, split, spec, rng)
        scenes.append(scene)
        gt.modes[sid] = modes
    return scenes, gt


def _dining_scene(sid, split, spec, rng):
    orbit = spec.constants["plate_orbit_radius"]
    dist = spec.relations["cutlery_distance"]
    ang_noise = spec.constants["cutlery_angle_noise"]
    off = spec.constants["table_centre_offset"]

    alpha = rng.uniform(-math.pi, math.pi)
    # Table registration varies between scenes; every setting shifts with it.
    cx, cy = rng.uniform(-off, off, size=2)
    fork_side = 1.0 if rng.random() < 0.5 else -1.0  # flips per arrangement
    mode = dist.pick_mode(rng)  # distances approximately equal across the scene

    objects, modes = [], {}
    for p in range(2):
        a = alpha + p * math.pi  # diametrically opposite
        ux, uy = math.cos(a), math.sin(a)  # radial (outward)
        tx, ty = -uy, ux  # tangential (diner's left)
        px, py = cx + orbit * ux, cy + orbit * uy
        heading = wrap_angle(a)  # crockery faces its diner, like the cutlery

        objects.append(_obj(
            f"plate{p}", "plate", Pose(px, py, heading),
            spec.sizes["plate"], symmetry_order=0,
        ))
        modes[f"plate{p}"] = (Pose(px, py, heading),)

        objects.append(_obj(
            f"bowl{p}", "bowl", Pose(px, py, heading),
            spec.sizes["bowl"], symmetry_order=0,
        ))
        modes[f"bowl{p}"] = (Pose(px, py, heading),)

        for name, side in (("fork", fork_side), ("knife", -fork_side)):
            d = dist.sample_mode(rng, mode)
            pose = Pose(
                px + side * d * tx,
                py + side * d * ty,
                heading + rng.normal(0.0, ang_noise),
            )
            objects.append(_obj(f"{name}{p}", name, pose, spec.sizes[name]))
            modes[f"{name}{p}"] = tuple(
                Pose(px + side * m * tx, py + side * m * ty, wrap_angle(heading))
                for m in dist.means
            )

    return Scene(scene_id=sid, split=split, objects=objects), modes


# --------------------------------------------------------------------------
# ordering


def gen_ordering(variant: str, train_n: int = 16, test_n: int = 16, seed: int = 0):
    """A sized row of cutlery under a fixed rail; returns (scenes, gt)."""
    name = variant if variant.startswith("ordering-") else f"ordering-{variant}"
    if name not in SCENARIOS:
        raise ValueError(f"unknown ordering variant {variant!r}")
    spec = scenario_spec(name)
    rng = np.random.default_rng(seed)
    scenes = []
    gt = GroundTruth(scenario=name, modes={}, order={})
    for i in range(train_n + test_n):
        split = "train" if i < train_n else "test"
        sid = f"{name}-{split}-{i if split == 'train' else i - train_n:03d}"
        scene, modes, order = _ordering_scene(sid, split, name, spec, rng)
        scenes.append(scene)
        gt.modes[sid] = modes
        gt.order[sid] = order
    return scenes, gt


def _spaced_lengths(rng, lo, hi, n, gap):
    """n lengths uniform over [lo, hi] conditioned on pairwise gaps >= gap."""
    slack = (hi - lo) - (n - 1) * gap
    u = np.sort(rng.uniform(0.0, slack, n))
    lengths = [float(lo + u[i] + gap * i) for i in range(n)]
    return [lengths[i] for i in rng.permutation(n)]


def _ordering_items(variant, split, spec, rng):
    """(class_name, length) items for one scene, unsorted.

    Lengths are drawn jointly with a minimum pairwise separation so the
    target permutation is well defined: with near-tie sizes the correct
    order would be undecidable for any scorer.
    """
    lo, hi = spec.size_ranges["train_length" if split == "train" else "test_length"]
    if variant == "ordering-unseen" and split == "test":
        count = int(rng.integers(spec.constants["unseen_min_items"],
                                 spec.constants["unseen_max_items"] + 1))
        classes = ["spoon"] * count
    else:
        lo_pc = spec.constants["min_per_class"]
        hi_pc = spec.constants["max_per_class"]
        cap = spec.constants["max_total_items"]
        while True:
            per = [int(rng.integers(lo_pc, hi_pc + 1)) for _ in ("fork", "knife")]
            if sum(per) <= cap:
                break
        classes = ["fork"] * per[0] + ["knife"] * per[1]
    lengths = _spaced_lengths(rng, lo, hi, len(classes),
                              spec.constants["min_size_gap"])
    return list(zip(classes, lengths))


def _ordering_key(variant):
    class_rank = {"fork": 0, "knife": 1, "spoon": 2}
    if variant == "ordering-class-size":
        return lambda item: (class_rank[item[0]], item[1])
    # all-size and unseen order purely by size, across classes
    return lambda item: item[1]


def _ordering_scene(sid, split, variant, spec, rng):
    c = spec.constants
    gap = spec.relations["gap"]
    items = _ordering_items(variant, split, spec, rng)
    ordered = sorted(items, key=_ordering_key(variant))

    gaps = [gap.sample_mode(rng, gap.pick_mode(rng)) for _ in range(len(ordered) - 1)]
    xs = [0.0]
    for g in gaps:
        xs.append(xs[-1] + g)
    centre = (xs[0] + xs[-1]) / 2.0
    xs = [x - centre for x in xs]

    objects = [_obj(
        "rail", "rail", Pose(0.0, c["rail_y"], 0.0), spec.sizes["rail"],
        movable=False, symmetry_order=2,
    )]
    modes = {"rail": (Pose(0.0, c["rail_y"], 0.0),)}
    counters: dict[str, int] = {}
    order_ids = []
    for (cls, length), x in zip(ordered, xs):
        k = counters.get(cls, 0)
        counters[cls] = k + 1
        oid = f"{cls}{k}"
        pose = Pose(
            x,
            c["row_y"] + rng.normal(0.0, c["row_y_noise"]),
            math.pi / 2 + rng.normal(0.0, c["item_angle_noise"]),
        )
        objects.append(_obj(oid, cls, pose, (length, c["item_width"])))
        modes[oid] = (Pose(pose.x, pose.y, pose.theta),)
        order_ids.append(oid)

    scene = Scene(scene_id=sid, split=split, objects=objects)
    return scene, modes, tuple(order_ids)


# --------------------------------------------------------------------------
# tv


def gen_tv(
    train_n: int = 36,
    seed: int = 0,
    clutter_counts: Iterable[int] = (2, 5, 8),
    test_per_level: int = 1,
):
    """TV-and-speakers above a fixed bench; test scenes add immovable
    clutter at each requested count. Returns (scenes, gt)."""
    spec = scenario_spec("tv", clutter_counts)
    rng = np.random.default_rng(seed)
    scenes = []
    gt = GroundTruth(scenario="tv", modes={})
    for i in range(train_n):
        sid = f"tv-train-{i:03d}"
        scene, modes = _tv_scene(sid, "train", spec, rng, clutter_n=0)
        scenes.append(scene)
        gt.modes[sid] = modes
    for level in spec.clutter_counts:
        for j in range(test_per_level):
            sid = f"tv-test-c{level}-{j:02d}"
            scene, modes = _tv_scene(sid, "test", spec, rng, clutter_n=level)
            scenes.append(scene)
            gt.modes[sid] = modes
    return scenes, gt


def _tv_scene(sid, split, spec, rng, clutter_n):
    c = spec.constants
    bench_pose = Pose(0.0, c["bench_y"], 0.0)

    tv_pose = Pose(
        rng.normal(0.0, c["tv_x_sigma"]),
        c["bench_y"] + c["tv_rise"] + rng.normal(0.0, c["tv_y_sigma"]),
        rng.normal(0.0, c["tv_angle_noise"]),
    )
    d = spec.relations["speaker_distance"]
    base = d.sample_mode(rng, d.pick_mode(rng))  # shared: equidistant up to noise
    speaker_poses = {}
    for name, side in (("speaker_l", -1.0), ("speaker_r", 1.0)):
        speaker_poses[name] = Pose(
            tv_pose.x + side * (base + rng.normal(0.0, c["speaker_sym_sigma"])),
            tv_pose.y + rng.normal(0.0, c["speaker_align_sigma"]),
            rng.normal(0.0, c["speaker_angle_noise"]),
        )

    objects = [
        _obj("bench", "bench", bench_pose, spec.sizes["bench"],
             movable=False, symmetry_order=2),
        _obj("tv", "tv", tv_pose, spec.sizes["tv"]),
        _obj("speaker_l", "speaker", speaker_poses["speaker_l"], spec.sizes["speaker"]),
        _obj("speaker_r", "speaker", speaker_poses["speaker_r"], spec.sizes["speaker"]),
    ]
    modes = {
        "bench": (bench_pose,),
        "tv": (Pose(0.0, c["bench_y"] + c["tv_rise"], 0.0),),
        "speaker_l": (Pose(tv_pose.x - d.means[0], tv_pose.y, 0.0),),
        "speaker_r": (Pose(tv_pose.x + d.means[0], tv_pose.y, 0.0),),
    }

    objects += _clutter_boxes(spec, rng, clutter_n, objects)
    return Scene(scene_id=sid, split=split, objects=objects), modes


def _clutter_boxes(spec, rng, count, placed):
    """Immovable clutter, uniform poses, rejected against overlap with
    other clutter and with the bench (never against the movable
    arrangement — avoiding clutter is the sampler's job)."""
    from .constraints import footprint, hinge_pair  # local: avoid import cycle

    c = spec.constants
    lo, hi = spec.size_ranges["clutter"]
    limit = spec.workspace_half_extent - c["clutter_margin"]
    bench = next(o for o in placed if o.object_id == "bench")
    blockers = [footprint(bench.pose, bench.scale)]
    out = []
    while len(out) < count:
        pose = Pose(
            rng.uniform(-limit, limit),
            rng.uniform(-limit, limit),
            rng.uniform(-math.pi, math.pi),
        )
        scale = (float(rng.uniform(lo, hi)), float(rng.uniform(lo, hi)))
        fp = footprint(pose, scale)
        if any(hinge_pair(fp, b)[0] > 0.0 for b in blockers):
            continue
        blockers.append(fp)
        out.append(_obj(
            f"clutter{len(out)}", "clutter", pose, scale,
            movable=False, clutter=True, symmetry_order=2,
        ))
    return out


# --------------------------------------------------------------------------
# dispatcher


def generate(scenario: str, seed: int = 0, **kwargs):
    """Build a named scenario's dataset: returns (scenes, ground_truth)."""
    if scenario == "dining":
        return gen_dining(seed=seed, **kwargs)
    if scenario.startswith("ordering-"):
        return gen_ordering(scenario, seed=seed, **kwargs)
    if scenario == "tv":
        return gen_tv(seed=seed, **kwargs)
    raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
