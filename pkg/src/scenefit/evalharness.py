"""Experiment drivers and metrics for the three scenario families.

* Missing-object recovery: hold out one object per test scene, sample it
  back from several restarts keeping the lowest-energy pose, and score
  against the generator's exact conditional modes. Baselines: a
  nearest-neighbour retrieval over training scenes and uniform-random
  placement.
* Ordering: jointly arrange every movable object from random
  initialisation; report the fraction of scenes whose left-to-right
  order matches the ground-truth permutation plus the mean position
  error.
* Composition: with an equal sample budget per method, compare
  gradient-composed constrained sampling (collision cost added to the
  energy gradient) against rejection filtering of unconstrained samples.

All drivers are deterministic given their seed: per-task sampler seeds
are derived by hashing (seed, task index) through a SeedSequence.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .constraints import (
    COLLISION_MARGIN,
    COLLISION_WEIGHT,
    scene_collision_cost,
)
from .sampler import FixedMask, LangevinConfig, langevin_sample
from .scene import Pose, Scene, SceneGraph, build_graph
from .synthgen import GroundTruth, conditional_modes

__all__ = [
    "EvalError",
    "pose_distance",
    "angle_error",
    "nearest_neighbor_predict",
    "MissingRecord",
    "MissingObjectResult",
    "eval_missing",
    "nn_missing",
    "random_missing",
    "OrderingRecord",
    "OrderingResult",
    "eval_ordering",
    "CompositionCell",
    "CompositionResult",
    "eval_composition",
    "advantage_ratios",
    "write_csv",
    "write_json",
]


class EvalError(Exception):
    """An evaluation could not be carried out (e.g. no retrieval candidate)."""


def pose_distance(a: Pose, b: Pose, half_extent: float = 50.0) -> float:
    """Euclidean (x, y) distance plus ``half_extent`` times the chord
    distance between the orientations' unit vectors. A metric: both terms
    are norms of differences."""
    chord = math.hypot(a.cos - b.cos, a.sin - b.sin)
    return math.hypot(a.x - b.x, a.y - b.y) + half_extent * chord


def angle_error(theta_pred: float, theta_target: float, symmetry_order: int) -> float:
    """Smallest rotation (radians) mapping prediction onto the target up
    to the object's rotational symmetry; 0 for full symmetry (order 0)."""
    if symmetry_order == 0:
        return 0.0
    period = 2.0 * math.pi / symmetry_order
    d = (theta_pred - theta_target) % period
    return min(d, period - d)


def _task_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence((seed, index)).generate_state(1, np.uint64)[0])


def _test_split(scenes: Sequence[Scene]) -> list[Scene]:
    test = [s for s in scenes if s.split == "test"]
    if not test:
        raise EvalError("no test scenes in dataset")
    return test


# ---------------------------------------------------------------------------
# nearest-neighbour baseline


def _match_cost(test_objs, train_objs, half_extent):
    """Min-cost same-class assignment distance; None if counts are
    incompatible (some test object would have no partner)."""
    total = 0.0
    by_class_train: dict[str, list] = {}
    for o in train_objs:
        by_class_train.setdefault(o.class_name, []).append(o)
    by_class_test: dict[str, list] = {}
    for o in test_objs:
        by_class_test.setdefault(o.class_name, []).append(o)
    matched_train_ids = set()
    for cls, tests in by_class_test.items():
        trains = by_class_train.get(cls, [])
        if len(trains) < len(tests):
            return None, None
        cost = np.array([
            [pose_distance(a.pose, b.pose, half_extent) for b in trains]
            for a in tests
        ])
        rows, cols = linear_sum_assignment(cost)
        total += float(cost[rows, cols].sum())
        matched_train_ids.update(trains[j].object_id for j in cols)
    return total, matched_train_ids


def nearest_neighbor_predict(
    train_scenes: Sequence[Scene],
    test_scene: Scene,
    missing_id: str,
    half_extent: float = 50.0,
) -> Pose:
    """Retrieve the training scene whose pre-placed objects sit closest
    (summed min-cost same-class assignment distance) and return its
    leftover instance of the missing object's class."""
    missing = test_scene.object_by_id(missing_id)
    placed = [o for o in test_scene.objects if o.object_id != missing_id]
    best = None
    for scene in train_scenes:
        total, matched = _match_cost(placed, scene.objects, half_extent)
        if total is None:
            continue
        leftovers = sorted(
            o.object_id for o in scene.objects
            if o.class_name == missing.class_name
            and o.object_id not in matched
        )
        if not leftovers:
            continue
        if best is None or total < best[0]:
            best = (total, scene.object_by_id(leftovers[0]).pose)
    if best is None:
        raise EvalError(
            f"no training scene offers a candidate for class "
            f"{missing.class_name!r}"
        )
    return best[1]


# ---------------------------------------------------------------------------
# missing-object experiment


@dataclass(frozen=True)
class MissingRecord:
    scene_id: str
    object_id: str
    class_name: str
    symmetry_order: int
    predicted: Pose
    translation_error: float
    rotation_error_deg: float | None  # None for fully symmetric classes


@dataclass
class MissingObjectResult:
    """Per-(scene, object) records plus per-class summaries."""

    method: str
    records: list[MissingRecord]

    @property
    def mean_translation_error(self) -> float:
        return float(np.mean([r.translation_error for r in self.records]))

    def per_class(self) -> dict[str, dict]:
        out: dict[str, dict] = {}
        by_class: dict[str, list[MissingRecord]] = {}
        for r in self.records:
            by_class.setdefault(r.class_name, []).append(r)
        for cls, rs in sorted(by_class.items()):
            t = np.array([r.translation_error for r in rs])
            rot = [r.rotation_error_deg for r in rs
                   if r.rotation_error_deg is not None]
            entry = {
                "count": len(rs),
                "t_mean": float(t.mean()),
                "t_sd": float(t.std(ddof=1)) if len(t) > 1 else 0.0,
            }
            if rot:
                radeg = np.array(rot)
                entry["r_mean"] = float(radeg.mean())
                entry["r_sd"] = float(radeg.std(ddof=1)) if len(radeg) > 1 else 0.0
            out[cls] = entry
        return out

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "mean_translation_error": self.mean_translation_error,
            "per_class": self.per_class(),
        }

    def csv_rows(self) -> list[list]:
        rows = [[
            "scene_id", "object_id", "class_name",
            "translation_error_cm", "rotation_error_deg",
        ]]
        for r in self.records:
            rows.append([
                r.scene_id, r.object_id, r.class_name,
                f"{r.translation_error:.10g}",
                "" if r.rotation_error_deg is None
                else f"{r.rotation_error_deg:.10g}",
            ])
        return rows


def _score(gt: GroundTruth, scene: Scene, object_id: str, pred: Pose):
    modes = conditional_modes(gt, scene, object_id)
    dists = [math.hypot(pred.x - m.x, pred.y - m.y) for m in modes]
    k = int(np.argmin(dists))
    order = scene.object_by_id(object_id).symmetry_order
    rot = None
    if order > 0:
        rot = math.degrees(angle_error(pred.theta, modes[k].theta, order))
    return dists[k], rot


def _held_out_ids(scene: Scene, object_ids) -> list[str]:
    if object_ids is not None:
        return [oid for oid in object_ids
                if scene.object_by_id(oid).movable]
    return [o.object_id for o in scene.objects if o.movable]


def eval_missing(
    model,
    scenes: Sequence[Scene],
    gt: GroundTruth,
    restarts: int = 16,
    steps: int = 200,
    seed: int = 0,
    object_ids: Sequence[str] | None = None,
) -> MissingObjectResult:
    """Hold out each movable object of each test scene in turn, freeze
    the rest, and keep the lowest-energy pose over ``restarts`` chains."""
    records = []
    task = 0
    for scene in _test_split(scenes):
        graph = build_graph(scene)
        for oid in _held_out_ids(scene, object_ids):
            others = [o.object_id for o in graph.objects
                      if o.movable and o.object_id != oid]
            mask = FixedMask.from_graph(graph, extra_frozen_ids=others)
            config = LangevinConfig.annealed(
                steps=steps, seed=_task_seed(seed, task))
            result = langevin_sample(
                model, graph, config, mask=mask, chains=restarts)
            _, poses = result.best()
            row = next(i for i, o in enumerate(graph.objects)
                       if o.object_id == oid)
            pred = Pose(*poses[row])
            t_err, r_err = _score(gt, scene, oid, pred)
            records.append(MissingRecord(
                scene.scene_id, oid, scene.object_by_id(oid).class_name,
                scene.object_by_id(oid).symmetry_order, pred, t_err, r_err,
            ))
            task += 1
    return MissingObjectResult("model", records)


def nn_missing(
    train_scenes: Sequence[Scene],
    scenes: Sequence[Scene],
    gt: GroundTruth,
    half_extent: float = 50.0,
    object_ids: Sequence[str] | None = None,
) -> MissingObjectResult:
    """Missing-object baseline: nearest-neighbour retrieval."""
    records = []
    for scene in _test_split(scenes):
        for oid in _held_out_ids(scene, object_ids):
            pred = nearest_neighbor_predict(train_scenes, scene, oid, half_extent)
            t_err, r_err = _score(gt, scene, oid, pred)
            records.append(MissingRecord(
                scene.scene_id, oid, scene.object_by_id(oid).class_name,
                scene.object_by_id(oid).symmetry_order, pred, t_err, r_err,
            ))
    return MissingObjectResult("nearest-neighbor", records)


def random_missing(
    scenes: Sequence[Scene],
    gt: GroundTruth,
    draws: int = 128,
    seed: int = 0,
    half_extent: float = 50.0,
    object_ids: Sequence[str] | None = None,
) -> MissingObjectResult:
    """Missing-object baseline: expected error of uniform placement,
    Monte-Carlo averaged over ``draws`` poses per object. The stored
    ``predicted`` pose is the first draw; the errors are the means."""
    rng = np.random.default_rng(seed)
    records = []
    for scene in _test_split(scenes):
        for oid in _held_out_ids(scene, object_ids):
            xs = rng.uniform(-half_extent, half_extent, size=(draws, 2))
            thetas = rng.uniform(-math.pi, math.pi, size=draws)
            t_errs, r_errs = [], []
            for (x, y), theta in zip(xs, thetas):
                t_err, r_err = _score(gt, scene, oid, Pose(x, y, theta))
                t_errs.append(t_err)
                if r_err is not None:
                    r_errs.append(r_err)
            records.append(MissingRecord(
                scene.scene_id, oid, scene.object_by_id(oid).class_name,
                scene.object_by_id(oid).symmetry_order,
                Pose(xs[0, 0], xs[0, 1], thetas[0]),
                float(np.mean(t_errs)),
                float(np.mean(r_errs)) if r_errs else None,
            ))
    return MissingObjectResult("random", records)


# ---------------------------------------------------------------------------
# ordering experiment


@dataclass(frozen=True)
class OrderingRecord:
    scene_id: str
    correct: bool
    position_error: float
    predicted_order: tuple[str, ...]


@dataclass
class OrderingResult:
    records: list[OrderingRecord]

    @property
    def fraction_correct(self) -> float:
        return float(np.mean([r.correct for r in self.records]))

    @property
    def mean_position_error(self) -> float:
        return float(np.mean([r.position_error for r in self.records]))

    def to_json(self) -> dict:
        return {
            "fraction_correct": self.fraction_correct,
            "mean_position_error": self.mean_position_error,
            "scenes": len(self.records),
        }

    def csv_rows(self) -> list[list]:
        rows = [["scene_id", "correct", "position_error_cm", "predicted_order"]]
        for r in self.records:
            rows.append([
                r.scene_id, int(r.correct),
                f"{r.position_error:.10g}", "|".join(r.predicted_order),
            ])
        return rows


def eval_ordering(
    model,
    scenes: Sequence[Scene],
    gt: GroundTruth,
    restarts: int = 64,
    steps: int = 1500,
    seed: int = 0,
    collision_weight: float = COLLISION_WEIGHT,
) -> OrderingResult:
    """Jointly sample all movable poses from random initialisation; a
    scene counts as correct when the sampled left-to-right order equals
    the ground-truth permutation.

    Restart selection minimises energy plus a collision penalty
    (``collision_weight`` times the penetration cost at the final poses;
    0 disables it). The penalty rejects finals where several items have
    collapsed onto one another — physically impossible configurations the
    learned energy alone can prefer, since overlapping same-class items
    double-count their mutual attraction."""
    records = []
    for task, scene in enumerate(_test_split(scenes)):
        graph = build_graph(scene)
        config = LangevinConfig.annealed(steps=steps, seed=_task_seed(seed, task))
        result = langevin_sample(model, graph, config, chains=restarts)
        objective = result.energies
        if collision_weight:
            term = scene_collision_cost(scene, margin=0.0, weight=collision_weight)
            cost_values, _ = term.fn(result.poses, graph)
            objective = objective + cost_values
        poses = result.poses[int(np.argmin(objective))]
        movable = [(i, o) for i, o in enumerate(graph.objects) if o.movable]
        predicted = tuple(
            o.object_id for i, o in sorted(movable, key=lambda io: poses[io[0], 0])
        )
        errs = []
        for i, o in movable:
            mode = conditional_modes(gt, scene, o.object_id)[0]
            errs.append(math.hypot(poses[i, 0] - mode.x, poses[i, 1] - mode.y))
        records.append(OrderingRecord(
            scene.scene_id,
            predicted == tuple(gt.order[scene.scene_id]),
            float(np.mean(errs)),
            predicted,
        ))
    return OrderingResult(records)


# ---------------------------------------------------------------------------
# composition experiment


@dataclass(frozen=True)
class CompositionCell:
    scene_id: str
    clutter_count: int
    method: str
    correct: int


@dataclass
class CompositionResult:
    """Correct-sample counts per scene and method under an equal budget."""

    budget: int
    alignment_threshold: float
    symmetry_threshold: float
    cells: list[CompositionCell] = field(default_factory=list)

    def per_level(self) -> dict[int, dict[str, int]]:
        out: dict[int, dict[str, int]] = {}
        for c in self.cells:
            out.setdefault(c.clutter_count, {}).setdefault(c.method, 0)
            out[c.clutter_count][c.method] += c.correct
        return {k: out[k] for k in sorted(out)}

    def to_json(self) -> dict:
        return {
            "budget": self.budget,
            "alignment_threshold": self.alignment_threshold,
            "symmetry_threshold": self.symmetry_threshold,
            "per_level": {str(k): v for k, v in self.per_level().items()},
        }

    def csv_rows(self) -> list[list]:
        rows = [["scene_id", "clutter_count", "method", "correct", "budget"]]
        for c in self.cells:
            rows.append([
                c.scene_id, c.clutter_count, c.method, c.correct, self.budget,
            ])
        return rows


def _correct_mask(
    scene: Scene,
    graph: SceneGraph,
    poses: np.ndarray,
    alignment_threshold: float,
    symmetry_threshold: float,
) -> np.ndarray:
    """Per-sample correctness: tv/speaker centres vertically aligned
    within the threshold, speakers equidistant from the tv within the
    threshold, and no collisions (clutter included, margin 0)."""
    aligned_rows = [i for i, o in enumerate(graph.objects)
                    if o.class_name in ("tv", "speaker")]
    speaker_rows = [i for i, o in enumerate(graph.objects)
                    if o.class_name == "speaker"]
    tv_rows = [i for i, o in enumerate(graph.objects) if o.class_name == "tv"]
    ok = np.ones(poses.shape[0], dtype=bool)
    if aligned_rows:
        ys = poses[:, aligned_rows, 1]
        ok &= (ys.max(axis=1) - ys.min(axis=1)) <= alignment_threshold
    if len(speaker_rows) == 2 and len(tv_rows) == 1:
        tv_x = poses[:, tv_rows[0], 0]
        dl = np.abs(poses[:, speaker_rows[0], 0] - tv_x)
        dr = np.abs(poses[:, speaker_rows[1], 0] - tv_x)
        ok &= np.abs(dl - dr) <= symmetry_threshold
    cost, _ = scene_collision_cost(scene, margin=0.0).fn(poses, graph)
    ok &= cost == 0.0
    return ok


def eval_composition(
    model,
    scenes: Sequence[Scene],
    budget: int = 500,
    seed: int = 0,
    alignment_threshold: float = 2.0,
    symmetry_threshold: float = 2.0,
    steps: int = 200,
    collision_margin: float = COLLISION_MARGIN,
    collision_weight: float = COLLISION_WEIGHT,
    methods: Sequence[str] = ("implicit", "rejection"),
) -> CompositionResult:
    """Charge each method exactly ``budget`` sampling chains per scene.

    ``implicit`` composes the collision cost into the Langevin gradient;
    ``rejection`` draws unconstrained samples and relies on the
    correctness filter to discard colliding ones.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    result = CompositionResult(budget, alignment_threshold, symmetry_threshold)
    task = 0
    for scene in scenes:
        graph = build_graph(scene)
        clutter_count = sum(1 for o in scene.objects if o.clutter)
        for method in methods:
            if method == "implicit":
                terms = [scene_collision_cost(
                    scene, margin=collision_margin, weight=collision_weight)]
            elif method == "rejection":
                terms = []
            else:
                raise ValueError(f"unknown method {method!r}")
            config = LangevinConfig.annealed(
                steps=steps, seed=_task_seed(seed, task))
            sampled = langevin_sample(
                model, graph, config, cost_terms=terms, chains=budget)
            ok = _correct_mask(
                scene, graph, sampled.poses,
                alignment_threshold, symmetry_threshold,
            )
            result.cells.append(CompositionCell(
                scene.scene_id, clutter_count, method, int(ok.sum())))
            task += 1
    return result


def advantage_ratios(results: Iterable[CompositionResult]) -> dict[int, float]:
    """implicit/rejection correct-count ratio per clutter level, counts
    pooled over the given results. 0/0 maps to 1 (no advantage), k/0 to
    infinity."""
    pooled: dict[int, dict[str, int]] = {}
    for res in results:
        for level, counts in res.per_level().items():
            slot = pooled.setdefault(level, {"implicit": 0, "rejection": 0})
            for method, count in counts.items():
                slot[method] = slot.get(method, 0) + count
    ratios = {}
    for level in sorted(pooled):
        imp = pooled[level].get("implicit", 0)
        rej = pooled[level].get("rejection", 0)
        if rej == 0:
            ratios[level] = 1.0 if imp == 0 else math.inf
        else:
            ratios[level] = imp / rej
    return ratios


# ---------------------------------------------------------------------------
# result files


def write_csv(rows: list[list], path) -> None:
    """Write rows (header first) as CSV with deterministic bytes."""
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def write_json(data: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
