"""Evaluation-harness tests.

Baselines and metrics are checked against brute-force oracles: exhaustive
permutation enumeration for the assignment-based nearest neighbour,
closed-form expectations for the uniform-random baseline, and a
quadratic test-double energy whose minimum is known exactly for the
sampling-based drivers.
"""

import itertools
import math
from types import SimpleNamespace

import numpy as np
import pytest

from scenefit.evalharness import (
    CompositionCell,
    CompositionResult,
    EvalError,
    advantage_ratios,
    angle_error,
    eval_composition,
    eval_missing,
    eval_ordering,
    nearest_neighbor_predict,
    nn_missing,
    pose_distance,
    random_missing,
    write_csv,
    write_json,
)
from scenefit.scene import Pose, Scene, SceneObject, build_graph
from scenefit.synthgen import GroundTruth

HALF = 50.0
UNIT = np.array([HALF, HALF, math.pi])


class QuadraticModel:
    """Test double: E = sum_i ||(pose_i - mu_i) / (UNIT * s)||^2 / 2."""

    def __init__(self, mu_poses, s=0.35, half=HALF):
        self.workspace_half_extent = half
        self.mu_z = np.asarray(mu_poses, dtype=np.float64) / UNIT
        self.s = s

    def energy(self, graph, poses=None):
        d = poses / UNIT - self.mu_z
        return (d * d).sum(axis=(-2, -1)) / (2.0 * self.s**2)

    def energy_and_pose_grad(self, graph, poses, validate=True):
        d = poses / UNIT - self.mu_z
        val = (d * d).sum(axis=(-2, -1)) / (2.0 * self.s**2)
        return val, d / (self.s**2 * UNIT)


def obj(oid, cls, x, y, theta=0.0, scale=(4.0, 4.0), movable=True,
        clutter=False, symmetry_order=1):
    return SceneObject(
        object_id=oid, class_name=cls, pose=Pose(x, y, theta), scale=scale,
        raw_features=(1.0, 0.0), movable=movable, clutter=clutter,
        symmetry_order=symmetry_order,
    )


def scene_of(sid, objects, split="test"):
    return Scene(scene_id=sid, split=split, objects=objects)


# ---------------------------------------------------------------------------
# metrics


class TestPoseDistance:
    def test_values(self):
        assert pose_distance(Pose(0, 0, 0), Pose(3, 4, 0)) == pytest.approx(5.0)
        # opposite headings: chord distance 2
        assert pose_distance(Pose(0, 0, 0), Pose(0, 0, math.pi)) == pytest.approx(
            100.0)

    def test_metric_properties(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            a, b, c = (
                Pose(*rng.uniform(-50, 50, 2), rng.uniform(-math.pi, math.pi))
                for _ in range(3)
            )
            assert pose_distance(a, a) == 0.0
            assert pose_distance(a, b) == pytest.approx(pose_distance(b, a))
            assert pose_distance(a, b) <= (
                pose_distance(a, c) + pose_distance(c, b) + 1e-9)


class TestAngleError:
    def test_examples(self):
        # 170 degrees off with 2-fold symmetry folds to 10 degrees
        assert math.degrees(
            angle_error(math.radians(170), 0.0, 2)) == pytest.approx(10.0)
        assert angle_error(1.3, 1.3, 1) == 0.0
        assert angle_error(2.0, -1.0, 0) == 0.0  # full symmetry

    def test_range(self):
        rng = np.random.default_rng(4)
        for _ in range(300):
            order = int(rng.integers(1, 9))
            e = angle_error(rng.uniform(-10, 10), rng.uniform(-10, 10), order)
            assert 0.0 <= e <= math.pi / order + 1e-12

    def test_symmetry(self):
        assert angle_error(0.4, 2.9, 3) == pytest.approx(angle_error(2.9, 0.4, 3))


# ---------------------------------------------------------------------------
# nearest neighbour


def pair_scene(sid, cup_pose, plate_pose, split="train"):
    return scene_of(sid, [
        obj("cup0", "cup", *cup_pose),
        obj("plate0", "plate", *plate_pose),
    ], split=split)


class TestNearestNeighbor:
    def test_exact_match_returns_held_out_pose(self):
        train = [
            pair_scene("t0", (30, 30, 1.0), (40, 30, 1.0)),
            pair_scene("t1", (0, 0, 0.0), (10, 0, 0.5)),
        ]
        test = pair_scene("q", (0, 0, 0.0), (-20, -20, 0.0), split="test")
        pred = nearest_neighbor_predict(train, test, "plate0")
        assert (pred.x, pred.y, pred.theta) == (10.0, 0.0, 0.5)

    def test_picks_closer_scene(self):
        train = [
            pair_scene("near", (1, 0, 0.0), (11, 0, 0.0)),
            pair_scene("far", (30, 30, 1.0), (40, 30, 1.0)),
        ]
        test = pair_scene("q", (0, 0, 0.0), (0, 0, 0.0), split="test")
        pred = nearest_neighbor_predict(train, test, "plate0")
        assert (pred.x, pred.y) == (11.0, 0.0)

    def test_leftover_instance_is_the_unmatched_one(self):
        train = [scene_of("t", [
            obj("plate0", "plate", 0.5, 0.0),
            obj("plate1", "plate", 20.0, 0.0),
        ], split="train")]
        test = scene_of("q", [
            obj("plate0", "plate", 0.0, 0.0),
            obj("plate1", "plate", -30.0, 0.0),
        ], split="test")
        pred = nearest_neighbor_predict(train, test, "plate1")
        # the placed plate matches the nearby training plate; the leftover
        # training plate is the prediction
        assert (pred.x, pred.y) == (20.0, 0.0)

    def test_matches_brute_force_assignment(self):
        rng = np.random.default_rng(9)

        def random_scene(sid, split):
            objs = [obj(f"fork{i}", "fork",
                        *rng.uniform(-40, 40, 2),
                        rng.uniform(-math.pi, math.pi))
                    for i in range(3)]
            objs.append(obj("plate0", "plate",
                            *rng.uniform(-40, 40, 2),
                            rng.uniform(-math.pi, math.pi)))
            return scene_of(sid, objs, split=split)

        for trial in range(10):
            train = [random_scene(f"t{j}", "train") for j in range(4)]
            test = random_scene("q", "test")
            placed = [o for o in test.objects if o.object_id != "plate0"]

            best_cost, best_pose = None, None
            for ts in train:
                forks = [o for o in ts.objects if o.class_name == "fork"]
                cost = min(
                    sum(pose_distance(a.pose, perm[i].pose)
                        for i, a in enumerate(placed))
                    for perm in itertools.permutations(forks)
                )
                if best_cost is None or cost < best_cost:
                    best_cost = cost
                    best_pose = ts.object_by_id("plate0").pose
            pred = nearest_neighbor_predict(train, test, "plate0")
            assert pred == best_pose

    def test_no_candidate_errors(self):
        train = [scene_of("t", [obj("cup0", "cup", 0, 0)], split="train")]
        test = pair_scene("q", (0, 0, 0), (1, 1, 0), split="test")
        with pytest.raises(EvalError):
            nearest_neighbor_predict(train, test, "plate0")

    def test_unknown_missing_id(self):
        test = pair_scene("q", (0, 0, 0), (1, 1, 0), split="test")
        with pytest.raises(KeyError):
            nearest_neighbor_predict([], test, "teapot")


# ---------------------------------------------------------------------------
# missing-object driver


@pytest.fixture()
def missing_setup():
    scene = scene_of("m0", [
        obj("anchor", "anchor", -20.0, -20.0, 0.0, movable=False),
        obj("a", "fork", 10.0, 5.0, 0.3),
        obj("b", "plate", -10.0, 15.0, 1.0, symmetry_order=0),
    ])
    gt = GroundTruth(scenario="toy", modes={
        "m0": {
            # a second, far-away mode checks the min-over-modes rule
            "a": (Pose(10.0, 5.0, 0.3), Pose(-45.0, -45.0, 2.0)),
            "b": (Pose(-10.0, 15.0, 0.0),),
        },
    })
    model = QuadraticModel(build_graph(scene).poses())
    return scene, gt, model


class TestEvalMissing:
    def test_recovers_modes(self, missing_setup):
        scene, gt, model = missing_setup
        res = eval_missing(model, [scene], gt, restarts=8, steps=200, seed=5)
        assert [r.object_id for r in res.records] == ["a", "b"]
        for r in res.records:
            assert r.translation_error < 5.0
        rec_a = res.records[0]
        assert rec_a.rotation_error_deg is not None
        assert rec_a.rotation_error_deg < 20.0
        # fully symmetric class reports no rotation error
        assert res.records[1].rotation_error_deg is None
        assert res.mean_translation_error < 5.0

    def test_deterministic(self, missing_setup):
        scene, gt, model = missing_setup
        a = eval_missing(model, [scene], gt, restarts=4, steps=60, seed=7)
        b = eval_missing(model, [scene], gt, restarts=4, steps=60, seed=7)
        assert a.records == b.records
        c = eval_missing(model, [scene], gt, restarts=4, steps=60, seed=8)
        assert a.records != c.records

    def test_object_ids_filter(self, missing_setup):
        scene, gt, model = missing_setup
        res = eval_missing(model, [scene], gt, restarts=2, steps=30,
                           object_ids=["b"])
        assert [r.object_id for r in res.records] == ["b"]

    def test_requires_test_scenes(self, missing_setup):
        scene, gt, model = missing_setup
        train_only = scene_of("m0", scene.objects, split="train")
        with pytest.raises(EvalError):
            eval_missing(model, [train_only], gt)

    def test_per_class_and_csv(self, missing_setup):
        scene, gt, model = missing_setup
        res = eval_missing(model, [scene], gt, restarts=2, steps=30, seed=1)
        per = res.per_class()
        assert set(per) == {"fork", "plate"}
        assert per["fork"]["count"] == 1
        assert "r_mean" in per["fork"]
        assert "r_mean" not in per["plate"]  # symmetric: rotation omitted
        rows = res.csv_rows()
        assert rows[0][0] == "scene_id"
        assert len(rows) == 3
        plate_row = next(r for r in rows[1:] if r[2] == "plate")
        assert plate_row[4] == ""
        blob = res.to_json()
        assert blob["method"] == "model"
        assert blob["mean_translation_error"] == res.mean_translation_error


class TestBaselines:
    def test_nn_missing_shape(self, missing_setup):
        scene, gt, _ = missing_setup
        train = [scene_of("t0", scene.objects, split="train")]
        res = nn_missing(train, [scene], gt)
        assert res.method == "nearest-neighbor"
        # the training copy is identical, so retrieval is exact
        for r in res.records:
            assert r.translation_error == pytest.approx(0.0, abs=1e-12)

    def test_random_missing_expected_error(self):
        # mode at the origin: the mean distance of a uniform draw over the
        # [-50, 50]^2 square is 50 * 0.7652 ~= 38.26 cm
        scene = scene_of("r0", [obj("a", "cup", 0.0, 0.0, 0.0)])
        gt = GroundTruth(scenario="toy",
                         modes={"r0": {"a": (Pose(0.0, 0.0, 0.0),)}})
        res = random_missing([scene], gt, draws=400, seed=11)
        assert res.method == "random"
        assert res.records[0].translation_error == pytest.approx(38.26, abs=3.0)
        # uniform angle against a fixed mode averages 90 degrees
        assert res.records[0].rotation_error_deg == pytest.approx(90.0, abs=12.0)

    def test_random_missing_deterministic(self, missing_setup):
        scene, gt, _ = missing_setup
        a = random_missing([scene], gt, draws=16, seed=2)
        b = random_missing([scene], gt, draws=16, seed=2)
        assert a.records == b.records


# ---------------------------------------------------------------------------
# ordering driver


def ordering_scene():
    return scene_of("o0", [
        obj("rail", "rail", 0.0, 12.0, 0.0, scale=(80.0, 4.0), movable=False),
        obj("a", "fork", -5.0, 0.0, math.pi / 2),
        obj("b", "fork", 5.0, 0.0, math.pi / 2),
    ])


def ordering_gt(scene):
    return GroundTruth(
        scenario="toy",
        modes={"o0": {o.object_id: (o.pose,) for o in scene.objects}},
        order={"o0": ("a", "b")},
    )


class TestEvalOrdering:
    def test_correct_order_and_small_error(self):
        scene = ordering_scene()
        model = QuadraticModel(build_graph(scene).poses())
        res = eval_ordering(model, [scene], ordering_gt(scene),
                            restarts=8, steps=200, seed=3)
        assert res.records[0].correct
        assert res.records[0].predicted_order == ("a", "b")
        assert res.fraction_correct == 1.0
        assert res.mean_position_error < 4.0

    def test_reversed_order_flagged(self):
        scene = ordering_scene()
        mu = build_graph(scene).poses()
        mu[[1, 2]] = mu[[2, 1]]  # pull each item to the other's slot
        res = eval_ordering(QuadraticModel(mu), [scene], ordering_gt(scene),
                            restarts=8, steps=200, seed=3)
        assert not res.records[0].correct
        assert res.records[0].predicted_order == ("b", "a")
        assert res.fraction_correct == 0.0

    def test_hand_computed_position_error(self):
        scene = ordering_scene()
        mu = build_graph(scene).poses()
        mu[1, 0] += 3.0
        mu[1, 1] += 4.0  # displace one target by 5 cm
        res = eval_ordering(QuadraticModel(mu), [scene], ordering_gt(scene),
                            restarts=8, steps=200, seed=3)
        # mean over two objects of (5, 0) cm
        assert res.mean_position_error == pytest.approx(2.5, abs=1.0)
        blob = res.to_json()
        assert blob["scenes"] == 1
        rows = res.csv_rows()
        assert rows[1][3] == "a|b"

    def test_deterministic(self):
        scene = ordering_scene()
        model = QuadraticModel(build_graph(scene).poses())
        a = eval_ordering(model, [scene], ordering_gt(scene),
                          restarts=2, steps=40, seed=5)
        b = eval_ordering(model, [scene], ordering_gt(scene),
                          restarts=2, steps=40, seed=5)
        assert a.records == b.records

    def test_collision_penalty_rejects_stacked_final(self, monkeypatch):
        # Restart finals: a stacked pair (both forks at x=0, overlapping
        # 4x4 boxes) with the LOWEST energy, the true separated row, and
        # a reversed-order row. Raw argmin picks the stack; the penalised
        # objective must pick the valid row instead.
        scene = ordering_scene()
        graph = build_graph(scene)
        truth = graph.poses()
        stack = truth.copy()
        stack[1:, 0] = [0.01, -0.01]  # overlapping, and slightly reversed
        reverse = truth.copy()
        reverse[1:, 0] = [20.0, -20.0]  # separated but wrong order
        finals = np.stack([stack, truth, reverse])
        scripted = np.array([-5.0, -3.0, -2.0])

        class Scored:
            workspace_half_extent = HALF

            def energy(self, g, poses=None):
                return np.array([
                    scripted[int(np.argmin(
                        np.abs(finals - p).sum(axis=(1, 2))))]
                    for p in poses])

        import scenefit.evalharness as eh

        def scripted_sample(model, g, config, chains=1, **kw):
            assert chains == len(finals)
            return SimpleNamespace(
                poses=finals, energies=model.energy(g, finals))

        monkeypatch.setattr(eh, "langevin_sample", scripted_sample)
        gt = ordering_gt(scene)
        raw = eval_ordering(Scored(), [scene], gt, restarts=3,
                            collision_weight=0.0)
        penalised = eval_ordering(Scored(), [scene], gt, restarts=3)
        assert not raw.records[0].correct          # stack wins on energy
        assert penalised.records[0].correct        # but not on objective
        assert penalised.records[0].position_error == 0.0


# ---------------------------------------------------------------------------
# composition driver


def comp_scene(tiny=False, blocked=False):
    s_tv = (0.5, 0.5) if tiny else (40.0, 10.0)
    s_sp = (0.5, 0.5) if tiny else (10.0, 10.0)
    s_bench = (0.5, 0.5) if tiny else (70.0, 10.0)
    objs = [
        obj("bench", "bench", 0.0, -45.0, 0.0, scale=s_bench, movable=False),
        obj("tv", "tv", 0.0, -33.0, 0.0, scale=s_tv),
        obj("sl", "speaker", -28.0, -33.0, 0.0, scale=s_sp),
        obj("sr", "speaker", 28.0, -33.0, 0.0, scale=s_sp),
    ]
    if blocked:
        objs.append(obj("clutter0", "clutter", 28.0, -33.0, 0.0,
                        scale=(12.0, 12.0), movable=False, clutter=True))
    return scene_of("c0", objs)


class TestEvalComposition:
    def test_vacuous_constraints_near_budget(self):
        scene = comp_scene(tiny=True)
        model = QuadraticModel(build_graph(scene).poses())
        res = eval_composition(model, [scene], budget=24, steps=60, seed=1,
                               alignment_threshold=1e9, symmetry_threshold=1e9)
        counts = res.per_level()[0]
        # tiny footprints: collisions are essentially impossible, so both
        # methods keep (nearly) every sample
        assert counts["implicit"] >= 23
        assert counts["rejection"] >= 23
        assert all(c.correct <= res.budget for c in res.cells)

    def test_impossible_threshold_zero(self):
        scene = comp_scene(tiny=True)
        model = QuadraticModel(build_graph(scene).poses())
        res = eval_composition(model, [scene], budget=8, steps=30, seed=1,
                               alignment_threshold=-1.0, symmetry_threshold=-1.0)
        assert res.per_level()[0] == {"implicit": 0, "rejection": 0}

    def test_composed_gradient_beats_rejection_when_blocked(self):
        # clutter sits exactly on one speaker's target: unconstrained
        # chains converge into collision, composed chains get pushed out
        scene = comp_scene(blocked=True)
        model = QuadraticModel(build_graph(scene).poses())
        res = eval_composition(model, [scene], budget=48, steps=150, seed=2,
                               alignment_threshold=1e9, symmetry_threshold=1e9)
        counts = res.per_level()[1]
        assert counts["implicit"] > counts["rejection"]

    def test_deterministic(self):
        scene = comp_scene(tiny=True)
        model = QuadraticModel(build_graph(scene).poses())
        a = eval_composition(model, [scene], budget=6, steps=30, seed=4)
        b = eval_composition(model, [scene], budget=6, steps=30, seed=4)
        assert a.cells == b.cells

    def test_validation(self):
        scene = comp_scene(tiny=True)
        model = QuadraticModel(build_graph(scene).poses())
        with pytest.raises(ValueError):
            eval_composition(model, [scene], budget=0)
        with pytest.raises(ValueError):
            eval_composition(model, [scene], budget=2, methods=("vae",))

    def test_csv_and_json(self):
        scene = comp_scene(tiny=True)
        model = QuadraticModel(build_graph(scene).poses())
        res = eval_composition(model, [scene], budget=4, steps=20, seed=0)
        rows = res.csv_rows()
        assert rows[0] == ["scene_id", "clutter_count", "method", "correct",
                           "budget"]
        assert len(rows) == 3
        blob = res.to_json()
        assert blob["budget"] == 4
        assert "0" in blob["per_level"]


class TestAdvantageRatios:
    def test_pooling_and_conventions(self):
        r1 = CompositionResult(10, 2.0, 2.0, [
            CompositionCell("s", 2, "implicit", 6),
            CompositionCell("s", 2, "rejection", 3),
            CompositionCell("s", 5, "implicit", 4),
            CompositionCell("s", 5, "rejection", 0),
            CompositionCell("s", 8, "implicit", 0),
            CompositionCell("s", 8, "rejection", 0),
        ])
        r2 = CompositionResult(10, 2.0, 2.0, [
            CompositionCell("s", 2, "implicit", 4),
            CompositionCell("s", 2, "rejection", 2),
        ])
        ratios = advantage_ratios([r1, r2])
        assert ratios[2] == pytest.approx(2.0)  # (6+4)/(3+2)
        assert ratios[5] == math.inf
        assert ratios[8] == 1.0


# ---------------------------------------------------------------------------
# writers


class TestWriters:
    def test_csv_bytes_deterministic(self, tmp_path):
        rows = [["a", "b"], [1, 2.5], ["x", ""]]
        p1, p2 = tmp_path / "r1.csv", tmp_path / "r2.csv"
        write_csv(rows, p1)
        write_csv(rows, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert p1.read_text() == "a,b\n1,2.5\nx,\n"

    def test_json_bytes_deterministic(self, tmp_path):
        data = {"b": 1, "a": {"z": [1, 2, 3]}}
        p1, p2 = tmp_path / "r1.json", tmp_path / "r2.json"
        write_json(data, p1)
        write_json(data, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert p1.read_text().endswith("\n")
