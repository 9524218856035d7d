"""Command-line entry point.

Subcommands tie the library together into reproducible pipelines:

* ``gen``      — write a synthetic scenario dataset (scene JSONL), its
                 ground-truth modes, and the scenario constants.
* ``train``    — fit an energy model on the training split, writing a
                 checkpoint and a per-iteration loss CSV.
* ``sample``   — run annealed Langevin chains per scene, keeping each
                 scene's lowest-energy arrangement.
* ``eval``     — run the experiment matching the dataset's scenario
                 (missing-object, ordering, or constrained composition)
                 and write result CSVs plus a JSON summary.
* ``heatmap``  — sweep one object over an (x, y) grid at fixed heading
                 and write the energy field as CSV plus a text PGM image.

Every command is reproducible from its flags and seed alone: artifacts
carry no timestamps, and a ``run.json`` sidecar echoes the effective
configuration into the output directory. Failures print one
machine-parseable line ``error:<category>:<detail>`` and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .energy import (
    CheckpointError,
    EnergyConfig,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from .evalharness import (
    advantage_ratios,
    eval_composition,
    eval_missing,
    eval_ordering,
    nn_missing,
    random_missing,
    write_csv,
    write_json,
)
from .sampler import FixedMask, LangevinConfig, SamplingError, langevin_sample
from .scene import (
    DatasetError,
    Pose,
    build_graph,
    load_dataset,
    save_dataset,
    split_scenes,
)
from .synthgen import GroundTruth, SCENARIOS, generate, scenario_spec
from .training import TrainConfig, TrainingError, train

__all__ = ["main"]


class CLIError(Exception):
    def __init__(self, category: str, detail: str):
        super().__init__(f"error:{category}:{detail}")
        self.category = category
        self.detail = detail


def _require_file(path_str: str, what: str) -> Path:
    path = Path(path_str)
    if not path.is_file():
        raise CLIError("missing-file", f"{what} not found: {path}")
    return path


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _effective_config(args) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items())
           if k not in ("func",) and v is not None}
    return cfg


def _write_run(out: Path, command: str, args, extra: dict | None = None) -> None:
    payload = {
        "command": command,
        "config": _effective_config(args),
        "version": __version__,
    }
    if extra:
        payload.update(extra)
    write_json(payload, out / "run.json")


def _task_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence((seed, index)).generate_state(1, np.uint64)[0])


def _load_scenes(args) -> list:
    path = _require_file(args.data, "dataset")
    return load_dataset(path)


def _load_model(args):
    path = _require_file(args.ckpt, "checkpoint")
    return load_checkpoint(path)


def _check_dims(model, scenes) -> None:
    if scenes and scenes[0].feature_dim != model.feature_dim:
        raise CLIError(
            "dimension",
            f"checkpoint expects feature_dim {model.feature_dim}, "
            f"dataset has {scenes[0].feature_dim}",
        )


# ---------------------------------------------------------------------------
# gen


def cmd_gen(args) -> int:
    if args.scenario not in SCENARIOS:
        raise CLIError(
            "usage", f"unknown scenario {args.scenario!r}; choose from "
            + ",".join(SCENARIOS))
    out = _out_dir(args)
    kwargs: dict = {}
    if args.scenario == "tv":
        counts = tuple(int(c) for c in args.clutter.split(","))
        kwargs["clutter_counts"] = counts
        kwargs["train_n"] = args.train_n
        kwargs["test_per_level"] = args.test_n
        spec = scenario_spec("tv", counts)
    else:
        kwargs["train_n"] = args.train_n
        kwargs["test_n"] = args.test_n
        spec = scenario_spec(args.scenario)
    scenes, gt = generate(args.scenario, seed=args.seed, **kwargs)
    save_dataset(scenes, out / "dataset.jsonl")
    write_json(gt.to_json(), out / "ground_truth.json")
    write_json(spec.to_json(), out / "scenario.json")
    _write_run(out, "gen", args, {"scenes": len(scenes)})
    print(f"wrote {len(scenes)} scenes to {out / 'dataset.jsonl'}")
    return 0


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    scenes = _load_scenes(args)
    train_scenes, _ = split_scenes(scenes)
    if not train_scenes:
        raise CLIError("empty-data", "empty training split")
    out = _out_dir(args)
    econfig = EnergyConfig(
        gnn_layers=args.gnn_layers, hidden=args.hidden, s_em=args.s_em)
    model = init_model(
        econfig, train_scenes[0].feature_dim, variant=args.variant,
        seed=args.seed, workspace_half_extent=args.workspace)
    neg_steps = tuple(int(t) for t in str(args.negative_steps).split(","))
    tconfig = TrainConfig(
        iterations=args.steps,
        minibatch=args.minibatch,
        k_negatives=args.k_negatives,
        negative_steps=neg_steps if len(neg_steps) > 1 else neg_steps[0],
        learning_rate=args.learning_rate,
        energy_l2=args.energy_l2,
        shared_negatives=args.shared_negatives,
        seed=args.seed,
    )
    result = train(model, train_scenes, tconfig, loss_path=out / "loss.csv")
    save_checkpoint(model, out / "checkpoint.json",
                    meta={"train_scenes": len(train_scenes)})
    _write_run(out, "train", args, {
        "iterations_run": result.iterations_run,
        "diverged": result.diverged,
        "final_loss": float(result.losses[-1]) if len(result.losses) else None,
    })
    print(f"trained {result.iterations_run} iterations; "
          f"checkpoint at {out / 'checkpoint.json'}")
    return 0


# ---------------------------------------------------------------------------
# sample


def cmd_sample(args) -> int:
    model = _load_model(args)
    scenes = _load_scenes(args)
    _check_dims(model, scenes)
    out = _out_dir(args)
    fixed = tuple(s for s in args.fixed.split(",") if s) if args.fixed else ()
    sampled_scenes = []
    energies = {}
    for i, scene in enumerate(scenes):
        graph = build_graph(scene)
        try:
            mask = FixedMask.from_graph(graph, extra_frozen_ids=fixed)
        except KeyError as exc:
            raise CLIError(
                "unknown-object",
                f"--fixed id {exc.args[0]!r} not in scene {scene.scene_id!r}",
            ) from None
        config = LangevinConfig.annealed(
            steps=args.steps, seed=_task_seed(args.seed, i))
        result = langevin_sample(
            model, graph, config, mask=mask, chains=args.restarts)
        _, poses = result.best()
        new_scene = scene
        frozen = mask.as_array()
        for row, o in enumerate(graph.objects):
            if not frozen[row]:
                new_scene = new_scene.with_pose(o.object_id, Pose(*poses[row]))
        sampled_scenes.append(new_scene)
        energies[scene.scene_id] = float(result.energies.min())
    save_dataset(sampled_scenes, out / "samples.jsonl")
    _write_run(out, "sample", args, {"energies": energies})
    print(f"sampled {len(sampled_scenes)} scenes to {out / 'samples.jsonl'}")
    return 0


# ---------------------------------------------------------------------------
# eval


def _load_ground_truth(args) -> GroundTruth:
    path = Path(args.data).parent / "ground_truth.json"
    gt_path = _require_file(str(path), "ground truth")
    with open(gt_path) as fh:
        return GroundTruth.from_json(json.load(fh))


def cmd_eval(args) -> int:
    model = _load_model(args)
    scenes = _load_scenes(args)
    _check_dims(model, scenes)
    gt = _load_ground_truth(args)
    out = _out_dir(args)
    summary: dict = {"scenario": gt.scenario}
    if gt.scenario.startswith("ordering-"):
        res = eval_ordering(model, scenes, gt,
                            restarts=args.restarts or 64,
                            steps=args.steps or 1500, seed=args.seed)
        write_csv(res.csv_rows(), out / "ordering.csv")
        summary["ordering"] = res.to_json()
    elif gt.scenario == "tv":
        test = [s for s in scenes if s.split == "test"]
        res = eval_composition(model, test, budget=args.budget,
                               steps=args.steps or 200, seed=args.seed)
        write_csv(res.csv_rows(), out / "composition.csv")
        summary["composition"] = res.to_json()
        summary["advantage_ratios"] = {
            str(k): v for k, v in advantage_ratios([res]).items()}
    else:
        train_scenes, _ = split_scenes(scenes)
        res = eval_missing(model, scenes, gt, restarts=args.restarts or 16,
                           steps=args.steps or 200, seed=args.seed)
        write_csv(res.csv_rows(), out / "missing_model.csv")
        summary["model"] = res.to_json()
        nn = nn_missing(train_scenes, scenes, gt,
                        half_extent=model.workspace_half_extent)
        write_csv(nn.csv_rows(), out / "missing_nn.csv")
        summary["nearest_neighbor"] = nn.to_json()
        rand = random_missing(scenes, gt, seed=args.seed,
                              half_extent=model.workspace_half_extent)
        write_csv(rand.csv_rows(), out / "missing_random.csv")
        summary["random"] = rand.to_json()
    write_json(summary, out / "summary.json")
    _write_run(out, "eval", args)
    print(f"evaluation summary at {out / 'summary.json'}")
    return 0


# ---------------------------------------------------------------------------
# heatmap


def _heatmap_field(model, graph, row, grid_n):
    half = float(model.workspace_half_extent)
    base = graph.poses()
    if grid_n == 1:
        xs = np.array([base[row, 0]])
        ys = np.array([base[row, 1]])
    else:
        xs = np.linspace(-half, half, grid_n)
        ys = np.linspace(-half, half, grid_n)
    gx, gy = np.meshgrid(xs, ys)  # gy[iy, ix]
    cells = np.tile(base, (grid_n * grid_n, 1, 1))
    cells[:, row, 0] = gx.ravel()
    cells[:, row, 1] = gy.ravel()
    energies = np.empty(len(cells))
    for start in range(0, len(cells), 512):
        chunk = cells[start:start + 512]
        energies[start:start + 512] = np.atleast_1d(
            model.energy(graph, chunk))
    return xs, ys, energies.reshape(grid_n, grid_n)


def _pgm_lines(field: np.ndarray) -> list[str]:
    """Text PGM (P2), min -> white (255), max -> black (0); constant
    fields render all white. Row 0 is the top of the image (largest y)."""
    lo, hi = float(field.min()), float(field.max())
    if hi > lo:
        grey = np.rint(255.0 * (1.0 - (field - lo) / (hi - lo))).astype(int)
    else:
        grey = np.full(field.shape, 255, dtype=int)
    lines = ["P2", f"{field.shape[1]} {field.shape[0]}", "255"]
    for iy in range(field.shape[0] - 1, -1, -1):
        lines.append(" ".join(str(v) for v in grey[iy]))
    return lines


def cmd_heatmap(args) -> int:
    model = _load_model(args)
    scenes = _load_scenes(args)
    _check_dims(model, scenes)
    if args.scene_id:
        matches = [s for s in scenes if s.scene_id == args.scene_id]
        if not matches:
            raise CLIError("unknown-scene", f"scene {args.scene_id!r} not in dataset")
        scene = matches[0]
    else:
        test = [s for s in scenes if s.split == "test"]
        scene = test[0] if test else scenes[0]
    try:
        scene.object_by_id(args.object)
    except KeyError:
        raise CLIError(
            "unknown-object",
            f"object {args.object!r} not in scene {scene.scene_id!r}") from None
    graph = build_graph(scene)
    rows_in_graph = [i for i, o in enumerate(graph.objects)
                     if o.object_id == args.object]
    if not rows_in_graph:
        raise CLIError(
            "unknown-object",
            f"object {args.object!r} is clutter; it has no energy cell")
    row = rows_in_graph[0]
    if args.grid < 1:
        raise CLIError("usage", "--grid must be >= 1")
    out = _out_dir(args)
    xs, ys, field = _heatmap_field(model, graph, row, args.grid)

    rows = [["x", "y", "energy"]]
    for iy, y in enumerate(ys):
        for ix, x in enumerate(xs):
            rows.append([f"{x:.17g}", f"{y:.17g}", f"{field[iy, ix]:.17g}"])
    base = graph.poses()
    current = float(np.atleast_1d(model.energy(graph, base[None]))[0])
    if args.grid > 1:
        # exact cell at the scene's current pose, appended after the grid
        rows.append([f"{base[row, 0]:.17g}", f"{base[row, 1]:.17g}",
                     f"{current:.17g}"])
    write_csv(rows, out / "heatmap.csv")
    (out / "heatmap.pgm").write_text("\n".join(_pgm_lines(field)) + "\n")
    k = int(np.argmin(field))
    _write_run(out, "heatmap", args, {
        "min_energy": float(field.min()),
        "min_x": float(xs[k % args.grid]),
        "min_y": float(ys[k // args.grid]),
        "current_energy": current,
    })
    print(f"heatmap written to {out / 'heatmap.csv'}")
    return 0


# ---------------------------------------------------------------------------
# parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scenefit",
        description="Energy-based object arrangement: generate, train, "
                    "sample, evaluate, visualise.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--config", default=None,
                       help="JSON file of flag defaults (flags override)")

    p = sub.add_parser("gen", help="generate a scenario dataset")
    common(p)
    p.add_argument("--scenario", required=True)
    p.add_argument("--train-n", type=int, default=48)
    p.add_argument("--test-n", type=int, default=16)
    p.add_argument("--clutter", default="2,5,8",
                   help="comma-separated clutter counts (tv scenario)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train an energy model")
    common(p)
    p.add_argument("--data", required=True, help="dataset JSONL")
    p.add_argument("--variant", choices=("relative", "absolute"),
                   default="relative")
    p.add_argument("--steps", type=int, default=1500,
                   help="training iterations")
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--s-em", type=int, default=32)
    p.add_argument("--gnn-layers", type=int, default=3)
    p.add_argument("--minibatch", type=int, default=8)
    p.add_argument("--k-negatives", type=int, default=8)
    p.add_argument("--negative-steps", default="60",
                   help="chain length for training negatives; a comma list "
                        "is cycled across the K negatives")
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--energy-l2", type=float, default=1e-3)
    p.add_argument("--shared-negatives", action="store_true")
    p.add_argument("--workspace", type=float, default=50.0,
                   help="half extent (cm) of the square region poses are "
                        "normalised by and sampler chains start in")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="sample arrangements for every scene")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--restarts", type=int, default=8)
    p.add_argument("--fixed", default="",
                   help="comma-separated object ids to keep frozen")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="run the scenario's experiment")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--steps", type=int, default=None,
                   help="sampler chain length (default depends on scenario)")
    p.add_argument("--restarts", type=int, default=None,
                   help="chains per task (default depends on scenario)")
    p.add_argument("--budget", type=int, default=500)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("heatmap", help="energy field over one object's (x, y)")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--object", required=True)
    p.add_argument("--scene-id", default=None,
                   help="defaults to the first test scene")
    p.add_argument("--grid", type=int, default=64)
    p.set_defaults(func=cmd_heatmap)

    return parser


def _apply_config_file(parser, argv):
    """--config JSON supplies defaults; explicit flags override them."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config", default=None)
    known, _ = probe.parse_known_args(argv)
    if not known.config:
        return parser.parse_args(argv)
    path = _require_file(known.config, "config")
    try:
        with open(path) as fh:
            defaults = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CLIError("schema", f"config is not valid JSON: {exc}") from None
    if not isinstance(defaults, dict):
        raise CLIError("schema", "config must be a JSON object")
    args = parser.parse_args(argv)
    provided = {a.split("=")[0].lstrip("-").replace("-", "_")
                for a in argv if a.startswith("--")}
    for key, value in defaults.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise CLIError("schema", f"config key {key!r} is not a flag")
        if attr not in provided:
            setattr(args, attr, value)
    return args


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = _apply_config_file(parser, argv)
        return args.func(args)
    except CLIError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (DatasetError, CheckpointError) as exc:
        print(f"error:schema:{exc}", file=sys.stderr)
        return 1
    except (TrainingError, SamplingError) as exc:
        print(f"error:numeric:{exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        if "feature" in str(exc) or "dimension" in str(exc):
            print(f"error:dimension:{exc}", file=sys.stderr)
        else:
            print(f"error:usage:{exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
