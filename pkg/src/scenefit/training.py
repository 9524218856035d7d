"""Contrastive training of the energy model.

Each iteration draws a minibatch of training scenes, generates K
negative arrangements per scene by running short annealed Langevin
chains under the *current* model, and minimises the InfoNCE objective

    L = -log( exp(-E(x+)) / (exp(-E(x+)) + sum_j exp(-E(x_j))) )

with Adam. Scenes whose objects are semantically identical (same
classes, sizes, features, and anchor poses, differing only in the
arrangement) can share one negative set per iteration
(``shared_negatives=True``), which cuts the dominant sampling cost by
the minibatch size.

Divergence (non-finite loss, energy, or parameters) aborts training and
restores the parameters from the last finite iteration.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from .diffcore import TapeError
from .energy import EnergyModel
from .sampler import LangevinConfig, SamplingError, langevin_sample
from .scene import Scene, SceneGraph, build_graph

logger = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "TrainResult",
    "TrainingError",
    "infonce_loss",
    "infonce_loss_and_grads",
    "contrastive_loss_and_param_grad",
    "train",
]


class TrainingError(Exception):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters for contrastive training.

    ``negative_steps`` Langevin steps produce each negative; the step
    size anneals geometrically from ``step_hi`` to ``step_lo`` with
    noise sqrt(2*step)*temperature, temperature decaying ``temp_hi`` to
    ``temp_lo``. A tuple of chain lengths is cycled across the K
    negatives (e.g. ``(40, 200)`` alternates short chains, which sharpen
    the basin around the data, with near-converged ones, which reach and
    repair spurious minima far from it).
    """

    iterations: int = 1500
    minibatch: int = 8
    k_negatives: int = 8
    negative_steps: int | tuple[int, ...] = 60
    step_hi: float = 2e-2
    step_lo: float = 2e-4
    temp_hi: float = 1.0
    temp_lo: float = 0.1
    clip_norm: float = 1.0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    energy_l2: float = 1e-3
    seed: int = 0
    shared_negatives: bool = False

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        steps = self.negative_steps
        if isinstance(steps, int):
            steps = (steps,)
        else:
            steps = tuple(int(t) for t in steps)
            object.__setattr__(self, "negative_steps", steps)
        if (
            self.minibatch < 1
            or self.k_negatives < 1
            or not steps
            or min(steps) < 1
        ):
            raise ValueError("minibatch, k_negatives, negative_steps must be >= 1")
        if self.learning_rate < 0 or self.energy_l2 < 0:
            raise ValueError("learning_rate and energy_l2 must be >= 0")

    def negative_lengths(self) -> list[int]:
        """Chain length of each of the K negatives (tuple cycled)."""
        steps = self.negative_steps
        if isinstance(steps, int):
            steps = (steps,)
        return [steps[j % len(steps)] for j in range(self.k_negatives)]

    def negative_schedule(self, seed: int, steps: int | None = None) -> LangevinConfig:
        if steps is None:
            steps = self.negative_steps
            if not isinstance(steps, int):
                steps = steps[0]
        return LangevinConfig.annealed(
            steps=steps,
            step_hi=self.step_hi,
            step_lo=self.step_lo,
            temp_hi=self.temp_hi,
            temp_lo=self.temp_lo,
            seed=seed,
            clip_norm=self.clip_norm,
        )


@dataclass
class TrainResult:
    losses: np.ndarray
    diverged: bool

    @property
    def iterations_run(self) -> int:
        return len(self.losses)


def infonce_loss(e_pos: float, e_negs) -> float:
    """Contrastive loss with the positive's energy against K negatives.

    Numerically stable via logsumexp over [0, e_pos - e_1, ...]; equals
    -log softmax of the negated energies at the positive.
    """
    return infonce_loss_and_grads(e_pos, e_negs)[0]


def infonce_loss_and_grads(e_pos: float, e_negs) -> tuple[float, float, np.ndarray]:
    """Loss plus d(loss)/d(e_pos) and d(loss)/d(e_negs)."""
    e_negs = np.asarray(e_negs, dtype=np.float64).reshape(-1)
    if e_negs.size == 0:
        raise ValueError("need at least one negative energy")
    z = np.concatenate([[0.0], float(e_pos) - e_negs])
    p = softmax(z)
    return float(logsumexp(z)), float(1.0 - p[0]), -p[1:]


def contrastive_loss_and_param_grad(
    model: EnergyModel,
    graph: SceneGraph,
    neg_poses: np.ndarray,
    pos_poses: np.ndarray | None = None,
    energy_l2: float = 0.0,
):
    """InfoNCE loss of the graph's arrangement against given negatives,
    plus its gradient w.r.t. every model parameter (one seeded backward
    pass over the positive and all negatives).

    ``energy_l2`` adds the magnitude penalty
    ``energy_l2 * (E_pos^2 + mean_j E_j^2)``, which pins the absolute
    energy scale the contrastive part is blind to.
    """
    if pos_poses is None:
        pos_poses = graph.poses()
    stack = np.concatenate([pos_poses[None], neg_poses], axis=0)
    energies = model.energy(graph, stack)
    loss, d_pos, d_negs = infonce_loss_and_grads(energies[0], energies[1:])
    k = energies.size - 1
    if energy_l2 > 0.0:
        loss += energy_l2 * (energies[0] ** 2 + np.mean(energies[1:] ** 2))
        d_pos += 2.0 * energy_l2 * energies[0]
        d_negs = d_negs + 2.0 * energy_l2 * energies[1:] / k
    seed = np.concatenate([[d_pos], d_negs])
    _, grads = model.energy_and_param_grad(graph, stack, seed, validate=False)
    return float(loss), grads


class _Adam:
    def __init__(self, params: dict[str, np.ndarray], config: TrainConfig):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0
        self.cfg = config

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * g * g
            p -= c.learning_rate * (self.m[k] / bc1) / (
                np.sqrt(self.v[k] / bc2) + c.eps
            )


def _shared_signature(graph: SceneGraph):
    return tuple(
        (
            o.class_name,
            o.scale,
            o.raw_features,
            o.movable,
            o.symmetry_order,
            None if o.movable else (o.pose.x, o.pose.y, o.pose.theta),
        )
        for o in graph.objects
    )


def train(
    model: EnergyModel,
    scenes: list[Scene],
    config: TrainConfig,
    loss_path=None,
    callback=None,
) -> TrainResult:
    """Train the model in place on the scenes' stored arrangements.

    Writes ``iteration,loss`` CSV rows to ``loss_path`` if given and
    calls ``callback(iteration, loss)`` after each iteration.
    """
    if not scenes:
        raise TrainingError("no training scenes")
    graphs = [build_graph(s) for s in scenes]
    if config.shared_negatives:
        sigs = {_shared_signature(g) for g in graphs}
        if len(sigs) != 1:
            raise TrainingError(
                "shared_negatives requires scenes with identical objects "
                "(classes, sizes, features, anchor poses)"
            )

    rng = np.random.default_rng(config.seed)
    opt = _Adam(model.params, config)
    losses: list[float] = []
    last_good = {k: v.copy() for k, v in model.params.items()}
    diverged = False

    for it in range(config.iterations):
        idx = rng.choice(
            len(graphs),
            size=config.minibatch,
            replace=len(graphs) < config.minibatch,
        )
        try:
            if config.shared_negatives:
                loss, grads = _shared_step(model, graphs, idx, config, rng)
            else:
                loss, grads = _per_scene_step(model, graphs, idx, config, rng)
        except (SamplingError, TapeError) as exc:
            logger.warning("iteration %d diverged (%s); restoring", it, exc)
            diverged = True
            break

        if not np.isfinite(loss) or not all(
            np.isfinite(g).all() for g in grads.values()
        ):
            logger.warning("iteration %d produced non-finite loss; restoring", it)
            diverged = True
            break

        opt.step(model.params, grads)
        if not all(np.isfinite(p).all() for p in model.params.values()):
            logger.warning("iteration %d produced non-finite params; restoring", it)
            diverged = True
            break

        losses.append(loss)
        last_good = {k: v.copy() for k, v in model.params.items()}
        if callback is not None:
            callback(it, loss)

    if diverged:
        model.set_params(last_good)

    if loss_path is not None:
        with open(loss_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "loss"])
            for i, l in enumerate(losses):
                writer.writerow([i, f"{l:.10g}"])

    return TrainResult(losses=np.asarray(losses), diverged=diverged)


def _negatives(model, graph, config: TrainConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    lengths = config.negative_lengths()
    poses, energies = [], []
    for steps in sorted(set(lengths)):
        seed = int(rng.integers(2**62))
        res = langevin_sample(
            model,
            graph,
            config.negative_schedule(seed, steps=steps),
            chains=lengths.count(steps),
        )
        poses.append(res.poses)
        energies.append(res.energies)
    return np.concatenate(poses, axis=0), np.concatenate(energies, axis=0)


def _per_scene_step(model, graphs, idx, config, rng):
    total_loss = 0.0
    total = None
    for s in idx:
        graph = graphs[s]
        neg_poses, _ = _negatives(model, graph, config, rng)
        loss, grads = contrastive_loss_and_param_grad(
            model, graph, neg_poses, energy_l2=config.energy_l2
        )
        total_loss += loss
        if total is None:
            total = grads
        else:
            for k in total:
                total[k] = total[k] + grads[k]
    b = float(len(idx))
    return total_loss / b, {k: v / b for k, v in total.items()}


def _shared_step(model, graphs, idx, config, rng):
    """One update where every minibatch scene reuses the same negatives.

    Valid because the scenes' graphs differ only in movable-object
    poses, so a negative arrangement has the same energy under each.
    """
    graph0 = graphs[idx[0]]
    neg_poses, e_negs = _negatives(model, graph0, config, rng)
    pos_stack = np.stack([graphs[s].poses() for s in idx])
    e_pos = model.energy(graph0, pos_stack)

    total_loss = 0.0
    pos_w = np.empty(len(idx))
    neg_w = np.zeros(config.k_negatives)
    k = config.k_negatives
    for i in range(len(idx)):
        loss, d_pos, d_negs = infonce_loss_and_grads(e_pos[i], e_negs)
        if config.energy_l2 > 0.0:
            loss += config.energy_l2 * (e_pos[i] ** 2 + np.mean(e_negs**2))
            d_pos += 2.0 * config.energy_l2 * e_pos[i]
            d_negs = d_negs + 2.0 * config.energy_l2 * e_negs / k
        total_loss += loss
        pos_w[i] = d_pos
        neg_w += d_negs
    b = float(len(idx))

    stack = np.concatenate([pos_stack, neg_poses], axis=0)
    seed = np.concatenate([pos_w, neg_w]) / b
    _, grads = model.energy_and_param_grad(graph0, stack, seed, validate=False)
    return total_loss / b, grads
