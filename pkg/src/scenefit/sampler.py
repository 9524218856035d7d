"""Annealed Langevin dynamics over object poses.

Starting from uniformly random poses, each step follows the negative
gradient of the learned energy (plus any extra differentiable cost
terms) with additive Gaussian noise folded into the step:

    x_t = x_{t-1} - lambda_t * (grad E + sum_k w_k grad c_k + omega_t),
    omega_t ~ N(0, sigma_t^2)

The final poses are the sample. Updates happen in normalised units:
positions are divided by the model's workspace half-extent and the angle
is divided by pi, so one clip norm and one noise scale are meaningful
across all three coordinates. Frozen objects are never touched, not even
by rounding: their stored poses pass through bit-identical.

Many chains run in one call as a batch; each chain draws from its own
seeded stream, so results do not depend on how a caller chunks a large
batch (pass ``chain_offset`` when splitting).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .scene import SceneGraph, wrap_angle

__all__ = [
    "LangevinConfig",
    "FixedMask",
    "CostTerm",
    "LangevinResult",
    "SamplingError",
    "langevin_sample",
    "compose",
]


class SamplingError(Exception):
    """Raised when a chain produces non-finite values. ``step`` is the
    0-based step at which the failure was detected."""

    def __init__(self, message: str, step: int | None = None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class LangevinConfig:
    """Schedules and seeding for one chain family.

    ``step_sizes`` and ``noise_scales`` must both have length ``steps``;
    step sizes are in normalised pose units.
    """

    steps: int
    step_sizes: np.ndarray
    noise_scales: np.ndarray
    seed: int = 0
    clip_norm: float = 1.0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        lam = np.asarray(self.step_sizes, dtype=np.float64)
        sig = np.asarray(self.noise_scales, dtype=np.float64)
        if lam.shape != (self.steps,) or sig.shape != (self.steps,):
            raise ValueError(
                f"schedules must have shape ({self.steps},), got "
                f"{lam.shape} and {sig.shape}"
            )
        if not (lam > 0).all():
            raise ValueError("step sizes must be positive")
        if not (sig >= 0).all():
            raise ValueError("noise scales must be non-negative")
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")
        object.__setattr__(self, "step_sizes", lam)
        object.__setattr__(self, "noise_scales", sig)

    @staticmethod
    def annealed(
        steps: int = 200,
        step_hi: float = 2e-2,
        step_lo: float = 2e-4,
        temp_hi: float = 1.0,
        temp_lo: float = 0.1,
        seed: int = 0,
        clip_norm: float = 1.0,
    ) -> "LangevinConfig":
        """Geometric step-size decay with noise sigma_t = sqrt(2 lambda_t)
        times a geometrically decaying temperature."""
        lam = np.geomspace(step_hi, step_lo, steps)
        tau = np.geomspace(temp_hi, temp_lo, steps)
        return LangevinConfig(
            steps=steps,
            step_sizes=lam,
            noise_scales=np.sqrt(2.0 * lam) * tau,
            seed=seed,
            clip_norm=clip_norm,
        )


@dataclass(frozen=True)
class FixedMask:
    """Per-object freeze flags; frozen objects keep their stored pose."""

    frozen: tuple[bool, ...]

    @staticmethod
    def from_graph(graph: SceneGraph, extra_frozen_ids: Sequence[str] = ()) -> "FixedMask":
        """Freeze every non-movable object plus any explicitly named ids."""
        extra = set(extra_frozen_ids)
        unknown = extra - {o.object_id for o in graph.objects}
        if unknown:
            raise KeyError(f"unknown object ids: {sorted(unknown)}")
        return FixedMask(
            tuple(
                (not o.movable) or (o.object_id in extra)
                for o in graph.objects
            )
        )

    def as_array(self) -> np.ndarray:
        return np.array(self.frozen, dtype=bool)


@dataclass(frozen=True)
class CostTerm:
    """Differentiable cost added to the energy during sampling.

    ``fn(poses, graph)`` takes poses of shape (B, n, 3) in cm/radians and
    returns ``(values, grads)`` with shapes (B,) and (B, n, 3).
    """

    fn: Callable[[np.ndarray, SceneGraph], tuple[np.ndarray, np.ndarray]]
    weight: float = 1.0
    name: str = "cost"


def compose(terms: Sequence[CostTerm]) -> CostTerm:
    """Weighted sum of cost terms as a single term of weight 1."""
    terms = tuple(terms)

    def fn(poses, graph):
        total_v = np.zeros(poses.shape[0])
        total_g = np.zeros_like(poses)
        for t in terms:
            v, g = t.fn(poses, graph)
            total_v += t.weight * v
            total_g += t.weight * g
        return total_v, total_g

    return CostTerm(fn=fn, weight=1.0, name="+".join(t.name for t in terms) or "empty")


@dataclass
class LangevinResult:
    """Final poses per chain plus per-step traces.

    ``poses``: (chains, n, 3) cm/radians, theta wrapped to (-pi, pi].
    ``energies``: learned energy at the final poses, (chains,).
    ``energy_trace``: learned energy before each step, (steps, chains).
    ``objective_trace``: energy plus weighted costs, (steps, chains).
    """

    poses: np.ndarray
    energies: np.ndarray
    energy_trace: np.ndarray
    objective_trace: np.ndarray

    def best(self) -> tuple[int, np.ndarray]:
        """Index and poses of the lowest-energy chain."""
        k = int(np.argmin(self.energies))
        return k, self.poses[k]


def langevin_sample(
    model,
    graph: SceneGraph,
    config: LangevinConfig,
    mask: FixedMask | None = None,
    cost_terms: Sequence[CostTerm] = (),
    chains: int = 1,
    chain_offset: int = 0,
) -> LangevinResult:
    """Run ``chains`` annealed Langevin chains over the unfrozen poses.

    ``model`` needs ``workspace_half_extent`` and
    ``energy_and_pose_grad(graph, poses, validate=False)`` handling a
    batched pose array. Raises :class:`SamplingError` with the step index
    if a gradient or energy goes non-finite.
    """
    if chains < 1:
        raise ValueError("chains must be >= 1")
    if mask is None:
        mask = FixedMask.from_graph(graph)
    frozen = mask.as_array()
    if frozen.shape != (graph.n,):
        raise ValueError(f"mask length {frozen.shape} != {graph.n} objects")
    if frozen.all():
        raise ValueError("every object is frozen; nothing to sample")
    free = ~frozen

    half = float(model.workspace_half_extent)
    unit = np.array([half, half, math.pi])
    base = graph.poses()

    streams = [
        np.random.default_rng(s)
        for s in np.random.SeedSequence(config.seed).spawn(chain_offset + chains)[
            chain_offset:
        ]
    ]

    poses = np.repeat(base[None], chains, axis=0)
    for c, rng in enumerate(streams):
        draw = np.empty((graph.n, 3))
        draw[:, 0] = rng.uniform(-half, half, size=graph.n)
        draw[:, 1] = rng.uniform(-half, half, size=graph.n)
        draw[:, 2] = -rng.uniform(-math.pi, math.pi, size=graph.n)
        poses[c, free] = draw[free]

    energy_trace = np.empty((config.steps, chains))
    objective_trace = np.empty((config.steps, chains))

    for t in range(config.steps):
        e_val, e_grad = model.energy_and_pose_grad(graph, poses, validate=False)
        total_grad = e_grad.copy()
        objective = e_val.copy()
        for term in cost_terms:
            c_val, c_grad = term.fn(poses, graph)
            objective += term.weight * c_val
            total_grad += term.weight * c_grad
        if not np.isfinite(e_val).all():
            raise SamplingError("non-finite energy", t)

        g_norm = total_grad * unit  # gradient in normalised coordinates
        norms = np.linalg.norm(g_norm, axis=-1, keepdims=True)
        over = norms > config.clip_norm
        g_norm = np.where(over, g_norm * (config.clip_norm / np.maximum(norms, 1e-300)), g_norm)
        if not np.isfinite(g_norm).all():
            raise SamplingError("non-finite gradient after clipping", t)

        sigma = config.noise_scales[t]
        noise = np.stack(
            [rng.standard_normal((graph.n, 3)) for rng in streams]
        ) * sigma
        step = -config.step_sizes[t] * unit * (g_norm + noise)
        poses[:, free] += step[:, free]

        energy_trace[t] = e_val
        objective_trace[t] = objective

    final_energy = model.energy(graph, poses)
    if not np.isfinite(final_energy).all():
        raise SamplingError("non-finite final energy", config.steps - 1)
    out = poses.copy()
    for c in range(chains):
        for i in range(graph.n):
            if free[i]:
                out[c, i, 2] = wrap_angle(out[c, i, 2])
    return LangevinResult(
        poses=out,
        energies=np.asarray(final_energy, dtype=np.float64).reshape(chains),
        energy_trace=energy_trace,
        objective_trace=objective_trace,
    )
